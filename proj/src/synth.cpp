#include "camadapt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "camadapt/error.hpp"
#include "camadapt/seed.hpp"

namespace camadapt {
namespace {

using Rgb = std::array<double, 3>;

// Blends `color` into the pixel with the given opacity.
void blend(Image& img, int y, int x, const Rgb& color, double alpha) {
  for (int c = 0; c < 3; ++c) img.at(c, y, x) = img.at(c, y, x) * (1 - alpha) + color[c] * alpha;
}

// Soft-edged disc; returns the number of pixels with opacity above 0.5.
int paint_blob(Image& img, const std::vector<unsigned char>& fov, double cy, double cx,
               double radius, const Rgb& color, double strength,
               std::vector<unsigned char>* lesion_mask) {
  int painted = 0;
  const int r = static_cast<int>(std::ceil(radius + 1.5));
  for (int y = static_cast<int>(cy) - r; y <= static_cast<int>(cy) + r; ++y) {
    for (int x = static_cast<int>(cx) - r; x <= static_cast<int>(cx) + r; ++x) {
      if (y < 0 || x < 0 || y >= img.height || x >= img.width) continue;
      if (!fov[static_cast<std::size_t>(y) * img.width + x]) continue;
      const double d = std::hypot(y - cy, x - cx);
      const double alpha = strength * std::clamp(radius + 0.5 - d, 0.0, 1.0);
      if (alpha <= 0.0) continue;
      blend(img, y, x, color, alpha);
      if (alpha > 0.5) {
        auto& m = (*lesion_mask)[static_cast<std::size_t>(y) * img.width + x];
        if (!m) {
          m = 1;
          ++painted;
        }
      }
    }
  }
  return painted;
}

}  // namespace

int grade_from_lesions(int n_dark, int n_bright) {
  int g = 0;
  while (g < 4 && n_dark >= 2 * (g + 1) && n_bright >= g + 1) ++g;
  return g;
}

std::pair<Image, SynthLabel> generate_synthetic_fundus(std::uint64_t seed, int grade, int size) {
  if (grade < 0 || grade > 4) {
    fail(ErrorKind::kInvalidArgument, "synthetic grade must lie in [0, 4], got " + std::to_string(grade));
  }
  if (size < 16) fail(ErrorKind::kInvalidArgument, "synthetic image size must be >= 16");
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(grade) + 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double s = size / 64.0;

  Image img(size, size, 0.0);
  std::vector<unsigned char> fov(static_cast<std::size_t>(size) * size, 0);
  const double cy = 0.5 * (size - 1) + gauss(rng) * 0.5 * s;
  const double cx = 0.5 * (size - 1) + gauss(rng) * 0.5 * s;
  const double radius = 0.46 * size;
  const Rgb base{0.74 + 0.04 * gauss(rng), 0.36 + 0.03 * gauss(rng), 0.16 + 0.02 * gauss(rng)};

  // Optic disc on a random side, macula opposite.
  const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
  const double disc_y = cy + gauss(rng) * 2.0 * s;
  const double disc_x = cx + side * 0.27 * size;
  const double mac_y = cy + gauss(rng) * 1.5 * s;
  const double mac_x = cx - side * 0.18 * size;

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double r = std::hypot(y - cy, x - cx) / radius;
      if (r > 1.0) continue;
      fov[static_cast<std::size_t>(y) * size + x] = 1;
      const double shade = 1.0 - 0.35 * r * r;
      const double mac = 1.0 - 0.25 * std::exp(-std::pow(std::hypot(y - mac_y, x - mac_x) / (4.0 * s), 2));
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = base[c] * shade * mac;
      const double dd = std::hypot(y - disc_y, x - disc_x) / (4.5 * s);
      if (dd < 2.0) blend(img, y, x, {0.97, 0.82, 0.55}, std::exp(-dd * dd));
    }
  }

  // Vessels: random-walk curves leaving the optic disc.
  const int n_vessels = 6 + static_cast<int>(unit(rng) * 3);
  for (int v = 0; v < n_vessels; ++v) {
    double angle = 2.0 * std::numbers::pi * (v + unit(rng) * 0.6) / n_vessels;
    double py = disc_y, px = disc_x;
    const double width = (0.7 + 0.5 * unit(rng)) * s;
    const int steps = static_cast<int>((28 + 14 * unit(rng)) * s);
    for (int t = 0; t < steps; ++t) {
      angle += 0.18 * gauss(rng);
      py += std::sin(angle) * 0.9;
      px += std::cos(angle) * 0.9;
      const int r = static_cast<int>(std::ceil(width + 1));
      for (int y = static_cast<int>(py) - r; y <= static_cast<int>(py) + r; ++y) {
        for (int x = static_cast<int>(px) - r; x <= static_cast<int>(px) + r; ++x) {
          if (y < 0 || x < 0 || y >= size || x >= size) continue;
          if (!fov[static_cast<std::size_t>(y) * size + x]) continue;
          const double d = std::hypot(y - py, x - px) / width;
          if (d < 1.5) blend(img, y, x, {0.50, 0.12, 0.08}, 0.22 * std::exp(-d * d));
        }
      }
    }
  }

  SynthLabel label;
  if (grade > 0) {
    do {
      label.n_dark = 2 * grade + static_cast<int>(unit(rng) * 3);
      label.n_bright = grade + static_cast<int>(unit(rng) * 2);
    } while (grade_from_lesions(label.n_dark, label.n_bright) != grade);
  }
  label.grade = grade;

  std::vector<unsigned char> lesion_mask(fov.size(), 0);
  auto random_spot = [&](double& y, double& x) {
    for (;;) {
      const double rr = 0.78 * radius * std::sqrt(unit(rng));
      const double th = 2.0 * std::numbers::pi * unit(rng);
      y = cy + rr * std::sin(th);
      x = cx + rr * std::cos(th);
      if (std::hypot(y - disc_y, x - disc_x) > 7.0 * s) return;
    }
  };
  const double severity = 1.0 + 0.12 * grade;
  for (int i = 0; i < label.n_dark; ++i) {
    double y, x;
    random_spot(y, x);
    const double r = (1.3 + 0.9 * unit(rng)) * s * severity;
    label.lesion_pixels +=
        paint_blob(img, fov, y, x, r, {0.30, 0.05, 0.04}, 0.9, &lesion_mask);
  }
  for (int i = 0; i < label.n_bright; ++i) {
    double y, x;
    random_spot(y, x);
    const double r = (0.9 + 0.7 * unit(rng)) * s * severity;
    label.lesion_pixels +=
        paint_blob(img, fov, y, x, r, {0.98, 0.90, 0.42}, 0.95, &lesion_mask);
  }

  // Fine sensor-like texture inside the field of view.
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (!fov[static_cast<std::size_t>(y) * size + x]) continue;
      const double t = 0.012 * gauss(rng);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(img.at(c, y, x) + t, 0.0, 1.0);
    }
  }
  return {std::move(img), label};
}

SynthConfig parse_synth_config(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::kConfig, "synth config must be a JSON object");
  SynthConfig c;
  c.image_size = j.value("image_size", 64);
  c.seed = j.value("seed", std::uint64_t{0});
  c.task = parse_task(j.value("task", std::string("binary")));
  if (!j.contains("source")) fail(ErrorKind::kConfig, "synth config needs a 'source' brand");
  c.source = j.at("source").get<std::string>();
  if (j.contains("train_per_grade")) c.train_per_grade = j.at("train_per_grade").get<std::vector<int>>();
  if (j.contains("test_per_grade")) c.test_per_grade = j.at("test_per_grade").get<std::vector<int>>();
  if (!j.contains("brands")) fail(ErrorKind::kConfig, "synth config needs a 'brands' object");
  c.filters = parse_filter_bank(j.at("brands"));
  if (c.image_size < 16 || c.image_size % 16 != 0) {
    fail(ErrorKind::kConfig, "image_size must be a positive multiple of 16");
  }
  if (c.train_per_grade.size() != 5 || c.test_per_grade.size() != 5) {
    fail(ErrorKind::kConfig, "train_per_grade and test_per_grade need 5 entries (grades 0-4)");
  }
  for (int n : c.train_per_grade) {
    if (n < 0) fail(ErrorKind::kConfig, "negative image count");
  }
  for (int n : c.test_per_grade) {
    if (n < 0) fail(ErrorKind::kConfig, "negative image count");
  }
  if (c.filters.size() < 2) fail(ErrorKind::kConfig, "synthetic datasets need at least 2 brands");
  if (!c.filters.count(c.source)) fail(ErrorKind::kConfig, "source brand '" + c.source + "' has no filter");
  return c;
}

nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"image_size", c.image_size},
          {"seed", c.seed},
          {"task", to_string(c.task)},
          {"source", c.source},
          {"train_per_grade", c.train_per_grade},
          {"test_per_grade", c.test_per_grade},
          {"brands", filter_bank_to_json(c.filters)}};
}

SynthConfig default_benchmark_config(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.task = Task::kBinary;
  c.source = "A";
  c.filters["A"] = BrandFilterParams{};
  BrandFilterParams warm;
  warm.channel_gains = {1.3, 0.8, 0.5};
  warm.seed = 11;
  c.filters["B"] = warm;
  BrandFilterParams cool;
  cool.channel_gains = {0.9, 0.55, 1.1};
  cool.seed = 12;
  c.filters["C"] = cool;
  BrandFilterParams blur;
  blur.blur_sigma = 2.0;
  blur.seed = 13;
  c.filters["D"] = blur;
  BrandFilterParams vignette;
  vignette.vignette_strength = 0.7;
  vignette.noise_std = 0.12;
  vignette.seed = 14;
  c.filters["E"] = vignette;
  return c;
}

Manifest build_synth_dataset(const SynthConfig& config, const std::filesystem::path& out_dir) {
  if (config.filters.size() < 2) fail(ErrorKind::kConfig, "synthetic datasets need at least 2 brands");
  if (!config.filters.count(config.source)) {
    fail(ErrorKind::kConfig, "source brand '" + config.source + "' has no filter");
  }
  std::vector<ImageRecord> records;
  std::uint64_t index = 0;
  for (Split split : {Split::kTrain, Split::kTest}) {
    const auto& counts = split == Split::kTrain ? config.train_per_grade : config.test_per_grade;
    for (int grade = 0; grade < 5; ++grade) {
      for (int k = 0; k < counts[grade]; ++k, ++index) {
        const std::uint64_t image_seed = mix_seed(config.seed, index);
        const auto [base, label] = generate_synthetic_fundus(image_seed, grade, config.image_size);
        const int stored = config.task == Task::kBinary ? referable_label(grade) : grade;
        char id[32];
        std::snprintf(id, sizeof id, "%s%05llu", split == Split::kTrain ? "tr" : "te",
                      static_cast<unsigned long long>(index));
        for (const auto& [brand, filter] : config.filters) {
          BrandFilterParams params = filter;
          params.seed = mix_seed(filter.seed, index);
          const Image shot = apply_brand_filter(base, params);
          const auto rel = std::filesystem::path("images") / brand / to_string(split) /
                           (brand + "_" + id + ".png");
          write_png(out_dir / rel, shot);
          records.emplace_back(brand + "_" + id, out_dir / rel, stored, brand, split);
        }
      }
    }
  }
  std::set<DomainId> brands;
  for (const auto& [b, _] : config.filters) brands.insert(b);
  Manifest manifest(config.task, std::move(records), brands);
  save_manifest(out_dir / "manifest.csv", manifest);
  return manifest;
}

}  // namespace camadapt
