#include "camadapt/brand_filter.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "camadapt/error.hpp"

namespace camadapt {

bool BrandFilterParams::is_identity() const {
  return channel_gains == std::array<double, 3>{1.0, 1.0, 1.0} && gamma == 1.0 &&
         blur_sigma == 0.0 && sharpen_amount == 0.0 && vignette_strength == 0.0 &&
         noise_std == 0.0;
}

void BrandFilterParams::validate() const {
  for (double g : channel_gains) {
    if (!(g > 0.0)) fail(ErrorKind::kConfig, "channel gains must be > 0");
  }
  if (!(gamma > 0.0)) fail(ErrorKind::kConfig, "gamma must be > 0");
  if (!(blur_sigma >= 0.0)) fail(ErrorKind::kConfig, "blur_sigma must be >= 0");
  if (!(sharpen_amount >= 0.0)) fail(ErrorKind::kConfig, "sharpen_amount must be >= 0");
  if (!(vignette_strength >= 0.0 && vignette_strength <= 1.0)) {
    fail(ErrorKind::kConfig, "vignette_strength must lie in [0, 1]");
  }
  if (!(noise_std >= 0.0)) fail(ErrorKind::kConfig, "noise_std must be >= 0");
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& k : kernel) k /= total;

  Image tmp(image.height, image.width), out(image.height, image.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, image.width - 1);
          acc += kernel[i + radius] * image.at(c, y, xx);
        }
        tmp.at(c, y, x) = acc;
      }
    }
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, image.height - 1);
          acc += kernel[i + radius] * tmp.at(c, yy, x);
        }
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

Image apply_brand_filter(const Image& image, const BrandFilterParams& params) {
  params.validate();
  if (params.is_identity()) return image;
  Image out = image;
  const std::size_t plane = out.plane();
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      double& v = out.data[c * plane + i];
      v *= params.channel_gains[c];
      if (params.gamma != 1.0) v = std::pow(std::max(v, 0.0), params.gamma);
    }
  }
  if (params.blur_sigma > 0.0) out = gaussian_blur(out, params.blur_sigma);
  if (params.sharpen_amount > 0.0) {
    const Image soft = gaussian_blur(out, kSharpenSigma);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      out.data[i] += params.sharpen_amount * (out.data[i] - soft.data[i]);
    }
  }
  if (params.vignette_strength > 0.0) {
    const double cy = 0.5 * (out.height - 1), cx = 0.5 * (out.width - 1);
    const double rmax2 = cy * cy + cx * cx;
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        const double r2 = rmax2 > 0 ? ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / rmax2 : 0.0;
        const double factor = 1.0 - params.vignette_strength * r2;
        for (int c = 0; c < 3; ++c) out.at(c, y, x) *= factor;
      }
    }
  }
  if (params.noise_std > 0.0) {
    std::mt19937_64 rng(params.seed);
    std::normal_distribution<double> noise(0.0, params.noise_std);
    for (double& v : out.data) v += noise(rng);
  }
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void to_json(nlohmann::json& j, const BrandFilterParams& p) {
  j = nlohmann::json{{"channel_gains", p.channel_gains},
                     {"gamma", p.gamma},
                     {"blur_sigma", p.blur_sigma},
                     {"sharpen_amount", p.sharpen_amount},
                     {"vignette_strength", p.vignette_strength},
                     {"noise_std", p.noise_std},
                     {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, BrandFilterParams& p) {
  static const char* kKnown[] = {"channel_gains",     "gamma",     "blur_sigma", "sharpen_amount",
                                 "vignette_strength", "noise_std", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(std::begin(kKnown), std::end(kKnown),
                     [&](const char* k) { return it.key() == k; }) == std::end(kKnown)) {
      fail(ErrorKind::kConfig, "unknown filter parameter '" + it.key() + "'");
    }
  }
  p = BrandFilterParams{};
  if (j.contains("channel_gains")) p.channel_gains = j.at("channel_gains").get<std::array<double, 3>>();
  p.gamma = j.value("gamma", 1.0);
  p.blur_sigma = j.value("blur_sigma", 0.0);
  p.sharpen_amount = j.value("sharpen_amount", 0.0);
  p.vignette_strength = j.value("vignette_strength", 0.0);
  p.noise_std = j.value("noise_std", 0.0);
  p.seed = j.value("seed", std::uint64_t{0});
  p.validate();
}

FilterBank parse_filter_bank(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::kConfig, "filter bank must be an object of brand -> params");
  FilterBank bank;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key().empty()) fail(ErrorKind::kConfig, "empty brand name in filter bank");
    bank[it.key()] = it.value().get<BrandFilterParams>();
  }
  return bank;
}

nlohmann::json filter_bank_to_json(const FilterBank& bank) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [brand, params] : bank) j[brand] = params;
  return j;
}

}  // namespace camadapt
