#include "camadapt/features.hpp"

#include <cmath>
#include <fstream>

#include "camadapt/error.hpp"
#include "camadapt/ops.hpp"

namespace camadapt {
namespace {

constexpr int kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};

void check_bins(int bins) {
  if (bins < 2) fail(ErrorKind::kInvalidArgument, "histogram bins must be >= 2");
}

double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

std::array<double, 3> hard_mi_planar(const double* img, std::size_t plane, int bins) {
  std::array<double, 3> out{};
  std::vector<double> joint(static_cast<std::size_t>(bins) * bins);
  std::vector<double> pu(bins), pv(bins);
  const double inv = 1.0 / static_cast<double>(plane);
  for (int pr = 0; pr < 3; ++pr) {
    std::fill(joint.begin(), joint.end(), 0.0);
    const double* u = img + kPairs[pr][0] * plane;
    const double* v = img + kPairs[pr][1] * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      joint[static_cast<std::size_t>(hard_bin(u[i], bins)) * bins + hard_bin(v[i], bins)] += inv;
    }
    std::fill(pu.begin(), pu.end(), 0.0);
    std::fill(pv.begin(), pv.end(), 0.0);
    double hj = 0.0;
    for (int a = 0; a < bins; ++a) {
      for (int b = 0; b < bins; ++b) {
        const double p = joint[static_cast<std::size_t>(a) * bins + b];
        pu[a] += p;
        pv[b] += p;
        hj += plogp(p);
      }
    }
    double hu = 0.0, hv = 0.0;
    for (int a = 0; a < bins; ++a) {
      hu += plogp(pu[a]);
      hv += plogp(pv[a]);
    }
    out[pr] = std::max(0.0, hj - hu - hv);
  }
  return out;
}

void hard_hist_planar(const double* img, std::size_t plane, int bins, double* out) {
  const double inv = 1.0 / static_cast<double>(plane);
  for (int c = 0; c < 3; ++c) {
    double* h = out + c * bins;
    std::fill(h, h + bins, 0.0);
    const double* src = img + c * plane;
    for (std::size_t i = 0; i < plane; ++i) h[hard_bin(src[i], bins)] += inv;
  }
}

}  // namespace

std::vector<double> CameraFeatureVector::flatten() const {
  std::vector<double> out(mi.begin(), mi.end());
  out.insert(out.end(), hist.begin(), hist.end());
  out.insert(out.end(), deep.begin(), deep.end());
  return out;
}

std::array<double, 3> channel_mutual_information(const Image& image, int bins) {
  check_bins(bins);
  return hard_mi_planar(image.data.data(), image.plane(), bins);
}

double channel_entropy(const Image& image, int channel, int bins) {
  check_bins(bins);
  std::vector<double> h(bins, 0.0);
  const double inv = 1.0 / static_cast<double>(image.plane());
  for (std::size_t i = 0; i < image.plane(); ++i) {
    h[hard_bin(image.data[channel * image.plane() + i], bins)] += inv;
  }
  double H = 0.0;
  for (double p : h) H -= plogp(p);
  return H;
}

std::vector<double> normalized_color_histogram(const Image& image, int bins) {
  check_bins(bins);
  std::vector<double> out(3 * static_cast<std::size_t>(bins));
  hard_hist_planar(image.data.data(), image.plane(), bins, out.data());
  return out;
}

std::vector<double> soft_color_histogram(const Image& image, int bins) {
  NoGradGuard no_grad;
  const Var h = ops::soft_histogram(constant(to_tensor(image)), bins);
  return h.value().storage();
}

std::array<double, 3> soft_channel_mutual_information(const Image& image, int bins) {
  NoGradGuard no_grad;
  const Var mi = ops::soft_channel_mutual_information(constant(to_tensor(image)), bins);
  return {mi.value()[0], mi.value()[1], mi.value()[2]};
}

std::vector<double> deep_features(const Classifier& classifier, const Image& image) {
  NoGradGuard no_grad;
  return classifier.forward(constant(to_tensor(image))).features.value().storage();
}

CameraFeatureVector camera_feature(const Image& image, const Classifier& classifier,
                                   FeatureMode mode, int bins) {
  CameraFeatureVector f;
  if (mode == FeatureMode::kHard) {
    f.mi = channel_mutual_information(image, bins);
    f.hist = normalized_color_histogram(image, bins);
  } else {
    f.mi = soft_channel_mutual_information(image, bins);
    f.hist = soft_color_histogram(image, bins);
  }
  f.deep = deep_features(classifier, image);
  return f;
}

FeatureStats FeatureStats::compute(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) fail(ErrorKind::kInvalidArgument, "feature statistics need at least one row");
  const std::size_t width = rows.front().size();
  FeatureStats s;
  s.mean.assign(width, 0.0);
  s.std.assign(width, 0.0);
  for (const auto& r : rows) {
    if (r.size() != width) fail(ErrorKind::kInvalidArgument, "ragged feature rows");
    for (std::size_t j = 0; j < width; ++j) s.mean[j] += r[j];
  }
  for (double& m : s.mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < width; ++j) s.std[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
  }
  for (double& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(rows.size())), kStdFloor);
  return s;
}

std::vector<double> FeatureStats::standardize(const std::vector<double>& raw) const {
  if (raw.size() != width()) {
    fail(ErrorKind::kInvalidArgument, "feature width " + std::to_string(raw.size()) +
                                          " does not match statistics width " + std::to_string(width()));
  }
  std::vector<double> out(raw.size());
  for (std::size_t j = 0; j < raw.size(); ++j) out[j] = (raw[j] - mean[j]) / std[j];
  return out;
}

Tensor hard_color_features(const Tensor& images, int bins) {
  check_bins(bins);
  if (images.rank() != 4 || images.dim(1) != 3) {
    fail(ErrorKind::kInvalidArgument, "hard_color_features expects [N,3,H,W]");
  }
  const int n = images.dim(0);
  const std::size_t plane = static_cast<std::size_t>(images.dim(2)) * images.dim(3);
  const int width = 3 + 3 * bins;
  Tensor out({n, width});
  for (int s = 0; s < n; ++s) {
    const double* img = images.data() + static_cast<std::size_t>(s) * 3 * plane;
    double* row = out.data() + static_cast<std::size_t>(s) * width;
    const auto mi = hard_mi_planar(img, plane, bins);
    std::copy(mi.begin(), mi.end(), row);
    hard_hist_planar(img, plane, bins, row + 3);
  }
  return out;
}

Var soft_color_features(const Var& images, int bins) {
  return ops::concat_columns({ops::soft_channel_mutual_information(images, bins),
                              ops::soft_histogram(images, bins)});
}

Var camera_features(const Var& images, const Classifier& classifier, FeatureMode mode,
                    const FeatureStats& stats, int bins) {
  Var color = mode == FeatureMode::kSoft ? soft_color_features(images, bins)
                                         : constant(hard_color_features(images.value(), bins));
  Var deep = classifier.forward(images).features;
  return ops::standardize_columns(ops::concat_columns({color, deep}), stats.mean, stats.std);
}

void write_feature_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::vector<double>>>& rows,
                       int bins) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.precision(17);
  out << "image_id,mi_rg,mi_rb,mi_gb";
  const char* names = "rgb";
  for (int c = 0; c < 3; ++c) {
    for (int b = 0; b < bins; ++b) out << ",hist_" << names[c] << b;
  }
  const std::size_t deep = rows.empty() ? 0 : rows.front().second.size() - 3 - 3 * bins;
  for (std::size_t k = 0; k < deep; ++k) out << ",deep" << k;
  out << '\n';
  for (const auto& [id, values] : rows) {
    out << id;
    for (double v : values) out << ',' << v;
    out << '\n';
  }
}

}  // namespace camadapt
