#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "camadapt/error.hpp"
#include "camadapt/image.hpp"
#include "camadapt/models.hpp"

namespace camadapt {

inline constexpr int kDefaultBins = 16;

enum class FeatureMode { kHard, kSoft };

// f(x) = [channel MI (R-G, R-B, G-B) | per-channel histograms | deep features].
struct CameraFeatureVector {
  std::array<double, 3> mi{};
  std::vector<double> hist;  // 3 x bins, channel-major
  std::vector<double> deep;

  std::vector<double> flatten() const;
  std::size_t size() const { return 3 + hist.size() + deep.size(); }
};

inline int camera_feature_width(int bins, int deep_dim) { return 3 + 3 * bins + deep_dim; }

// Hard bin index: bin i covers [i/B, (i+1)/B), the last bin is closed.
inline int hard_bin(double value, int bins) {
  if (!std::isfinite(value)) fail(ErrorKind::kNumerical, "histogram input is not finite");
  const int b = static_cast<int>(value * bins);
  return b < 0 ? 0 : (b >= bins ? bins - 1 : b);
}

// Plug-in MI of the hard-binned joint histogram, in nats (0 log 0 := 0).
std::array<double, 3> channel_mutual_information(const Image& image, int bins = kDefaultBins);
// Marginal entropy (nats) of one hard-binned channel.
double channel_entropy(const Image& image, int channel, int bins = kDefaultBins);

std::vector<double> normalized_color_histogram(const Image& image, int bins = kDefaultBins);
std::vector<double> soft_color_histogram(const Image& image, int bins = kDefaultBins);
std::array<double, 3> soft_channel_mutual_information(const Image& image, int bins = kDefaultBins);

// Pooled penultimate activations; never modifies the classifier.
std::vector<double> deep_features(const Classifier& classifier, const Image& image);

CameraFeatureVector camera_feature(const Image& image, const Classifier& classifier,
                                   FeatureMode mode, int bins = kDefaultBins);

// Per-dimension standardisation statistics, frozen after computation.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> std;

  static constexpr double kStdFloor = 1e-6;
  // Two-pass mean / population standard deviation with the floor applied.
  static FeatureStats compute(const std::vector<std::vector<double>>& rows);

  std::vector<double> standardize(const std::vector<double>& raw) const;
  std::size_t width() const { return mean.size(); }
};

// Hard MI + hard histograms for a batch tensor [N,3,H,W] -> [N, 3 + 3B].
Tensor hard_color_features(const Tensor& images, int bins);
// Differentiable counterpart built from soft binning.
Var soft_color_features(const Var& images, int bins);

// Standardised camera features for a batch. Soft mode is differentiable with
// respect to the images; the classifier must be frozen.
Var camera_features(const Var& images, const Classifier& classifier, FeatureMode mode,
                    const FeatureStats& stats, int bins = kDefaultBins);

// Rows "image_id,v0,v1,..." with a header naming each dimension.
void write_feature_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::vector<double>>>& rows,
                       int bins);

}  // namespace camadapt
