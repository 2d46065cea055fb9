#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "camadapt/image.hpp"

namespace camadapt {

using DomainId = std::string;

// Parametric camera transform used to fabricate brand domains. The identity
// filter is the default-constructed value.
struct BrandFilterParams {
  std::array<double, 3> channel_gains{1.0, 1.0, 1.0};
  double gamma = 1.0;
  double blur_sigma = 0.0;
  double sharpen_amount = 0.0;
  double vignette_strength = 0.0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  bool is_identity() const;
  void validate() const;
};

// Sigma of the blur inside the unsharp mask.
inline constexpr double kSharpenSigma = 1.0;

// Applies gain, gamma, Gaussian blur, unsharp masking, radial vignette and
// seeded Gaussian noise in that order, then clamps to [0, 1].
Image apply_brand_filter(const Image& image, const BrandFilterParams& params);

// Separable Gaussian blur truncated at ceil(4 sigma) with replicated borders.
Image gaussian_blur(const Image& image, double sigma);

using FilterBank = std::map<DomainId, BrandFilterParams>;

void to_json(nlohmann::json& j, const BrandFilterParams& p);
void from_json(const nlohmann::json& j, BrandFilterParams& p);

FilterBank parse_filter_bank(const nlohmann::json& j);
nlohmann::json filter_bank_to_json(const FilterBank& bank);

}  // namespace camadapt
