#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <utility>
#include <vector>

#include "camadapt/brand_filter.hpp"
#include "json.hpp"
#include "camadapt/image.hpp"
#include "camadapt/manifest.hpp"

namespace camadapt {

struct SynthLabel {
  int grade = 0;
  int n_dark = 0;    // hemorrhage-like blobs
  int n_bright = 0;  // exudate-like blobs
  int lesion_pixels = 0;
};

// Largest g <= 4 with n_dark >= 2g and n_bright >= g.
int grade_from_lesions(int n_dark, int n_bright);

// Deterministic in (seed, grade, size). Grade g >= 1 draws
// n_dark in [2g, 2g+2] and n_bright in [g, g+1] (the single pair that would
// derive grade g+1 is redrawn); grade 0 has no lesions.
std::pair<Image, SynthLabel> generate_synthetic_fundus(std::uint64_t seed, int grade,
                                                       int size = 64);

struct SynthConfig {
  int image_size = 64;
  std::uint64_t seed = 0;
  Task task = Task::kBinary;
  DomainId source;
  std::vector<int> train_per_grade{100, 50, 50, 50, 50};
  std::vector<int> test_per_grade{67, 33, 34, 33, 33};
  FilterBank filters;
};

SynthConfig parse_synth_config(const nlohmann::json& j);
nlohmann::json synth_config_to_json(const SynthConfig& config);

// Library default: identity source plus warm, cool, blur and
// vignette+noise targets, 150/100 images per class per brand (binary task).
SynthConfig default_benchmark_config(std::uint64_t seed = 2020);

// Generates each base image once and writes one filtered copy per brand to
// out_dir/images/<brand>/<split>/<id>.png, then writes out_dir/manifest.csv.
Manifest build_synth_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace camadapt
