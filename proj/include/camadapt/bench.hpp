#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "camadapt/metrics.hpp"
#include "camadapt/synth.hpp"
#include "camadapt/training.hpp"
#include "json.hpp"

namespace camadapt {

std::string code_version();

// Either a synthetic benchmark (generated under out_dir/data) or an existing
// manifest on disk.
struct DatasetSpec {
  std::optional<SynthConfig> synth;
  std::filesystem::path manifest;
  Task task = Task::kBinary;
};

struct ExperimentSpec {
  DatasetSpec dataset;
  DomainId source;
  std::vector<DomainId> targets;
  TrainConfig classifier = default_classifier_config();
  TrainConfig adaptation;
  std::filesystem::path out_dir;
  std::uint64_t seed = 2020;

  // Structural checks that need no data: source not a target, consistent
  // image sizes, synthetic brands covering source and targets.
  void validate() const;
};

// Adaptation settings sized for the CPU benchmark (narrow generator, short
// fixed epoch budget).
TrainConfig default_benchmark_adaptation_config();

// The default synthetic benchmark: identity source A, targets B-E.
ExperimentSpec default_experiment_spec(const std::filesystem::path& out_dir, std::uint64_t seed = 2020);

nlohmann::json experiment_spec_to_json(const ExperimentSpec& spec);
// Relative manifest paths resolve against base_dir. Unknown keys are rejected.
ExperimentSpec parse_experiment_spec(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

// FNV-1a of the canonical JSON of everything except out_dir, as hex.
std::string config_hash(const ExperimentSpec& spec);

// Sets the dataset and both training seeds from spec.seed.
ExperimentSpec with_derived_seeds(ExperimentSpec spec);
std::uint64_t target_seed(std::uint64_t seed, const DomainId& target);

struct StudyOptions {
  int jobs = 1;
  std::function<void(const std::string&)> log;
  // Forwarded to every adaptation run (tests use it to cut runs short).
  std::function<bool(const AdaptationRun&)> keep_going;
};

// Builds (or reuses, when the stored config matches) the synthetic dataset,
// or loads the manifest.
Manifest prepare_dataset(const ExperimentSpec& spec);

// One unadapted result per brand plus one adapted result per brand in runs
// (the source is never adapted). Brands' test splits must be nonempty.
std::vector<EvalResult> evaluate_matrix(const Classifier& classifier, const Manifest& manifest,
                                        const DomainId& source,
                                        const std::map<DomainId, const AdaptationRun*>& runs,
                                        int image_size, int jobs = 1);

struct StudyReport {
  DomainId source;
  Task task = Task::kBinary;
  MetricName metric = MetricName::kAuc;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string code_version;
  std::vector<EvalResult> results;  // sorted by (brand, adapted)

  std::optional<double> value(const DomainId& brand, bool adapted) const;
  bool operator==(const StudyReport&) const = default;
};

StudyReport run_shift_study(const ExperimentSpec& spec, const StudyOptions& options = {});
// Trains one adaptation per target with the classifier from a finished
// shift study in spec.out_dir, running the shift study first if needed.
StudyReport run_adaptation_study(const ExperimentSpec& spec, const StudyOptions& options = {});

enum class ReportFormat { kCsv, kJson, kMarkdown };
std::string to_string(ReportFormat format);
ReportFormat parse_report_format(const std::string& token);

std::string render_report(const StudyReport& report, ReportFormat format);
void emit_report(const std::filesystem::path& path, const StudyReport& report, ReportFormat format);
// Writes report.csv, report.json and report.md into dir.
void emit_reports(const std::filesystem::path& dir, const StudyReport& report);
StudyReport report_from_json(const nlohmann::json& j);
StudyReport load_report(const std::filesystem::path& json_path);

}  // namespace camadapt
