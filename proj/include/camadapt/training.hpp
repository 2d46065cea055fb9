#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "camadapt/features.hpp"
#include "camadapt/losses.hpp"
#include "camadapt/manifest.hpp"
#include "camadapt/models.hpp"
#include "camadapt/seed.hpp"
#include "json.hpp"

namespace camadapt {

inline constexpr const char* kSeedEnv = "CAMADAPT_SEED";

struct TrainConfig {
  int epochs = 200;
  double lr_start = 1e-4;
  double lr_end = 1e-5;
  double lambda1 = kDefaultLambda1;
  double lambda2 = kDefaultLambda2;
  int batch_size = 16;
  std::uint64_t seed = 2020;
  int image_size = 64;
  int monitor_set_size = 8;
  int checkpoint_every = 100;  // steps; 0 disables intermediate checkpoints

  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  ResidueNorm norm = ResidueNorm::kL2;
  bool non_saturating = false;
  int bins = kDefaultBins;
  GeneratorConfig generator;
  int discriminator_hidden = 256;
  ClassifierConfig classifier;
  bool augment = true;  // random flips during classifier training
  // Generator-side color features: soft values, or hard values carrying the
  // soft gradient (straight-through).
  bool straight_through = false;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Classifier defaults: Adam with beta1 = 0.9 and a 1e-3 -> 1e-4 schedule.
TrainConfig default_classifier_config();

void to_json(nlohmann::json& j, const TrainConfig& c);
// Unknown keys are rejected; missing keys keep their defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig parse_train_config(const nlohmann::json& j, const TrainConfig& defaults = {});
// Reads a JSON file and applies the CAMADAPT_SEED override.
TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& defaults = {});
void apply_seed_override(TrainConfig& config);

// lr_start + (lr_end - lr_start) * epoch / epochs for 0 <= epoch <= epochs.
double lr_at(const TrainConfig& config, double epoch);

class Adam {
 public:
  Adam(std::vector<Var> params, double beta1, double beta2, double eps);
  void step(double lr);
  void zero_grad();
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

// Reads an image and brings it to size x size (square_and_resize when needed).
Image load_image(const std::filesystem::path& path, int size);
std::vector<Image> load_images(const std::vector<ImageRecord>& records, int size);

struct ClassifierEpoch {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

struct ClassifierTraining {
  Classifier classifier;
  std::vector<ClassifierEpoch> history;
  std::vector<std::string> consumed_ids;  // audit log, in first-use order
};

struct ClassifierTrainingOptions {
  std::filesystem::path out_dir;  // empty: no artifacts
  std::function<void(const ClassifierEpoch&)> on_epoch;
};

// Cross-entropy on the source train split only.
ClassifierTraining train_classifier(const Manifest& manifest, const DomainId& source,
                                    const TrainConfig& config,
                                    const ClassifierTrainingOptions& options = {});

std::vector<int> task_labels(const std::vector<ImageRecord>& records, Task task);

// Hard-mode camera features of every source train image; std floored.
FeatureStats compute_feature_stats(const std::vector<Image>& source_train,
                                   const Classifier& classifier, int bins = kDefaultBins);
FeatureStats compute_feature_stats(const Manifest& manifest, const DomainId& source,
                                   const Classifier& classifier, int image_size,
                                   int bins = kDefaultBins);

struct LossRow {
  std::int64_t step = 0;
  int epoch = 0;
  LossBreakdown loss;
  double d_loss = 0.0;  // -(L_GAN(F,D_B) + L_GAN(G,D_A)) after the D update input
  double lr = 0.0;
};

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows);

struct AdaptationRun {
  DomainId source;
  DomainId target;
  ResidualGenerator f;  // source -> target
  ResidualGenerator g;  // target -> source
  Discriminator d_a;
  Discriminator d_b;
  const Classifier* classifier = nullptr;
  FeatureStats stats;
  int bins = kDefaultBins;
  int image_size = 64;
  std::int64_t step = 0;
  std::vector<LossRow> losses;
  double last_epoch_total_std = 0.0;
  std::uint64_t classifier_hash_start = 0;
  std::uint64_t classifier_hash_end = 0;
  std::vector<double> source_mean_histogram;  // hard, over the source train split
  nlohmann::json config;                      // TrainConfig used

  static AdaptationRun create(const DomainId& source, const DomainId& target,
                              const Classifier& classifier, const TrainConfig& config,
                              FeatureStats stats, std::uint64_t seed);
};

struct AdaptationOptions {
  std::filesystem::path out_dir;  // empty: no artifacts
  std::filesystem::path monitor_dir;  // default out_dir/monitors
  std::optional<FeatureStats> stats;
  std::function<void(const LossRow&)> on_step;
  // Test hook: invoked after every step; returning false stops training.
  std::function<bool(const AdaptationRun&)> keep_going;
};

// Alternating minimax: one discriminator ascent step then one generator
// descent step per batch. Target grades are never read.
AdaptationRun train_adaptation(const Manifest& manifest, const DomainId& source,
                               const DomainId& target, const Classifier& classifier,
                               const TrainConfig& config, const AdaptationOptions& options = {});

// In-memory variant used by the file-based entry point and by tests.
AdaptationRun train_adaptation(const std::vector<Image>& source_images,
                               const std::vector<Image>& target_images, const DomainId& source,
                               const DomainId& target, const Classifier& classifier,
                               const TrainConfig& config, const AdaptationOptions& options = {});

// One minimax step on a fixed batch. Exposed for the update-direction tests.
struct StepResult {
  LossBreakdown before_g;  // generator objective evaluated before the G update
  double gan_before_d = 0.0;
  double gan_after_d = 0.0;
};
StepResult adaptation_step(AdaptationRun& run, Adam& opt_d, Adam& opt_g, const Tensor& a_batch,
                           const Tensor& b_batch, const Tensor& real_a_features,
                           const Tensor& real_b_features, double lr_d, double lr_g,
                           const TrainConfig& config);

// Generator objective (Eq. total, generator side) on a batch without updating anything.
LossBreakdown evaluate_objective(const AdaptationRun& run, const Tensor& a_batch,
                                 const Tensor& b_batch, const Tensor& real_a_features,
                                 const Tensor& real_b_features, const TrainConfig& config);
// Sum of both adversarial terms with hard fake features, as seen by the discriminators.
double evaluate_discriminator_objective(const AdaptationRun& run, const Tensor& a_batch,
                                        const Tensor& b_batch, const Tensor& real_a_features,
                                        const Tensor& real_b_features);

// Standardised hard features of an image batch.
Tensor hard_camera_features(const Tensor& images, const Classifier& classifier,
                            const FeatureStats& stats, int bins);

struct MonitorSnapshot {
  std::filesystem::path grid;
  double divergence_before = 0.0;
  double divergence = 0.0;  // L1(mean source hist, mean transformed-target hist)
};

// 2 x k grid: untransformed target images on top, G-transformed below.
MonitorSnapshot monitor_snapshot(const AdaptationRun& run, const std::vector<Image>& fixed_images,
                                 const std::filesystem::path& grid_path);
Image tile_grid(const std::vector<Image>& top, const std::vector<Image>& bottom);
std::vector<double> mean_histogram(const std::vector<Image>& images, int bins);

struct AdaptedPrediction {
  Image transformed;
  Prediction prediction;
};
AdaptedPrediction adapt_and_classify(const AdaptationRun& run, const Image& image);
std::vector<AdaptedPrediction> adapt_and_classify(const AdaptationRun& run,
                                                  const std::vector<Image>& images);

void save_adaptation(const std::filesystem::path& path, const AdaptationRun& run);
// The classifier reference is bound by the caller.
AdaptationRun load_adaptation(const std::filesystem::path& path, const Classifier& classifier);

}  // namespace camadapt
