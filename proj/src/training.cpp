#include "camadapt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "camadapt/checkpoint.hpp"
#include "camadapt/error.hpp"
#include "camadapt/ops.hpp"
#include "camadapt/preprocess.hpp"

namespace camadapt {
namespace {

constexpr int kFeatureChunk = 32;

// Copies rows `idx` of an [N, D] tensor.
Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
  const int d = t.dim(1);
  Tensor out({static_cast<int>(idx.size()), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(t.data() + idx[i] * d, d, out.data() + i * d);
  }
  return out;
}

Tensor gather_images(const std::vector<Image>& images, const std::vector<std::size_t>& idx) {
  std::vector<Image> batch;
  batch.reserve(idx.size());
  for (std::size_t i : idx) batch.push_back(images[i]);
  return to_tensor(batch);
}

Tensor standardized(const Tensor& raw, const FeatureStats& stats) {
  if (raw.dim(1) != static_cast<int>(stats.width())) {
    fail(ErrorKind::kInvalidArgument, "feature width " + std::to_string(raw.dim(1)) +
                                          " does not match statistics width " +
                                          std::to_string(stats.width()));
  }
  Tensor out = raw;
  const int d = raw.dim(1);
  for (int n = 0; n < raw.dim(0); ++n) {
    for (int j = 0; j < d; ++j) {
      double& v = out.data()[static_cast<std::size_t>(n) * d + j];
      v = (v - stats.mean[j]) / stats.std[j];
    }
  }
  return out;
}

Tensor concat_tensors(const Tensor& left, const Tensor& right) {
  NoGradGuard no_grad;
  return ops::concat_columns({constant(left), constant(right)}).value();
}

// Raw (unstandardised) hard features [N, 3 + 3B + n].
Tensor raw_hard_features(const Tensor& images, const Classifier& classifier, int bins) {
  NoGradGuard no_grad;
  const Tensor deep = classifier.forward(constant(images)).features.value();
  return concat_tensors(hard_color_features(images, bins), deep);
}

Tensor batched_raw_features(const std::vector<Image>& images, const Classifier& classifier, int bins) {
  std::vector<double> values;
  int width = 0;
  for (std::size_t start = 0; start < images.size(); start += kFeatureChunk) {
    const std::size_t end = std::min(images.size(), start + kFeatureChunk);
    const std::vector<Image> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                   images.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor f = raw_hard_features(to_tensor(chunk), classifier, bins);
    width = f.dim(1);
    values.insert(values.end(), f.storage().begin(), f.storage().end());
  }
  return Tensor({static_cast<int>(images.size()), width}, std::move(values));
}

double l1_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

void set_all(const std::vector<const nn::ParameterList*>& lists, bool on) {
  for (const auto* p : lists) p->set_requires_grad(on);
}

std::vector<Var> joined_vars(const nn::ParameterList& a, const nn::ParameterList& b) {
  std::vector<Var> v = a.vars();
  const std::vector<Var> w = b.vars();
  v.insert(v.end(), w.begin(), w.end());
  return v;
}

Tensor flip(const Tensor& batch, int index, bool horizontal, bool vertical) {
  const int h = batch.dim(2), w = batch.dim(3);
  Tensor out = batch;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < 3; ++c) {
    const double* src = batch.data() + (static_cast<std::size_t>(index) * 3 + c) * plane;
    double* dst = out.data() + (static_cast<std::size_t>(index) * 3 + c) * plane;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int sy = vertical ? h - 1 - y : y;
        const int sx = horizontal ? w - 1 - x : x;
        dst[static_cast<std::size_t>(y) * w + x] = src[static_cast<std::size_t>(sy) * w + sx];
      }
    }
  }
  return out;
}

template <typename T>
T take(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::kConfig, "train config: " + msg); };
  if (epochs < 1) bad("epochs must be >= 1");
  if (!(lr_end > 0.0) || !(lr_start >= lr_end)) bad("require lr_start >= lr_end > 0");
  if (lambda1 < 0.0 || lambda2 < 0.0) bad("lambda weights must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (image_size < 16 || image_size % 16 != 0) bad("image_size must be a positive multiple of 16");
  if (monitor_set_size < 0) bad("monitor_set_size must be >= 0");
  if (checkpoint_every < 0) bad("checkpoint_every must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) bad("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) bad("adam_eps must be > 0");
  if (bins < 2) bad("bins must be >= 2");
  if (discriminator_hidden < 1) bad("discriminator_hidden must be >= 1");
}

TrainConfig default_classifier_config() {
  TrainConfig c;
  c.epochs = 30;
  c.lr_start = 1e-3;
  c.lr_end = 1e-4;
  c.beta1 = 0.9;
  c.batch_size = 16;
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"lr_start", c.lr_start},
       {"lr_end", c.lr_end},
       {"lambda1", c.lambda1},
       {"lambda2", c.lambda2},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"image_size", c.image_size},
       {"monitor_set_size", c.monitor_set_size},
       {"checkpoint_every", c.checkpoint_every},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"norm", to_string(c.norm)},
       {"non_saturating", c.non_saturating},
       {"bins", c.bins},
       {"generator", c.generator},
       {"discriminator_hidden", c.discriminator_hidden},
       {"classifier", c.classifier},
       {"augment", c.augment},
       {"straight_through", c.straight_through}};
}

TrainConfig parse_train_config(const nlohmann::json& j, const TrainConfig& defaults) {
  if (!j.is_object()) fail(ErrorKind::kConfig, "train config must be a JSON object");
  static const std::set<std::string> known = {
      "epochs", "lr_start", "lr_end", "lambda1", "lambda2", "batch_size", "seed",
      "image_size", "monitor_set_size", "checkpoint_every", "beta1", "beta2", "adam_eps",
      "norm", "non_saturating", "bins", "generator", "discriminator_hidden", "classifier",
      "augment", "straight_through"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) fail(ErrorKind::kConfig, "train config: unknown key '" + key + "'");
  }
  TrainConfig c = defaults;
  try {
    c.epochs = take(j, "epochs", c.epochs);
    c.lr_start = take(j, "lr_start", c.lr_start);
    c.lr_end = take(j, "lr_end", c.lr_end);
    c.lambda1 = take(j, "lambda1", c.lambda1);
    c.lambda2 = take(j, "lambda2", c.lambda2);
    c.batch_size = take(j, "batch_size", c.batch_size);
    c.seed = take(j, "seed", c.seed);
    c.image_size = take(j, "image_size", c.image_size);
    c.monitor_set_size = take(j, "monitor_set_size", c.monitor_set_size);
    c.checkpoint_every = take(j, "checkpoint_every", c.checkpoint_every);
    c.beta1 = take(j, "beta1", c.beta1);
    c.beta2 = take(j, "beta2", c.beta2);
    c.adam_eps = take(j, "adam_eps", c.adam_eps);
    if (j.contains("norm")) c.norm = parse_residue_norm(j.at("norm").get<std::string>());
    c.non_saturating = take(j, "non_saturating", c.non_saturating);
    c.bins = take(j, "bins", c.bins);
    if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorConfig>();
    c.discriminator_hidden = take(j, "discriminator_hidden", c.discriminator_hidden);
    if (j.contains("classifier")) c.classifier = j.at("classifier").get<ClassifierConfig>();
    c.augment = take(j, "augment", c.augment);
    c.straight_through = take(j, "straight_through", c.straight_through);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

void from_json(const nlohmann::json& j, TrainConfig& c) { c = parse_train_config(j); }

void apply_seed_override(TrainConfig& config) {
  if (const char* env = std::getenv(kSeedEnv)) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      config.seed = v;
    } catch (const std::exception&) {
      fail(ErrorKind::kConfig, std::string(kSeedEnv) + " is not an unsigned integer: " + env);
    }
  }
}

TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& defaults) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
  TrainConfig c = parse_train_config(j, defaults);
  apply_seed_override(c);
  return c;
}

double lr_at(const TrainConfig& config, double epoch) {
  if (!(epoch >= 0.0 && epoch <= config.epochs)) {
    fail(ErrorKind::kInvalidArgument, "lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                                          std::to_string(config.epochs) + "]");
  }
  if (epoch == config.epochs) return config.lr_end;
  return config.lr_start + (config.lr_end - config.lr_start) * (epoch / config.epochs);
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<Var> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Var& p : params_) {
    m_.push_back(Tensor::zeros_like(p.value()));
    v_.push_back(Tensor::zeros_like(p.value()));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    const Tensor& g = p.grad();
    const bool has_grad = g.size() == p.value().size();
    double* w = p.mutable_value().data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t k = 0; k < m_[i].size(); ++k) {
      const double gk = has_grad ? g[k] : 0.0;
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (Var& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------- data

Image load_image(const std::filesystem::path& path, int size) {
  Image img = read_image(path);
  if (img.height == size && img.width == size) return img;
  return square_and_resize(img, size);
}

std::vector<Image> load_images(const std::vector<ImageRecord>& records, int size) {
  std::vector<Image> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(load_image(r.path(), size));
  return out;
}

std::vector<int> task_labels(const std::vector<ImageRecord>& records, Task task) {
  std::vector<int> labels;
  labels.reserve(records.size());
  const int k = num_classes(task);
  for (const auto& r : records) {
    const int g = r.grade();
    if (g < 0 || g >= k) fail(ErrorKind::kInvalidArgument, "label out of range for " + r.image_id());
    labels.push_back(g);
  }
  return labels;
}

// ---------------------------------------------------------------- classifier

ClassifierTraining train_classifier(const Manifest& manifest, const DomainId& source,
                                    const TrainConfig& config,
                                    const ClassifierTrainingOptions& options) {
  config.validate();
  const std::vector<ImageRecord> records = manifest.select(source, Split::kTrain);
  if (records.empty()) fail(ErrorKind::kDegenerateInput, "empty training set for brand " + source);
  const std::vector<int> labels = task_labels(records, manifest.task());
  const std::vector<Image> images = load_images(records, config.image_size);

  ClassifierConfig cc = config.classifier;
  cc.input_size = config.image_size;
  cc.num_classes = num_classes(manifest.task());
  ClassifierTraining result{Classifier(cc, mix_seed(config.seed, 1)), {}, {}};
  Classifier& model = result.classifier;
  model.unfreeze();
  Adam opt(model.parameters().vars(), config.beta1, config.beta2, config.adam_eps);
  std::mt19937_64 rng(mix_seed(config.seed, 2));
  std::bernoulli_distribution coin(0.5);

  std::set<std::string> seen;
  const std::size_t n = records.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps = (n + bs - 1) / bs;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    double lr = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(s * bs),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (s + 1) * bs)));
      std::vector<int> y;
      for (std::size_t i : idx) {
        y.push_back(labels[i]);
        if (seen.insert(records[i].image_id()).second) result.consumed_ids.push_back(records[i].image_id());
      }
      Tensor batch = gather_images(images, idx);
      if (config.augment) {
        for (int i = 0; i < static_cast<int>(idx.size()); ++i) {
          const bool h = coin(rng), v = coin(rng);
          if (h || v) batch = flip(batch, i, h, v);
        }
      }
      lr = lr_at(config, epoch + static_cast<double>(s) / static_cast<double>(steps));
      opt.zero_grad();
      const ClassifierOutput out = model.forward(constant(batch));
      const Var loss = ops::softmax_cross_entropy(out.logits, y);
      backward(loss);
      opt.step(lr);
      if (!std::isfinite(loss.item())) fail(ErrorKind::kNumerical, "classifier loss is not finite");
      loss_sum += loss.item() * static_cast<double>(idx.size());
      const Tensor& logits = out.logits.value();
      const int k = logits.dim(1);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* row = logits.data() + i * k;
        if (std::max_element(row, row + k) - row == y[i]) ++correct;
      }
    }
    const ClassifierEpoch stat{epoch + 1, loss_sum / static_cast<double>(n),
                               static_cast<double>(correct) / static_cast<double>(n), lr};
    result.history.push_back(stat);
    if (options.on_epoch) options.on_epoch(stat);
    if (!options.out_dir.empty()) {
      save_classifier(options.out_dir / "classifier.ckpt", model,
                      {{"source", source}, {"epoch", stat.epoch}, {"train_config", config}});
    }
  }
  model.freeze();

  if (!options.out_dir.empty()) {
    std::ofstream hist(options.out_dir / "history.csv", std::ios::binary);
    hist.precision(10);
    hist << "epoch,loss,accuracy,lr\n";
    for (const auto& h : result.history) {
      hist << h.epoch << ',' << h.loss << ',' << h.accuracy << ',' << h.lr << '\n';
    }
    std::ofstream audit(options.out_dir / "consumed_ids.txt", std::ios::binary);
    for (const auto& id : result.consumed_ids) audit << id << '\n';
    if (!hist || !audit) fail(ErrorKind::kIo, "cannot write classifier logs in " + options.out_dir.string());
  }
  return result;
}

// ---------------------------------------------------------------- features

FeatureStats compute_feature_stats(const std::vector<Image>& source_train, const Classifier& classifier,
                                   int bins) {
  if (source_train.empty()) fail(ErrorKind::kDegenerateInput, "feature statistics need source images");
  const Tensor raw = batched_raw_features(source_train, classifier, bins);
  std::vector<std::vector<double>> rows(raw.dim(0));
  const int d = raw.dim(1);
  for (int n = 0; n < raw.dim(0); ++n) {
    rows[n].assign(raw.data() + static_cast<std::size_t>(n) * d,
                   raw.data() + static_cast<std::size_t>(n + 1) * d);
  }
  return FeatureStats::compute(rows);
}

FeatureStats compute_feature_stats(const Manifest& manifest, const DomainId& source,
                                   const Classifier& classifier, int image_size, int bins) {
  return compute_feature_stats(load_images(manifest.select(source, Split::kTrain), image_size),
                               classifier, bins);
}

Tensor hard_camera_features(const Tensor& images, const Classifier& classifier,
                            const FeatureStats& stats, int bins) {
  return standardized(raw_hard_features(images, classifier, bins), stats);
}

std::vector<double> mean_histogram(const std::vector<Image>& images, int bins) {
  std::vector<double> mean(3 * static_cast<std::size_t>(bins), 0.0);
  for (const auto& img : images) {
    const auto h = normalized_color_histogram(img, bins);
    for (std::size_t i = 0; i < h.size(); ++i) mean[i] += h[i];
  }
  if (!images.empty()) {
    for (double& v : mean) v /= static_cast<double>(images.size());
  }
  return mean;
}

// ---------------------------------------------------------------- adaptation

AdaptationRun AdaptationRun::create(const DomainId& source, const DomainId& target,
                                    const Classifier& classifier, const TrainConfig& config,
                                    FeatureStats stats, std::uint64_t seed) {
  const int width = camera_feature_width(config.bins, classifier.config().feature_dim());
  if (static_cast<int>(stats.width()) != width) {
    fail(ErrorKind::kInvalidArgument, "feature statistics have width " + std::to_string(stats.width()) +
                                          ", expected " + std::to_string(width));
  }
  const DiscriminatorConfig dc{width, config.discriminator_hidden};
  AdaptationRun run{source,
                    target,
                    ResidualGenerator(config.generator, mix_seed(seed, 11)),
                    ResidualGenerator(config.generator, mix_seed(seed, 12)),
                    Discriminator(dc, mix_seed(seed, 13)),
                    Discriminator(dc, mix_seed(seed, 14)),
                    &classifier,
                    std::move(stats),
                    config.bins,
                    config.image_size,
                    0,
                    {},
                    0.0,
                    classifier.parameters().hash(),
                    classifier.parameters().hash(),
                    {},
                    config};
  return run;
}

namespace {

struct FakeFeatures {
  Var soft_b, soft_a;  // standardised, differentiable w.r.t. the generators
  Tensor hard_b, hard_a;
};

// Colour block for the generator path: soft values, or hard values that
// back-propagate through the soft surrogate.
Var generator_color_block(const Var& images, int bins, bool straight_through) {
  const Var soft = soft_color_features(images, bins);
  if (!straight_through) return soft;
  Tensor offset = hard_color_features(images.value(), bins);
  for (std::size_t i = 0; i < offset.size(); ++i) offset[i] -= soft.value()[i];
  return ops::add(soft, constant(std::move(offset)));
}

FakeFeatures fake_features(const AdaptationRun& run, const CyclePasses& p, bool need_soft,
                           bool straight_through) {
  const Classifier& cls = *run.classifier;
  FakeFeatures out;
  const Var fake_b = p.a_to_b.image, fake_a = p.b_to_a.image;
  const Var deep_b = cls.forward(fake_b).features;
  const Var deep_a = cls.forward(fake_a).features;
  out.hard_b = standardized(concat_tensors(hard_color_features(fake_b.value(), run.bins), deep_b.value()), run.stats);
  out.hard_a = standardized(concat_tensors(hard_color_features(fake_a.value(), run.bins), deep_a.value()), run.stats);
  if (need_soft) {
    out.soft_b = ops::standardize_columns(
        ops::concat_columns({generator_color_block(fake_b, run.bins, straight_through), deep_b}), run.stats.mean, run.stats.std);
    out.soft_a = ops::standardize_columns(
        ops::concat_columns({generator_color_block(fake_a, run.bins, straight_through), deep_a}), run.stats.mean, run.stats.std);
  }
  return out;
}

double discriminator_objective(const AdaptationRun& run, const FakeFeatures& ff, const Tensor& real_a,
                               const Tensor& real_b) {
  NoGradGuard no_grad;
  return adversarial_loss(run.d_b, constant(real_b), constant(ff.hard_b)).item() +
         adversarial_loss(run.d_a, constant(real_a), constant(ff.hard_a)).item();
}

struct GeneratorObjective {
  Var total;
  LossBreakdown breakdown;
};

GeneratorObjective generator_objective(const AdaptationRun& run, const CyclePasses& p,
                                       const FakeFeatures& ff, const Tensor& real_a,
                                       const Tensor& real_b, const TrainConfig& config) {
  const Var gan_f = generator_adversarial_from_logits(run.d_b.logits(constant(real_b)),
                                                      run.d_b.logits(ff.soft_b), config.non_saturating);
  const Var gan_g = generator_adversarial_from_logits(run.d_a.logits(constant(real_a)),
                                                      run.d_a.logits(ff.soft_a), config.non_saturating);
  const Var cyc = cycle_loss(p, config.norm);
  const Var idt = identity_loss(p, config.norm);
  GeneratorObjective out;
  out.breakdown = total_loss({gan_f.item(), gan_g.item(), cyc.item(), idt.item()}, config.lambda1,
                             config.lambda2);
  out.total = total_loss(gan_f, gan_g, idt, cyc, config.lambda1, config.lambda2);
  return out;
}

}  // namespace

StepResult adaptation_step(AdaptationRun& run, Adam& opt_d, Adam& opt_g, const Tensor& a_batch,
                           const Tensor& b_batch, const Tensor& real_a_features,
                           const Tensor& real_b_features, double lr_d, double lr_g,
                           const TrainConfig& config) {
  run.classifier->freeze();
  const std::vector<const nn::ParameterList*> gens = {&run.f.parameters(), &run.g.parameters()};
  const std::vector<const nn::ParameterList*> discs = {&run.d_a.parameters(), &run.d_b.parameters()};
  set_all(gens, true);

  const CyclePasses passes = run_cycle(run.f, run.g, constant(a_batch), constant(b_batch), true);
  const FakeFeatures ff = fake_features(run, passes, true, config.straight_through);

  // Discriminators ascend L_GAN on hard features; generators do not participate.
  StepResult result;
  set_all(discs, true);
  opt_d.zero_grad();
  const Var gan_d = ops::add(
      adversarial_loss(run.d_b, constant(real_b_features), constant(ff.hard_b)),
      adversarial_loss(run.d_a, constant(real_a_features), constant(ff.hard_a)));
  result.gan_before_d = gan_d.item();
  if (!std::isfinite(result.gan_before_d)) fail(ErrorKind::kNumerical, "discriminator objective is not finite");
  backward(ops::neg(gan_d));
  opt_d.step(lr_d);
  result.gan_after_d = discriminator_objective(run, ff, real_a_features, real_b_features);

  // Generators descend the total with the discriminators frozen.
  set_all(discs, false);
  opt_g.zero_grad();
  const GeneratorObjective obj = generator_objective(run, passes, ff, real_a_features, real_b_features, config);
  result.before_g = obj.breakdown;
  backward(obj.total);
  opt_g.step(lr_g);
  set_all(discs, true);
  ++run.step;
  return result;
}

LossBreakdown evaluate_objective(const AdaptationRun& run, const Tensor& a_batch, const Tensor& b_batch,
                                 const Tensor& real_a_features, const Tensor& real_b_features,
                                 const TrainConfig& config) {
  NoGradGuard no_grad;
  const CyclePasses passes = run_cycle(run.f, run.g, constant(a_batch), constant(b_batch), true);
  const FakeFeatures ff = fake_features(run, passes, true, config.straight_through);
  return generator_objective(run, passes, ff, real_a_features, real_b_features, config).breakdown;
}

double evaluate_discriminator_objective(const AdaptationRun& run, const Tensor& a_batch,
                                        const Tensor& b_batch, const Tensor& real_a_features,
                                        const Tensor& real_b_features) {
  NoGradGuard no_grad;
  const CyclePasses passes = run_cycle(run.f, run.g, constant(a_batch), constant(b_batch), false);
  return discriminator_objective(run, fake_features(run, passes, false, false), real_a_features, real_b_features);
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.precision(10);
  out << "step,gan_F,gan_G,cyc,idt,total,lr\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.loss.gan_f << ',' << r.loss.gan_g << ',' << r.loss.cyc << ','
        << r.loss.idt << ',' << r.loss.total << ',' << r.lr << '\n';
  }
}

Image tile_grid(const std::vector<Image>& top, const std::vector<Image>& bottom) {
  if (top.size() != bottom.size() || top.empty()) {
    fail(ErrorKind::kInvalidArgument, "tile_grid needs two equal, nonempty rows");
  }
  const int h = top.front().height, w = top.front().width;
  const int k = static_cast<int>(top.size());
  Image grid(2 * h, k * w);
  for (int row = 0; row < 2; ++row) {
    for (int i = 0; i < k; ++i) {
      const Image& tile = row == 0 ? top[i] : bottom[i];
      if (tile.height != h || tile.width != w) fail(ErrorKind::kInvalidArgument, "tile sizes differ");
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) grid.at(c, row * h + y, i * w + x) = tile.at(c, y, x);
        }
      }
    }
  }
  return grid;
}

MonitorSnapshot monitor_snapshot(const AdaptationRun& run, const std::vector<Image>& fixed_images,
                                 const std::filesystem::path& grid_path) {
  if (fixed_images.empty()) fail(ErrorKind::kInvalidArgument, "monitor set is empty");
  std::vector<Image> after;
  after.reserve(fixed_images.size());
  for (const auto& img : fixed_images) after.push_back(transform_image(run.g, img));
  MonitorSnapshot snap;
  snap.grid = grid_path;
  write_png(grid_path, tile_grid(fixed_images, after));
  snap.divergence_before = l1_distance(run.source_mean_histogram, mean_histogram(fixed_images, run.bins));
  snap.divergence = l1_distance(run.source_mean_histogram, mean_histogram(after, run.bins));
  return snap;
}

AdaptationRun train_adaptation(const std::vector<Image>& source_images,
                               const std::vector<Image>& target_images, const DomainId& source,
                               const DomainId& target, const Classifier& classifier,
                               const TrainConfig& config, const AdaptationOptions& options) {
  config.validate();
  if (source_images.empty()) fail(ErrorKind::kDegenerateInput, "no source images for adaptation");
  if (target_images.empty()) fail(ErrorKind::kDegenerateInput, "no target images for brand " + target);
  if (classifier.config().input_size != config.image_size) {
    fail(ErrorKind::kInvalidArgument, "classifier input size does not match image_size");
  }
  classifier.freeze();
  const std::uint64_t hash_start = classifier.parameters().hash();
  FeatureStats stats = options.stats ? *options.stats : compute_feature_stats(source_images, classifier, config.bins);
  AdaptationRun run = AdaptationRun::create(source, target, classifier, config, std::move(stats),
                                            mix_seed(config.seed, 100));
  run.classifier_hash_start = hash_start;
  run.source_mean_histogram = mean_histogram(source_images, config.bins);

  const Tensor feat_a = standardized(batched_raw_features(source_images, classifier, config.bins), run.stats);
  const Tensor feat_b = standardized(batched_raw_features(target_images, classifier, config.bins), run.stats);

  Adam opt_d(joined_vars(run.d_a.parameters(), run.d_b.parameters()), config.beta1, config.beta2, config.adam_eps);
  Adam opt_g(joined_vars(run.f.parameters(), run.g.parameters()), config.beta1, config.beta2, config.adam_eps);
  std::mt19937_64 rng(mix_seed(config.seed, 101));

  std::vector<std::size_t> monitor_idx(target_images.size());
  std::iota(monitor_idx.begin(), monitor_idx.end(), 0);
  std::shuffle(monitor_idx.begin(), monitor_idx.end(), rng);
  monitor_idx.resize(std::min<std::size_t>(monitor_idx.size(), config.monitor_set_size));
  std::vector<Image> monitor_set;
  for (std::size_t i : monitor_idx) monitor_set.push_back(target_images[i]);

  const std::filesystem::path& out = options.out_dir;
  const std::filesystem::path monitors =
      options.monitor_dir.empty() ? out / "monitors" : options.monitor_dir;
  auto write_artifacts = [&](bool final) {
    if (out.empty()) return;
    save_adaptation(out / (final ? "adapt.ckpt" : "latest.ckpt"), run);
    write_loss_csv(out / "loss.csv", run.losses);
    if (!monitor_set.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%07lld.png", static_cast<long long>(run.step));
      const MonitorSnapshot snap = monitor_snapshot(run, monitor_set, monitors / name);
      std::ofstream div(monitors / "divergence.csv", std::ios::app);
      div << run.step << ',' << snap.divergence_before << ',' << snap.divergence << '\n';
    }
  };
  if (!out.empty()) {
    std::filesystem::create_directories(monitors);
    std::ofstream(monitors / "divergence.csv", std::ios::trunc) << "step,divergence_before,divergence\n";
  }

  const std::size_t n = std::max(source_images.size(), target_images.size());
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps = (n + bs - 1) / bs;
  // Each epoch walks a fresh permutation of each domain, recycled to length n.
  auto epoch_order = [&](std::size_t size) {
    std::vector<std::size_t> order;
    while (order.size() < n) {
      std::vector<std::size_t> perm(size);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      order.insert(order.end(), perm.begin(), perm.end());
    }
    order.resize(n);
    return order;
  };

  bool stopped = false;
  for (int epoch = 0; epoch < config.epochs && !stopped; ++epoch) {
    const std::vector<std::size_t> order_a = epoch_order(source_images.size());
    const std::vector<std::size_t> order_b = epoch_order(target_images.size());
    std::vector<double> totals;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto lo = static_cast<std::ptrdiff_t>(s * bs);
      const auto hi = static_cast<std::ptrdiff_t>(std::min(n, (s + 1) * bs));
      const std::vector<std::size_t> ia(order_a.begin() + lo, order_a.begin() + hi);
      const std::vector<std::size_t> ib(order_b.begin() + lo, order_b.begin() + hi);
      const double lr = lr_at(config, epoch + static_cast<double>(s) / static_cast<double>(steps));
      StepResult sr;
      try {
        sr = adaptation_step(run, opt_d, opt_g, gather_images(source_images, ia),
                             gather_images(target_images, ib), gather_rows(feat_a, ia),
                             gather_rows(feat_b, ib), lr, lr, config);
      } catch (const Error& e) {
        if (!out.empty()) write_loss_csv(out / "loss.csv", run.losses);
        throw;
      }
      LossRow row{run.step - 1, epoch, sr.before_g, -sr.gan_before_d, lr};
      run.losses.push_back(row);
      totals.push_back(row.loss.total);
      if (options.on_step) options.on_step(row);
      if (config.checkpoint_every > 0 && run.step % config.checkpoint_every == 0) write_artifacts(false);
      if (options.keep_going && !options.keep_going(run)) {
        stopped = true;
        break;
      }
    }
    const double mean = std::accumulate(totals.begin(), totals.end(), 0.0) / static_cast<double>(totals.size());
    double var = 0.0;
    for (double t : totals) var += (t - mean) * (t - mean);
    run.last_epoch_total_std = std::sqrt(var / static_cast<double>(totals.size()));
  }

  run.classifier_hash_end = classifier.parameters().hash();
  if (run.classifier_hash_end != run.classifier_hash_start) {
    fail(ErrorKind::kCheckFailure, "classifier parameters changed during adaptation");
  }
  write_artifacts(true);
  return run;
}

AdaptationRun train_adaptation(const Manifest& manifest, const DomainId& source, const DomainId& target,
                               const Classifier& classifier, const TrainConfig& config,
                               const AdaptationOptions& options) {
  if (source == target) fail(ErrorKind::kConfig, "target brand equals the source brand");
  // Only paths are touched here; grade() is never called on either domain.
  const std::vector<Image> a = load_images(manifest.select(source, Split::kTrain), config.image_size);
  const std::vector<Image> b = load_images(manifest.select(target, Split::kTrain), config.image_size);
  return train_adaptation(a, b, source, target, classifier, config, options);
}

// ---------------------------------------------------------------- inference

AdaptedPrediction adapt_and_classify(const AdaptationRun& run, const Image& image) {
  Image t = transform_image(run.g, image);
  Prediction p = classify(*run.classifier, t);
  return {std::move(t), std::move(p)};
}

std::vector<AdaptedPrediction> adapt_and_classify(const AdaptationRun& run, const std::vector<Image>& images) {
  std::vector<Image> transformed;
  transformed.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kFeatureChunk) {
    NoGradGuard no_grad;
    const std::size_t end = std::min(images.size(), start + kFeatureChunk);
    const std::vector<Image> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                   images.begin() + static_cast<std::ptrdiff_t>(end));
    const Transformed t = transform(run.g, constant(to_tensor(chunk)));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      transformed.push_back(image_from_tensor(t.image.value(), static_cast<int>(i)));
    }
  }
  const std::vector<Prediction> preds = classify_batch(*run.classifier, transformed);
  std::vector<AdaptedPrediction> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back({std::move(transformed[i]), preds[i]});
  return out;
}

// ---------------------------------------------------------------- persistence

void save_adaptation(const std::filesystem::path& path, const AdaptationRun& run) {
  Checkpoint ck;
  ck.config = {{"kind", "adaptation"},
               {"source", run.source},
               {"target", run.target},
               {"bins", run.bins},
               {"image_size", run.image_size},
               {"step", run.step},
               {"generator", run.f.config()},
               {"discriminator", run.d_a.config()},
               {"classifier_hash", run.classifier_hash_start},
               {"last_epoch_total_std", run.last_epoch_total_std},
               {"train_config", run.config}};
  for (const auto& [prefix, params] :
       {std::pair<std::string, const nn::ParameterList*>{"F.", &run.f.parameters()},
        {"G.", &run.g.parameters()},
        {"D_A.", &run.d_a.parameters()},
        {"D_B.", &run.d_b.parameters()}}) {
    auto state = prefixed_state(*params, prefix);
    ck.tensors.insert(ck.tensors.end(), state.begin(), state.end());
  }
  const int w = static_cast<int>(run.stats.width());
  ck.tensors.emplace_back("stats.mean", Tensor({w}, run.stats.mean));
  ck.tensors.emplace_back("stats.std", Tensor({w}, run.stats.std));
  ck.tensors.emplace_back("source_histogram",
                          Tensor({static_cast<int>(run.source_mean_histogram.size())}, run.source_mean_histogram));
  write_checkpoint(path, ck);
}

AdaptationRun load_adaptation(const std::filesystem::path& path, const Classifier& classifier) {
  const Checkpoint ck = read_checkpoint(path, "adaptation");
  const std::string src = path.string();
  try {
    const auto hash = ck.config.at("classifier_hash").get<std::uint64_t>();
    if (hash != classifier.parameters().hash()) {
      fail(ErrorKind::kArtifactMismatch, src + ": adaptation was trained against a different classifier");
    }
    const int image_size = ck.config.at("image_size").get<int>();
    if (image_size != classifier.config().input_size) {
      fail(ErrorKind::kArtifactMismatch, src + ": image size does not match the classifier");
    }
    FeatureStats stats;
    stats.mean = ck.tensor("stats.mean").storage();
    stats.std = ck.tensor("stats.std").storage();
    TrainConfig tc;
    tc.bins = ck.config.at("bins").get<int>();
    tc.image_size = image_size;
    tc.generator = ck.config.at("generator").get<GeneratorConfig>();
    tc.discriminator_hidden = ck.config.at("discriminator").get<DiscriminatorConfig>().hidden_width;
    if (static_cast<int>(stats.width()) != camera_feature_width(tc.bins, classifier.config().feature_dim())) {
      fail(ErrorKind::kArtifactMismatch, src + ": feature width does not match the classifier");
    }
    AdaptationRun run = AdaptationRun::create(ck.config.at("source").get<std::string>(),
                                              ck.config.at("target").get<std::string>(), classifier, tc,
                                              std::move(stats), 0);
    run.f.parameters().load_state(ck.tensors, "F.");
    run.g.parameters().load_state(ck.tensors, "G.");
    run.d_a.parameters().load_state(ck.tensors, "D_A.");
    run.d_b.parameters().load_state(ck.tensors, "D_B.");
    run.source_mean_histogram = ck.tensor("source_histogram").storage();
    run.step = ck.config.at("step").get<std::int64_t>();
    run.last_epoch_total_std = ck.config.value("last_epoch_total_std", 0.0);
    run.config = ck.config.at("train_config");
    return run;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kArtifactMismatch, src + ": bad adaptation header: " + e.what());
  }
}

}  // namespace camadapt
