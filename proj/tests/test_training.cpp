#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "camadapt/checkpoint.hpp"
#include "camadapt/error.hpp"
#include "camadapt/ops.hpp"
#include "camadapt/training.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace camadapt;

namespace {

TrainConfig tiny_adapt_config() {
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 4;
  c.image_size = 32;
  c.generator = {2, 1, true};
  c.discriminator_hidden = 8;
  c.checkpoint_every = 0;
  c.monitor_set_size = 2;
  return c;
}

ClassifierConfig tiny_classifier_config() {
  ClassifierConfig c;
  c.input_size = 32;
  c.stage_widths = {4, 8, 8};
  c.blocks_per_stage = 1;
  return c;
}

std::vector<Image> random_images(int n, int size, std::uint64_t seed) {
  std::vector<Image> v;
  for (int i = 0; i < n; ++i) v.push_back(oracle::random_image(size, size, seed + i, 0.1, 0.9));
  return v;
}

struct Fixture {
  Classifier classifier{tiny_classifier_config(), 3};
  std::vector<Image> source = random_images(6, 32, 100);
  std::vector<Image> target = random_images(6, 32, 200);
  Fixture() { classifier.freeze(); }
};

}  // namespace

TEST(Schedule, EndpointsAndMidpoint) {
  const TrainConfig c;
  EXPECT_EQ(c.epochs, 200);
  EXPECT_EQ(lr_at(c, 0), 1e-4);
  EXPECT_EQ(lr_at(c, 200), 1e-5);
  EXPECT_NEAR(lr_at(c, 100), 5.5e-5, 1e-18);
  EXPECT_THROW(lr_at(c, -0.5), Error);
  EXPECT_THROW(lr_at(c, 200.5), Error);
  TrainConfig d;
  d.lr_start = 3e-3;
  d.lr_end = 2e-4;
  d.epochs = 7;
  EXPECT_EQ(lr_at(d, 0), d.lr_start);
  EXPECT_EQ(lr_at(d, 7), d.lr_end);
}

TEST(Schedule, MonotoneNonIncreasing) {
  const TrainConfig c;
  for (double e = 0; e < 200; e += 0.5) EXPECT_GE(lr_at(c, e), lr_at(c, e + 0.5));
}

TEST(TrainConfig, DefaultsJsonAndValidation) {
  const TrainConfig c;
  EXPECT_EQ(c.lambda1, 0.2);
  EXPECT_EQ(c.lambda2, 5.0);
  EXPECT_EQ(c.beta1, 0.5);
  EXPECT_EQ(c.beta2, 0.999);
  EXPECT_EQ(c.adam_eps, 1e-8);
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_FALSE(c.non_saturating);
  EXPECT_EQ(parse_train_config(nlohmann::json(c)), c);
  EXPECT_THROW(parse_train_config({{"epochz", 3}}), Error);
  EXPECT_THROW(parse_train_config({{"epochs", 0}}), Error);
  EXPECT_THROW(parse_train_config({{"lr_start", 1e-6}, {"lr_end", 1e-5}}), Error);
  EXPECT_THROW(parse_train_config({{"image_size", 40}}), Error);
  EXPECT_THROW(parse_train_config({{"epochs", "many"}}), Error);
  EXPECT_EQ(parse_train_config({{"norm", "l1"}}).norm, ResidueNorm::kL1);
}

TEST(TrainConfig, SeedEnvironmentOverride) {
  support::TempDir dir("cfg");
  std::ofstream(dir / "t.json") << R"({"epochs": 3, "seed": 1})";
  unsetenv(kSeedEnv);
  EXPECT_EQ(load_train_config(dir / "t.json").seed, 1u);
  setenv(kSeedEnv, "77", 1);
  EXPECT_EQ(load_train_config(dir / "t.json").seed, 77u);
  setenv(kSeedEnv, "x7", 1);
  EXPECT_THROW(load_train_config(dir / "t.json"), Error);
  unsetenv(kSeedEnv);
  std::ofstream(dir / "bad.json") << "{\"epochs\": 3,\n  oops}";
  try {
    load_train_config(dir / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.exit_code(), 2);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Adam, BiasCorrectedFirstStepAndConvergence) {
  Var p = parameter(Tensor({2}, std::vector<double>{3.0, -2.0}));
  Adam opt({p}, 0.5, 0.999, 1e-8);
  opt.zero_grad();
  backward(ops::sum(ops::mul(p, p)));
  opt.step(0.1);
  // The first Adam step moves every coordinate by lr * sign(g).
  EXPECT_NEAR(p.value()[0], 2.9, 1e-7);
  EXPECT_NEAR(p.value()[1], -1.9, 1e-7);
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    backward(ops::sum(ops::mul(p, p)));
    opt.step(0.05);
  }
  EXPECT_LT(std::abs(p.value()[0]), 0.05);
  EXPECT_EQ(opt.steps(), 501);
}

TEST(ClassifierTraining, DeterministicIsolatedAndCheckpointed) {
  support::TempDir dir("cls");
  const Manifest m = build_synth_dataset(support::tiny_synth(), dir / "data");
  TrainConfig c = default_classifier_config();
  c.epochs = 2;
  c.image_size = 32;
  c.classifier = tiny_classifier_config();
  ClassifierTrainingOptions opts;
  opts.out_dir = dir / "cls";
  const ClassifierTraining first = train_classifier(m, "A", c, opts);
  const ClassifierTraining second = train_classifier(m, "A", c);
  ASSERT_EQ(first.history.size(), 2u);
  EXPECT_NEAR(first.history.back().loss, second.history.back().loss, 1e-4);
  EXPECT_EQ(first.classifier.parameters().hash(), second.classifier.parameters().hash());

  std::set<std::string> target_ids;
  for (const auto& r : m.records()) {
    if (r.brand() == "B") target_ids.insert(r.image_id());
  }
  EXPECT_EQ(first.consumed_ids.size(), m.select("A", Split::kTrain).size());
  for (const auto& id : first.consumed_ids) EXPECT_FALSE(target_ids.count(id)) << id;

  const Classifier loaded = load_classifier(dir / "cls" / "classifier.ckpt");
  EXPECT_EQ(loaded.parameters().hash(), first.classifier.parameters().hash());
  EXPECT_TRUE(std::filesystem::exists(dir / "cls" / "history.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "cls" / "consumed_ids.txt"));
}

TEST(ClassifierTraining, EmptySourceRejected) {
  const Manifest m(Task::kBinary, {}, {"A"});
  EXPECT_THROW(train_classifier(m, "A", default_classifier_config()), Error);
}

TEST(FeatureStatsTraining, DeterministicAndFloored) {
  Fixture fx;
  const FeatureStats a = compute_feature_stats(fx.source, fx.classifier, 16);
  const FeatureStats b = compute_feature_stats(fx.source, fx.classifier, 16);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
  EXPECT_EQ(a.width(), static_cast<std::size_t>(camera_feature_width(16, 8)));
  for (double s : a.std) EXPECT_GE(s, FeatureStats::kStdFloor);
  std::vector<std::vector<double>> rows;
  for (const auto& img : fx.source) rows.push_back(camera_feature(img, fx.classifier, FeatureMode::kHard).flatten());
  const FeatureStats ref = FeatureStats::compute(rows);
  for (std::size_t j = 0; j < a.width(); ++j) EXPECT_NEAR(a.mean[j], ref.mean[j], 1e-12);
  EXPECT_THROW(compute_feature_stats(std::vector<Image>{}, fx.classifier), Error);
}

TEST(Adaptation, IdentityStartFreezeAndLossRows) {
  Fixture fx;
  const std::uint64_t hash = fx.classifier.parameters().hash();
  support::TempDir dir("adapt");
  TrainConfig c = tiny_adapt_config();
  c.checkpoint_every = 1;
  AdaptationOptions opt;
  opt.out_dir = dir.path();
  const AdaptationRun run = train_adaptation(fx.source, fx.target, "A", "B", fx.classifier, c, opt);
  ASSERT_FALSE(run.losses.empty());
  EXPECT_EQ(run.losses.front().loss.cyc, 0.0);
  EXPECT_EQ(run.losses.front().loss.idt, 0.0);
  EXPECT_EQ(run.losses.front().step, 0);
  EXPECT_EQ(run.step, 2);
  EXPECT_EQ(fx.classifier.parameters().hash(), hash);
  EXPECT_EQ(run.classifier_hash_start, run.classifier_hash_end);
  for (const auto& row : run.losses) {
    const LossBreakdown& b = row.loss;
    EXPECT_DOUBLE_EQ(b.total, b.gan_f + b.gan_g + b.lambda1 * b.idt + b.lambda2 * b.cyc);
    EXPECT_GE(b.cyc, 0.0);
    EXPECT_GE(b.idt, 0.0);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "adapt.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "latest.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "monitors" / "step_0000001.png"));
  std::ifstream csv(dir / "loss.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "step,gan_F,gan_G,cyc,idt,total,lr");
}

TEST(Adaptation, DeterministicTrajectory) {
  Fixture fx;
  TrainConfig c = tiny_adapt_config();
  c.epochs = 2;
  const AdaptationRun a = train_adaptation(fx.source, fx.target, "A", "B", fx.classifier, c);
  const AdaptationRun b = train_adaptation(fx.source, fx.target, "A", "B", fx.classifier, c);
  ASSERT_EQ(a.losses.size(), b.losses.size());
  for (std::size_t i = 0; i < a.losses.size(); ++i) EXPECT_NEAR(a.losses[i].loss.total, b.losses[i].loss.total, 1e-4);
  EXPECT_GE(a.last_epoch_total_std, 0.0);
}

TEST(Adaptation, UpdateDirections) {
  Fixture fx;
  TrainConfig c = tiny_adapt_config();
  c.generator.zero_head = false;
  const FeatureStats stats = compute_feature_stats(fx.source, fx.classifier, c.bins);
  AdaptationRun run = AdaptationRun::create("A", "B", fx.classifier, c, stats, 1);
  Adam od(run.d_a.parameters().vars(), c.beta1, c.beta2, c.adam_eps);
  std::vector<Var> dv = run.d_a.parameters().vars(), db = run.d_b.parameters().vars();
  dv.insert(dv.end(), db.begin(), db.end());
  Adam opt_d(dv, c.beta1, c.beta2, c.adam_eps);
  std::vector<Var> gv = run.f.parameters().vars(), gg = run.g.parameters().vars();
  gv.insert(gv.end(), gg.begin(), gg.end());
  Adam opt_g(gv, c.beta1, c.beta2, c.adam_eps);
  const Tensor a = to_tensor(std::vector<Image>(fx.source.begin(), fx.source.begin() + 4));
  const Tensor b = to_tensor(std::vector<Image>(fx.target.begin(), fx.target.begin() + 4));
  const Tensor fa = hard_camera_features(a, fx.classifier, run.stats, c.bins);
  const Tensor fb = hard_camera_features(b, fx.classifier, run.stats, c.bins);
  for (int i = 0; i < 3; ++i) {
    const StepResult s = adaptation_step(run, opt_d, opt_g, a, b, fa, fb, 1e-6, 1e-6, c);
    EXPECT_GE(s.gan_after_d, s.gan_before_d);
    const LossBreakdown after = evaluate_objective(run, a, b, fa, fb, c);
    EXPECT_LE(after.total, s.before_g.total + 1e-7);
  }
}

TEST(Adaptation, NeverReadsLabels) {
  support::TempDir dir("audit");
  const Manifest m = build_synth_dataset(support::tiny_synth(), dir / "data");
  Classifier cls(tiny_classifier_config(), 4);
  cls.freeze();
  LabelAudit::reset();
  train_adaptation(m, "A", "B", cls, tiny_adapt_config());
  EXPECT_EQ(LabelAudit::reads("B"), 0u);
  EXPECT_EQ(LabelAudit::reads("A"), 0u);
  EXPECT_THROW(train_adaptation(m, "A", "A", cls, tiny_adapt_config()), Error);
  EXPECT_THROW(train_adaptation(m, "A", "Z", cls, tiny_adapt_config()), Error);
}

TEST(Adaptation, NullShiftKeepsResidueSmall) {
  support::TempDir dir("null");
  SynthConfig sc = support::tiny_synth(9, 3);
  sc.filters["B"] = {};
  const Manifest m = build_synth_dataset(sc, dir / "data");
  Classifier cls(tiny_classifier_config(), 5);
  cls.freeze();
  TrainConfig c = tiny_adapt_config();
  c.epochs = 3;
  const AdaptationRun run = train_adaptation(m, "A", "B", cls, c);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& img : load_images(m.select("B", Split::kTest), 32)) {
    NoGradGuard no_grad;
    for (double r : run.g.residue(constant(to_tensor(img))).value().storage()) total += std::abs(r), ++count;
  }
  EXPECT_LT(total / static_cast<double>(count), 0.05);
}

TEST(Adaptation, NonFiniteLossAborts) {
  Fixture fx;
  TrainConfig c = tiny_adapt_config();
  c.lambda2 = 1e308;
  c.generator.zero_head = false;
  c.epochs = 2;
  support::TempDir dir("nan");
  AdaptationOptions opt;
  opt.out_dir = dir.path();
  try {
    train_adaptation(fx.source, fx.target, "A", "B", fx.classifier, c, opt);
    FAIL() << "expected abort";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumerical);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "loss.csv"));
}

TEST(Monitor, IdentityGridAndLayout) {
  Fixture fx;
  const TrainConfig c = tiny_adapt_config();
  AdaptationRun run = AdaptationRun::create("A", "B", fx.classifier, c,
                                            compute_feature_stats(fx.source, fx.classifier, c.bins), 1);
  run.source_mean_histogram = mean_histogram(fx.source, c.bins);
  support::TempDir dir("monitor");
  const std::vector<Image> fixed(fx.target.begin(), fx.target.begin() + 3);
  const MonitorSnapshot snap = monitor_snapshot(run, fixed, dir / "grid.png");
  const Image grid = read_image(snap.grid);
  EXPECT_EQ(grid.height, 64);
  EXPECT_EQ(grid.width, 96);
  for (int c2 = 0; c2 < 3; ++c2) {
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 96; ++x) EXPECT_EQ(grid.at(c2, y, x), grid.at(c2, y + 32, x));
    }
  }
  EXPECT_EQ(snap.divergence, snap.divergence_before);
}

TEST(Monitor, DivergenceDetectsConstructedShift) {
  Fixture fx;
  const TrainConfig c = tiny_adapt_config();
  AdaptationRun run = AdaptationRun::create("A", "B", fx.classifier, c,
                                            compute_feature_stats(fx.source, fx.classifier, c.bins), 1);
  run.source_mean_histogram = mean_histogram(fx.source, c.bins);
  std::vector<Image> shifted;
  for (const auto& img : fx.source) {
    Image s = img;
    for (std::size_t i = 0; i < s.plane(); ++i) s.data[i] = std::min(1.0, s.data[i] * 1.6);
    shifted.push_back(s);
  }
  support::TempDir dir("div");
  const double d_shift = monitor_snapshot(run, shifted, dir / "a.png").divergence;
  const double d_zero = monitor_snapshot(run, fx.source, dir / "b.png").divergence;
  EXPECT_GT(d_shift, d_zero);
  EXPECT_NEAR(d_zero, 0.0, 1e-12);
}

TEST(Inference, IdentityAndComposition) {
  Fixture fx;
  const TrainConfig c = tiny_adapt_config();
  AdaptationRun run = AdaptationRun::create("A", "B", fx.classifier, c,
                                            compute_feature_stats(fx.source, fx.classifier, c.bins), 1);
  const auto adapted = adapt_and_classify(run, fx.target);
  const auto direct = classify_batch(fx.classifier, fx.target);
  for (std::size_t i = 0; i < fx.target.size(); ++i) {
    EXPECT_EQ(adapted[i].transformed, fx.target[i]);
    EXPECT_EQ(adapted[i].prediction.logits, direct[i].logits);
  }
  // Non-identity generator: batch path equals transform-then-classify.
  AdaptationRun noisy = AdaptationRun::create("A", "B", fx.classifier, [&] {
    TrainConfig t = c;
    t.generator.zero_head = false;
    return t;
  }(), run.stats, 2);
  const auto batch = adapt_and_classify(noisy, fx.target);
  for (std::size_t i = 0; i < fx.target.size(); ++i) {
    const Image t = transform_image(noisy.g, fx.target[i]);
    const Prediction p = classify(fx.classifier, t);
    EXPECT_EQ(batch[i].transformed, t);
    for (std::size_t k = 0; k < p.logits.size(); ++k) EXPECT_NEAR(batch[i].prediction.logits[k], p.logits[k], 1e-12);
    EXPECT_EQ(adapt_and_classify(noisy, fx.target[i]).transformed, t);
  }
}

TEST(Persistence, AdaptationRoundTrip) {
  Fixture fx;
  TrainConfig c = tiny_adapt_config();
  c.generator.zero_head = false;
  AdaptationRun run = AdaptationRun::create("A", "B", fx.classifier, c,
                                            compute_feature_stats(fx.source, fx.classifier, c.bins), 3);
  run.source_mean_histogram = mean_histogram(fx.source, c.bins);
  support::TempDir dir("persist");
  save_adaptation(dir / "run.ckpt", run);
  const AdaptationRun back = load_adaptation(dir / "run.ckpt", fx.classifier);
  EXPECT_EQ(back.target, "B");
  EXPECT_EQ(back.stats.mean, run.stats.mean);
  const Tensor x = to_tensor(fx.target);
  NoGradGuard no_grad;
  const Tensor r1 = run.g.residue(constant(x)).value(), r2 = back.g.residue(constant(x)).value();
  for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_NEAR(r1[i], r2[i], 1e-6);
  const Tensor fb = hard_camera_features(x, fx.classifier, run.stats, c.bins);
  EXPECT_NEAR(run.d_b.logits(constant(fb)).value()[0], back.d_b.logits(constant(fb)).value()[0], 1e-6);

  Classifier other(tiny_classifier_config(), 99);
  try {
    load_adaptation(dir / "run.ckpt", other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.exit_code(), 3);
  }
}
