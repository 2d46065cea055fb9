// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.
//   acceptance [--only 1,4,8] [--work DIR] [--seed N]
// Criteria 6 and 7 train the full synthetic benchmark (about 30-40 minutes on
// one core); everything else finishes in well under a minute.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "camadapt/bench.hpp"
#include "camadapt/checkpoint.hpp"
#include "camadapt/features.hpp"
#include "camadapt/gradcheck.hpp"
#include "camadapt/losses.hpp"
#include "camadapt/metrics.hpp"
#include "camadapt/training.hpp"
#include "oracles.hpp"
#include "stubs.hpp"
#include "test_support.hpp"

using namespace camadapt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("FAILED " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Var random_batch(int n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  Tensor t({n, 3, size, size});
  for (auto& v : t.values()) v = u(rng);
  return constant(t);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// 1. QWK and AUC against brute-force oracles.
void metric_oracles(Outcome& o) {
  std::mt19937_64 rng(101);
  double worst_qwk = 0.0, worst_auc = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int k = 2 + static_cast<int>(rng() % 4);
    const int n = 2 + static_cast<int>(rng() % 200);
    std::vector<int> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng() % k);
      b[i] = rng() % 3 == 0 ? a[i] : static_cast<int>(rng() % k);
    }
    a[0] = 0;
    a[1] = k - 1;
    const KappaResult got = quadratic_weighted_kappa_checked(a, b, k);
    if (!got.degenerate) worst_qwk = std::max(worst_qwk, std::abs(got.value - oracle::weighted_kappa(a, b, k)));
  }
  for (int t = 0; t < 1000; ++t) {
    const int n = 2 + static_cast<int>(rng() % 300);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng() % 2);
      // Coarse scores so that ties are common.
      s[i] = t % 2 ? static_cast<double>(rng() % 7) / 7.0 : std::uniform_real_distribution<double>(0, 1)(rng);
    }
    y[0] = 0;
    y[1] = 1;
    worst_auc = std::max(worst_auc, std::abs(auc(y, s) - oracle::roc_area(y, s)));
  }
  o.check(worst_qwk < 1e-10, "QWK oracle");
  o.check(worst_auc < 1e-10, "AUC oracle");
  o.note("max |dQWK| " + fmt("%.1e", worst_qwk) + ", max |dAUC| " + fmt("%.1e", worst_auc));
  o.check(quadratic_weighted_kappa({0, 1, 0, 1}, {1, 0, 1, 0}, 2) == -1.0, "kappa flip example = -1");
  o.check(auc({1, 0, 1, 0}, {0.9, 0.8, 0.7, 0.1}) == 0.75, "AUC example = 0.75");
  o.check(auc({1, 1, 0, 0}, {0.5, 0.5, 0.5, 0.5}) == 0.5, "all-ties AUC = 0.5");
}

// 2. Loss terms on stubs against hand evaluation.
void loss_fidelity(Outcome& o) {
  double worst = 0.0;
  std::mt19937_64 rng(202);
  std::normal_distribution<double> z(0.0, 2.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> r(5), f(5);
    for (auto& v : r) v = z(rng);
    for (auto& v : f) v = z(rng);
    double expect = 0.0;
    for (double v : r) expect += oracle::log_sigmoid(v) / 5.0;
    for (double v : f) expect += oracle::log_one_minus_sigmoid(v) / 5.0;
    const double got = adversarial_loss_from_logits(constant(Tensor({5, 1}, r)), constant(Tensor({5, 1}, f))).item();
    worst = std::max(worst, std::abs(got - expect));
  }
  {
    // Discriminator pinned to 0.5 gives 2 log 0.5.
    Discriminator d({7, 4}, 1);
    Var w = d.output().weight, b = d.output().bias;
    w.mutable_value().fill(0.0);
    b.mutable_value().fill(0.0);
    const double v = adversarial_loss(d, constant(Tensor({3, 7}, 0.1)), constant(Tensor({2, 7}, 0.9))).item();
    worst = std::max(worst, std::abs(v - 2.0 * std::log(0.5)));
  }
  {
    const stub::FunctionResidue f([](const Var& x) { return ops::add_scalar(ops::scale(x, 0.5), -0.2); });
    const stub::FunctionResidue g([](const Var& x) { return ops::scale(x, -0.3); });
    const Var a = random_batch(2, 16, 1), b = random_batch(2, 16, 2);
    const auto& av = a.value().storage();
    const auto& bv = b.value().storage();
    double cyc1 = 0.0, cyc2 = 0.0, idt_f = 0.0, idt_g = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double fa = 0.5 * av[i] - 0.2;
      const double ab = std::clamp(av[i] + fa, 0.0, 1.0);
      cyc1 += std::pow(fa - 0.3 * ab, 2);
      const double gb = -0.3 * bv[i];
      const double ba = std::clamp(bv[i] + gb, 0.0, 1.0);
      cyc2 += std::pow(gb + 0.5 * ba - 0.2, 2);
      idt_f += std::pow(0.5 * bv[i] - 0.2, 2);
      idt_g += std::pow(-0.3 * av[i], 2);
    }
    const double n = static_cast<double>(av.size());
    worst = std::max(worst, std::abs(cycle_loss(f, g, a, b).item() - (cyc1 + cyc2) / n));
    worst = std::max(worst, std::abs(identity_loss(f, g, a, b).item() - (idt_f + idt_g) / n));
  }
  const LossBreakdown example = total_loss({-1.3863, -1.3863, 0.01, 0.04});
  o.check(std::abs(example.total - (-2.7146)) < 1e-6, "worked total -2.7146");
  o.check(kDefaultLambda1 == 0.2 && kDefaultLambda2 == 5.0, "default lambdas 0.2 / 5");
  for (int t = 0; t < 100; ++t) {
    std::uniform_real_distribution<double> u(-3, 3), pos(0, 2);
    const LossComponents c{u(rng), u(rng), pos(rng), pos(rng)};
    worst = std::max(worst, std::abs(total_loss(c).total - (c.gan_f + c.gan_g + 0.2 * c.idt + 5.0 * c.cyc)));
  }
  o.check(worst < 1e-6, "hand oracles within 1e-6");
  o.note("max deviation " + fmt("%.1e", worst));
}

// 3. Finite differences against analytic gradients.
void gradient_check(Outcome& o) {
  for (int size : {16, 32}) {
    GradcheckOptions opt;
    opt.size = size;
    const GradcheckReport r = run_gradcheck(opt);
    double worst = 0.0;
    for (const auto& row : r.rows) worst = std::max(worst, row.max_rel_error);
    o.check(r.passed && r.rows.size() == 4, "gradcheck at " + std::to_string(size) + "x" + std::to_string(size));
    o.note(std::to_string(size) + "px max rel err " + fmt("%.2e", worst));
  }
}

// 4. Zero-initialised residue heads start at the identity.
void identity_start(Outcome& o) {
  ClassifierConfig cc;
  cc.input_size = 32;
  cc.stage_widths = {4, 8, 8};
  cc.blocks_per_stage = 1;
  Classifier cls(cc, 3);
  cls.freeze();
  TrainConfig tc;
  tc.image_size = 32;
  tc.generator = {4, 2, true};
  std::vector<Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(generate_synthetic_fundus(60 + i, i, 32).first);
  const FeatureStats stats = compute_feature_stats(imgs, cls, tc.bins);
  const AdaptationRun run = AdaptationRun::create("A", "B", cls, tc, stats, 9);
  const Var a = constant(to_tensor(imgs)), b = random_batch(4, 32, 5);
  const CyclePasses p = run_cycle(run.f, run.g, a, b);
  o.check(cycle_loss(p).item() == 0.0, "cyc == 0");
  o.check(identity_loss(p).item() == 0.0, "idt == 0");
  o.check(p.a_to_b.image.value().storage() == a.value().storage(), "F transform is the identity");
  o.check(p.b_to_a.image.value().storage() == b.value().storage(), "G transform is the identity");
  bool same = true;
  for (const auto& img : imgs) {
    const AdaptedPrediction ad = adapt_and_classify(run, img);
    same = same && ad.transformed.data == img.data && ad.prediction.logits == classify(cls, img).logits;
  }
  o.check(same, "adapted predictions == unadapted");
}

// 5. Feature extractors.
void feature_suite(Outcome& o) {
  Image dup = oracle::random_image(40, 40, 1);
  for (std::size_t i = 0; i < dup.plane(); ++i) dup.data[dup.plane() + i] = dup.data[i];
  const double d = std::abs(channel_mutual_information(dup, 16)[0] - channel_entropy(dup, 0, 16));
  o.check(d < 1e-9, "MI(X,X) == H(X)");
  const auto indep = channel_mutual_information(oracle::random_image(256, 256, 2), 16);
  const double mi_max = *std::max_element(indep.begin(), indep.end());
  o.check(mi_max < 0.01, "independent channels MI < 0.01");
  double mass = 0.0, gap = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Image img = oracle::random_image(64, 64, seed);
    const auto hard = normalized_color_histogram(img, kDefaultBins);
    const auto soft = soft_color_histogram(img, kDefaultBins);
    for (int c = 0; c < 3; ++c) {
      double sh = 0.0, ss = 0.0, l1 = 0.0;
      for (int k = 0; k < kDefaultBins; ++k) {
        sh += hard[c * kDefaultBins + k];
        ss += soft[c * kDefaultBins + k];
        l1 += std::abs(hard[c * kDefaultBins + k] - soft[c * kDefaultBins + k]);
      }
      mass = std::max({mass, std::abs(sh - 1.0), std::abs(ss - 1.0)});
      gap = std::max(gap, l1);
    }
  }
  o.check(mass < 1e-6, "histograms sum to 1");
  o.check(gap < 2.0 / kDefaultBins, "soft/hard L1 gap < 2/B");
  ClassifierConfig cc;
  cc.input_size = 64;
  cc.stage_widths = {4, 8, 16};
  cc.blocks_per_stage = 1;
  Classifier cls(cc, 8);
  cls.freeze();
  const std::uint64_t before = cls.parameters().hash();
  const Image img = generate_synthetic_fundus(3, 2, 64).first;
  const Image other = generate_synthetic_fundus(4, 0, 64).first;
  const FeatureStats stats = compute_feature_stats({img, other}, cls, kDefaultBins);
  deep_features(cls, img);
  const Var batch = constant(to_tensor(std::vector<Image>{img, other}));
  for (FeatureMode mode : {FeatureMode::kHard, FeatureMode::kSoft}) {
    camera_feature(img, cls, mode);
    camera_features(batch, cls, mode, stats);
  }
  o.check(cls.parameters().hash() == before, "classifier bitwise unchanged by feature calls");
  o.note("MI dup err " + fmt("%.1e", d) + ", indep MI " + fmt("%.4f", mi_max) + ", L1 gap " + fmt("%.4f", gap));
}

// 6 and 7 share one benchmark study.
struct Benchmark {
  bool ran = false;
  StudyReport report;
  double seconds_shift = 0.0;
  double seconds_adapt = 0.0;
};

Benchmark g_bench;

void run_benchmark(const fs::path& work, std::uint64_t seed) {
  if (g_bench.ran) return;
  fs::remove_all(work);
  const ExperimentSpec spec = default_experiment_spec(work, seed);
  StudyOptions opt;
  const auto t0 = std::chrono::steady_clock::now();
  opt.log = [t0](const std::string& s) {
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "  [" << fmt("%.0fs", t) << "] " << s << std::endl;
  };
  run_shift_study(spec, opt);
  const auto t1 = std::chrono::steady_clock::now();
  g_bench.report = run_adaptation_study(spec, opt);
  const auto t2 = std::chrono::steady_clock::now();
  g_bench.seconds_shift = std::chrono::duration<double>(t1 - t0).count();
  g_bench.seconds_adapt = std::chrono::duration<double>(t2 - t1).count();
  g_bench.ran = true;
  std::cerr << render_report(g_bench.report, ReportFormat::kMarkdown);
}

std::vector<DomainId> targets_of(const StudyReport& r) {
  std::vector<DomainId> t;
  for (const auto& e : r.results) {
    if (e.brand != r.source && !e.adapted) t.push_back(e.brand);
  }
  return t;
}

void domain_shift(Outcome& o, const fs::path& work, std::uint64_t seed) {
  run_benchmark(work, seed);
  const StudyReport& r = g_bench.report;
  const double src = r.value(r.source, false).value_or(0.0);
  o.check(src >= 0.90, "source AUC >= 0.90");
  int dropped = 0;
  std::string drops;
  for (const auto& t : targets_of(r)) {
    const double d = src - r.value(t, false).value_or(src);
    dropped += d >= 0.05;
    drops += " " + t + ":" + fmt("%.3f", d);
  }
  o.check(dropped >= 2, "at least 2 of 4 targets drop >= 0.05");
  o.check(g_bench.seconds_shift <= 30 * 60, "shift study within 30 min");
  o.note("source " + fmt("%.4f", src) + ", drops" + drops + ", " + fmt("%.0fs", g_bench.seconds_shift));
}

void adaptation_recovery(Outcome& o, const fs::path& work, std::uint64_t seed) {
  run_benchmark(work, seed);
  const StudyReport& r = g_bench.report;
  const double src = r.value(r.source, false).value_or(0.0);
  int recovered = 0;
  bool degraded = false;
  std::string detail;
  for (const auto& t : targets_of(r)) {
    const double before = r.value(t, false).value_or(0.0);
    const double after = r.value(t, true).value_or(0.0);
    degraded |= after < before - 0.03;
    if (src - before >= 0.05) {
      const double share = (after - before) / (src - before);
      recovered += share >= 0.5;
      detail += " " + t + ":" + fmt("%.0f%%", 100.0 * share);
    } else {
      detail += " " + t + ":" + fmt("%+.3f", after - before);
    }
  }
  o.check(recovered >= 2, "at least 2 dropped targets recover >= 50% of the gap");
  o.check(!degraded, "no target degrades by more than 0.03");
  o.check(g_bench.seconds_adapt <= 2 * 3600, "adaptation within 2 h");
  o.note("recovery" + detail + ", " + fmt("%.0fs", g_bench.seconds_adapt));
}

// 8. Contracts on a reduced study.
void contracts(Outcome& o) {
  support::TempDir one("accept8a"), two("accept8b");
  const ExperimentSpec spec = support::tiny_spec(one.path(), 21);
  const Manifest m = prepare_dataset(spec);
  ClassifierTraining trained = train_classifier(m, "A", spec.classifier);
  const Classifier& cls = trained.classifier;
  cls.freeze();
  const std::uint64_t hash0 = cls.parameters().hash();
  LabelAudit::reset();
  TrainConfig ac = spec.adaptation;
  ac.epochs = 2;
  const AdaptationRun run = train_adaptation(m, "A", "B", cls, ac);
  o.check(LabelAudit::reads("B") == 0, "zero target grade reads during adaptation");
  o.check(cls.parameters().hash() == hash0 && run.classifier_hash_start == run.classifier_hash_end,
          "classifier parameter hash unchanged");

  const TrainConfig def;
  o.check(lr_at(def, 0.0) == 1e-4 && std::abs(lr_at(def, def.epochs) - 1e-5) < 1e-18,
          "lr schedule 1e-4 -> 1e-5");

  save_adaptation(one / "adapt.ckpt", run);
  const AdaptationRun back = load_adaptation(one / "adapt.ckpt", cls);
  double dev = 0.0;
  for (const auto& r : m.select("B", Split::kTest)) {
    const Image img = load_image(r.path(), 32);
    const AdaptedPrediction x = adapt_and_classify(run, img), y = adapt_and_classify(back, img);
    dev = std::max({dev, max_abs_diff(x.transformed.data, y.transformed.data),
                    max_abs_diff(x.prediction.probabilities, y.prediction.probabilities)});
  }
  o.check(dev <= 1e-6, "checkpoint round trip within 1e-6");

  const StudyReport ra = run_adaptation_study(spec);
  const StudyReport rb = run_adaptation_study(support::tiny_spec(two.path(), 21));
  double spread = 0.0;
  for (std::size_t i = 0; i < ra.results.size() && i < rb.results.size(); ++i) {
    spread = std::max(spread, std::abs(ra.results[i].value - rb.results[i].value));
  }
  o.check(ra.results.size() == rb.results.size() && spread <= 0.01, "same seed reports within 0.01");
  o.note("round trip dev " + fmt("%.1e", dev) + ", report spread " + fmt("%.1e", spread));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  fs::path work = fs::temp_directory_path() / "camadapt_acceptance";
  std::uint64_t seed = 2020;
  app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',');
  app.add_option("--work", work, "Directory for the benchmark study");
  app.add_option("--seed", seed, "Benchmark seed");
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* name;
    std::function<void(Outcome&)> run;
    double budget_s;  // the criterion's runtime bound, 0 for none
  };
  const std::vector<Criterion> all{
      {1, "metric oracles", metric_oracles, 10},
      {2, "loss-formula fidelity", loss_fidelity, 5},
      {3, "gradient correctness", gradient_check, 120},
      {4, "identity start", identity_start, 0},
      {5, "feature extractor suite", feature_suite, 30},
      {6, "domain-shift reproduction", [&](Outcome& o) { domain_shift(o, work, seed); }, 0},
      {7, "adaptation recovery", [&](Outcome& o) { adaptation_recovery(o, work, seed); }, 0},
      {8, "contracts", contracts, 0},
  };

  int failed = 0, ran = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    ++ran;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0) o.check(secs < c.budget_s, "runtime under " + fmt("%.0fs", c.budget_s));
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << " (" << fmt("%.1fs", secs) << ")";
    for (const auto& n : o.notes) line << " | " << n;
    std::cout << line.str() << std::endl;
    failed += !o.pass;
  }
  std::cout << (failed ? "FAIL" : "PASS") << "  " << ran - failed << "/" << ran << " criteria" << std::endl;
  return failed ? 1 : 0;
}
