#include "camadapt/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "camadapt/error.hpp"
#include "camadapt/features.hpp"
#include "camadapt/losses.hpp"
#include "camadapt/ops.hpp"

namespace camadapt {
namespace {

// Agreement required between central differences at h and h/2.
constexpr double kSmoothness = 1e-3;

constexpr int kBins = 4;

struct Toy {
  ResidualGenerator f, g;
  Discriminator d_a, d_b;
  Classifier classifier;
  FeatureStats stats;
  Var a, b;
};

Toy make_toy(const GradcheckOptions& o) {
  const GeneratorConfig gc{2, 1, false};  // random head so every layer carries gradient
  ClassifierConfig cc;
  cc.input_size = o.size;
  cc.stage_widths = {4, 6, 8};
  cc.blocks_per_stage = 1;
  const int width = camera_feature_width(kBins, cc.feature_dim());
  const DiscriminatorConfig dc{width, 12};
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> pix(0.25, 0.75);
  auto batch = [&] {
    Tensor t({o.batch, 3, o.size, o.size});
    for (auto& v : t.values()) v = pix(rng);
    return t;
  };
  Toy toy{ResidualGenerator(gc, o.seed + 1), ResidualGenerator(gc, o.seed + 2),
          Discriminator(dc, o.seed + 3),     Discriminator(dc, o.seed + 4),
          Classifier(cc, o.seed + 5),        FeatureStats{},
          constant(batch()),                 constant(batch())};
  std::uniform_real_distribution<double> shift(-0.5, 0.5), scale(0.5, 2.0);
  for (int j = 0; j < width; ++j) {
    toy.stats.mean.push_back(shift(rng));
    toy.stats.std.push_back(scale(rng));
  }
  return toy;
}

Var features(const Toy& t, const Var& images) {
  return camera_features(images, t.classifier, FeatureMode::kSoft, t.stats, kBins);
}

using Term = std::function<Var(const Toy&)>;

struct TermSpec {
  std::string name;
  Term eval;
  bool adversarial;
};

std::vector<TermSpec> terms() {
  return {
      {"gan_F",
       [](const Toy& t) {
         return adversarial_loss(t.d_b, features(t, t.b), features(t, transform(t.f, t.a).image));
       },
       true},
      {"gan_G",
       [](const Toy& t) {
         return adversarial_loss(t.d_a, features(t, t.a), features(t, transform(t.g, t.b).image));
       },
       true},
      {"cyc", [](const Toy& t) { return cycle_loss(t.f, t.g, t.a, t.b); }, false},
      {"idt", [](const Toy& t) { return identity_loss(t.f, t.g, t.a, t.b); }, false},
  };
}

GradcheckGroup check_group(const Toy& toy, const TermSpec& term, const std::string& name,
                           const nn::ParameterList& params, const GradcheckOptions& o,
                           std::mt19937_64& rng) {
  GradcheckGroup group{name, 0, 0, 0.0};
  for (const auto* p : {&toy.f.parameters(), &toy.g.parameters(), &toy.d_a.parameters(),
                        &toy.d_b.parameters(), &toy.classifier.parameters()}) {
    p->set_requires_grad(p == &params);
    p->zero_grad();
  }
  backward(term.eval(toy));

  std::vector<Var> vars = params.vars();
  std::vector<std::size_t> offsets{0};
  for (const Var& v : vars) offsets.push_back(offsets.back() + v.value().size());
  std::uniform_int_distribution<std::size_t> pick(0, offsets.back() - 1);
  NoGradGuard no_grad;
  struct Quotients {
    double coarse, fine, forward, backward;
  };
  auto quotients = [&](Var& v, std::size_t k) {
    const double saved = v.value()[k], h = o.step;
    auto at = [&](double dx) {
      v.mutable_value()[k] = saved + dx;
      return term.eval(toy).item();
    };
    const double f0 = at(0.0), up = at(h), down = at(-h), up2 = at(0.5 * h), down2 = at(-0.5 * h);
    v.mutable_value()[k] = saved;
    return Quotients{(up - down) / (2 * h), (up2 - down2) / h, (up2 - f0) / (0.5 * h), (f0 - down2) / (0.5 * h)};
  };
  // A LeakyReLU or clamp kink within the step makes the difference quotient
  // meaningless. Such draws show up as disagreement between step sizes or
  // between the one-sided slopes, and are replaced by another draw.
  const int max_draws = 10 * o.samples;
  for (int draw = 0; draw < max_draws && group.checked < o.samples; ++draw) {
    const std::size_t flat = pick(rng);
    std::size_t vi = 0;
    while (offsets[vi + 1] <= flat) ++vi;
    const std::size_t k = flat - offsets[vi];
    Var& v = vars[vi];
    const double analytic = (v.grad().size() ? v.grad()[k] : 0.0) * (o.corrupt_gradient ? 1.5 : 1.0);
    const Quotients q = quotients(v, k);
    const double fine = q.fine;
    if (relative_error(q.coarse, q.fine) > kSmoothness || relative_error(q.forward, q.backward) > o.tolerance) {
      ++group.skipped;
      continue;
    }
    group.max_rel_error = std::max(group.max_rel_error, relative_error(analytic, fine));
    ++group.checked;
  }
  return group;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff == 0.0) return 0.0;
  return diff / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

GradcheckReport run_gradcheck(const GradcheckOptions& o) {
  if (o.size < 16 || o.size % 16 != 0) fail(ErrorKind::kConfig, "gradcheck size must be a multiple of 16");
  if (o.samples < 1 || o.batch < 1 || !(o.step > 0.0)) fail(ErrorKind::kConfig, "invalid gradcheck options");
  const Toy toy = make_toy(o);
  std::mt19937_64 rng(o.seed ^ 0x5eedULL);
  GradcheckReport report;
  report.passed = true;
  for (const TermSpec& term : terms()) {
    GradcheckRow row;
    row.term = term.name;
    // Each adversarial term involves one generator and one discriminator.
    const bool uses_g = term.name == "gan_G";
    row.groups.push_back(check_group(toy, term, "generator",
                                     term.adversarial ? (uses_g ? toy.g.parameters() : toy.f.parameters())
                                                      : toy.f.parameters(),
                                     o, rng));
    if (!term.adversarial) {
      row.groups.push_back(check_group(toy, term, "generator_g", toy.g.parameters(), o, rng));
    } else {
      row.groups.push_back(check_group(toy, term, "discriminator",
                                       uses_g ? toy.d_a.parameters() : toy.d_b.parameters(), o, rng));
      row.groups.push_back(check_group(toy, term, "classifier", toy.classifier.parameters(), o, rng));
    }
    for (const auto& g : row.groups) row.max_rel_error = std::max(row.max_rel_error, g.max_rel_error);
    row.passed = row.max_rel_error < o.tolerance;
    for (const auto& g : row.groups) row.passed = row.passed && g.checked == o.samples;
    report.passed = report.passed && row.passed;
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string format_gradcheck(const GradcheckReport& report) {
  std::ostringstream out;
  out.precision(3);
  out << std::scientific;
  out << "term    max_rel_err  groups\n";
  for (const auto& row : report.rows) {
    out << row.term << std::string(8 - std::min<std::size_t>(8, row.term.size()), ' ') << row.max_rel_error
        << "    ";
    for (const auto& g : row.groups) {
      out << g.name << '=' << g.max_rel_error << '(' << g.checked;
      if (g.skipped) out << ", " << g.skipped << " kinked";
      out << ") ";
    }
    out << (row.passed ? "PASS" : "FAIL") << '\n';
  }
  out << (report.passed ? "gradcheck: PASS" : "gradcheck: FAIL") << '\n';
  return out.str();
}

}  // namespace camadapt
