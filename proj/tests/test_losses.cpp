#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "camadapt/error.hpp"
#include "camadapt/losses.hpp"
#include "oracles.hpp"
#include "stubs.hpp"

using namespace camadapt;

namespace {

Var images(int n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  Tensor t({n, 3, size, size});
  for (auto& v : t.values()) v = u(rng);
  return constant(t);
}

Var column(const std::vector<double>& v) { return constant(Tensor({static_cast<int>(v.size()), 1}, v)); }

}  // namespace

TEST(AdversarialLoss, HalfDiscriminatorGivesTwoLogHalf) {
  Discriminator d({5, 4}, 1);
  // Zero output layer: D == 0.5 everywhere.
  Var w = d.output().weight, b = d.output().bias;
  w.mutable_value().fill(0.0);
  b.mutable_value().fill(0.0);
  const Var real = constant(Tensor({3, 5}, 0.3)), fake = constant(Tensor({4, 5}, -1.0));
  EXPECT_NEAR(adversarial_loss(d, real, fake).item(), 2.0 * std::log(0.5), 1e-12);
  EXPECT_NEAR(adversarial_loss(d, real, fake).item(), -1.3863, 1e-4);
}

TEST(AdversarialLoss, PerfectDiscriminatorApproachesZeroFromBelow) {
  const double v = adversarial_loss_from_logits(column({12.0, 14.0}), column({-13.0, -12.0})).item();
  EXPECT_LT(v, 0.0);
  EXPECT_GT(v, -1e-4);
}

TEST(AdversarialLoss, MatchesHandOracleOnRandomLogits) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> r(4), f(4);
    for (auto& v : r) v = z(rng);
    for (auto& v : f) v = z(rng);
    double expect = 0.0;
    for (double v : r) expect += oracle::log_sigmoid(v) / 4.0;
    for (double v : f) expect += oracle::log_one_minus_sigmoid(v) / 4.0;
    EXPECT_NEAR(adversarial_loss_from_logits(column(r), column(f)).item(), expect, 1e-6);
  }
}

TEST(AdversarialLoss, ThroughDiscriminatorMatchesSigmoidOracle) {
  Discriminator d({6, 8}, 9);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  Tensor real({4, 6}), fake({4, 6});
  for (auto& v : real.values()) v = z(rng);
  for (auto& v : fake.values()) v = z(rng);
  double expect = 0.0;
  for (int i = 0; i < 4; ++i) {
    std::vector<double> rr(real.data() + 6 * i, real.data() + 6 * i + 6);
    std::vector<double> ff(fake.data() + 6 * i, fake.data() + 6 * i + 6);
    expect += std::log(d.discriminate(rr)) / 4.0 + std::log(1.0 - d.discriminate(ff)) / 4.0;
  }
  EXPECT_NEAR(adversarial_loss(d, constant(real), constant(fake)).item(), expect, 1e-6);
}

TEST(AdversarialLoss, LogsClampedAtFloor) {
  // D(fake) -> 1 makes log(1 - D) unbounded; the floor caps it at log(1e-7).
  const double v = adversarial_loss_from_logits(column({40.0}), column({60.0})).item();
  EXPECT_NEAR(v, std::log(kLogFloor), 1e-9);
}

TEST(AdversarialLoss, EmptyBatchRejected) {
  EXPECT_THROW(adversarial_loss_from_logits(constant(Tensor({0, 1})), column({0.0})), Error);
}

TEST(AdversarialLoss, NonSaturatingVariant) {
  const Var r = column({0.3, -0.2}), f = column({1.0, -0.5});
  const double expect = (oracle::log_sigmoid(0.3) + oracle::log_sigmoid(-0.2)) / 2.0 -
                        (oracle::log_sigmoid(1.0) + oracle::log_sigmoid(-0.5)) / 2.0;
  EXPECT_NEAR(generator_adversarial_from_logits(r, f, true).item(), expect, 1e-9);
  EXPECT_DOUBLE_EQ(generator_adversarial_from_logits(r, f, false).item(),
                   adversarial_loss_from_logits(r, f).item());
}

TEST(CycleLoss, ZeroResidueIsZero) {
  const stub::ConstantResidue zero(0.0);
  const Var a = images(2, 16, 1), b = images(2, 16, 2);
  EXPECT_EQ(cycle_loss(zero, zero, a, b).item(), 0.0);
  EXPECT_EQ(identity_loss(zero, zero, a, b).item(), 0.0);
}

TEST(CycleLoss, PerfectCycleCancels) {
  // F adds 0.1 everywhere; G returns -0.1 everywhere, so G(a_B) = -F(a).
  const stub::ConstantResidue f(0.1), g(-0.1);
  const Var a = images(2, 16, 3), b = images(2, 16, 4);
  const CyclePasses p = run_cycle(f, g, a, b);
  EXPECT_NEAR(ops::mean_square(ops::add(p.a_to_b.residue, p.g_of_a_b)).item(), 0.0, 1e-15);
}

TEST(CycleLoss, ConstantResiduesHandComputed) {
  const stub::ConstantResidue f(0.1), g(0.3);
  const Var a = images(2, 16, 5), b = images(2, 16, 6);
  const CyclePasses p = run_cycle(f, g, a, b);
  EXPECT_NEAR(ops::mean_square(ops::add(p.a_to_b.residue, p.g_of_a_b)).item(), 0.16, 1e-12);
  // Both halves are (0.1 + 0.3)^2.
  EXPECT_NEAR(cycle_loss(f, g, a, b).item(), 0.32, 1e-12);
  EXPECT_NEAR(cycle_loss(f, g, a, b, ResidueNorm::kL1).item(), 0.8, 1e-12);
}

TEST(CycleLoss, InputDependentStubsMatchOracle) {
  // F(x) = 0.5 x - 0.2, G(x) = -0.3 x; a_B is clamped, the residue is not.
  const stub::FunctionResidue f([](const Var& x) { return ops::add_scalar(ops::scale(x, 0.5), -0.2); });
  const stub::FunctionResidue g([](const Var& x) { return ops::scale(x, -0.3); });
  const Var a = images(1, 16, 7), b = images(1, 16, 8);
  double first = 0.0, second = 0.0;
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double fa = 0.5 * av[i] - 0.2;
    const double ab = std::clamp(av[i] + fa, 0.0, 1.0);
    first += std::pow(fa - 0.3 * ab, 2);
    const double gb = -0.3 * bv[i];
    const double ba = std::clamp(bv[i] + gb, 0.0, 1.0);
    second += std::pow(gb + 0.5 * ba - 0.2, 2);
  }
  const double n = static_cast<double>(av.size());
  EXPECT_NEAR(cycle_loss(f, g, a, b).item(), first / n + second / n, 1e-12);
}

TEST(IdentityLoss, CrossPairing) {
  // Only F's residue on domain-B images counts for F.
  const stub::ConstantResidue f(0.2), zero(0.0);
  const Var a = images(2, 16, 9), b = images(2, 16, 10);
  EXPECT_NEAR(identity_loss(f, zero, a, b).item(), 0.04, 1e-12);
  const stub::FunctionResidue fb([](const Var& x) { return ops::scale(x, 0.1); });
  double expect = 0.0;
  for (double v : b.value().storage()) expect += 0.01 * v * v;
  expect /= static_cast<double>(b.value().size());
  EXPECT_NEAR(identity_loss(fb, zero, a, b).item(), expect, 1e-12);
}

TEST(IdentityLoss, RandomStubResiduesMatchMeanSquareOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor rf({2, 3, 16, 16}), rg({2, 3, 16, 16});
  for (auto& v : rf.values()) v = u(rng);
  for (auto& v : rg.values()) v = u(rng);
  const stub::FunctionResidue f([&](const Var&) { return constant(rf); });
  const stub::FunctionResidue g([&](const Var&) { return constant(rg); });
  double sf = 0.0, sg = 0.0;
  for (double v : rf.storage()) sf += v * v;
  for (double v : rg.storage()) sg += v * v;
  const double n = static_cast<double>(rf.size());
  EXPECT_NEAR(identity_loss(f, g, images(2, 16, 1), images(2, 16, 2)).item(), sf / n + sg / n, 1e-6);
}

TEST(TotalLoss, WorkedExample) {
  const LossBreakdown b = total_loss({-1.3863, -1.3863, 0.01, 0.04}, 0.2, 5.0);
  EXPECT_NEAR(b.total, -2.7146, 1e-9);
  EXPECT_EQ(b.lambda1, 0.2);
  EXPECT_EQ(b.lambda2, 5.0);
  EXPECT_EQ(total_loss({}, 0.2, 5.0).total, 0.0);
}

TEST(TotalLoss, DefaultsAndRandomOracle) {
  EXPECT_EQ(kDefaultLambda1, 0.2);
  EXPECT_EQ(kDefaultLambda2, 5.0);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-3, 3), pos(0, 2);
  for (int t = 0; t < 100; ++t) {
    const LossComponents c{u(rng), u(rng), pos(rng), pos(rng)};
    const double l1 = pos(rng), l2 = pos(rng);
    const LossBreakdown b = total_loss(c, l1, l2);
    EXPECT_DOUBLE_EQ(b.total, c.gan_f + c.gan_g + l1 * c.idt + l2 * c.cyc);
    const double v = total_loss(constant(Tensor({1}, c.gan_f)), constant(Tensor({1}, c.gan_g)),
                                constant(Tensor({1}, c.idt)), constant(Tensor({1}, c.cyc)), l1, l2)
                         .item();
    EXPECT_NEAR(v, b.total, 1e-12);
  }
}

TEST(TotalLoss, NonFiniteTermIsNamed) {
  try {
    total_loss({0.0, 0.0, std::nan(""), 0.0});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumerical);
    EXPECT_NE(std::string(e.what()).find("cyc"), std::string::npos);
  }
  try {
    total_loss({0.0, INFINITY, 0.0, 0.0});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("gan_G"), std::string::npos);
  }
}

TEST(LossProperties, NonNegativeForRandomGeneratorsBothNorms) {
  GeneratorConfig gc{2, 1, false};
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    ResidualGenerator f(gc, seed), g(gc, seed + 10);
    const Var a = images(1, 32, seed), b = images(1, 32, seed + 5);
    for (ResidueNorm norm : {ResidueNorm::kL2, ResidueNorm::kL1}) {
      EXPECT_GE(cycle_loss(f, g, a, b, norm).item(), 0.0);
      EXPECT_GE(identity_loss(f, g, a, b, norm).item(), 0.0);
    }
    EXPECT_NE(cycle_loss(f, g, a, b, ResidueNorm::kL2).item(), cycle_loss(f, g, a, b, ResidueNorm::kL1).item());
  }
}

TEST(LossProperties, IdentityStartGivesExactZeros) {
  ResidualGenerator f(GeneratorConfig{4, 2, true}, 1), g(GeneratorConfig{4, 2, true}, 2);
  const Var a = images(2, 32, 1), b = images(2, 32, 2);
  const CyclePasses p = run_cycle(f, g, a, b);
  EXPECT_EQ(cycle_loss(p).item(), 0.0);
  EXPECT_EQ(identity_loss(p).item(), 0.0);
  EXPECT_EQ(p.a_to_b.image.value().storage(), a.value().storage());
  EXPECT_EQ(p.b_to_a.image.value().storage(), b.value().storage());
}

TEST(ResidueNormParsing, RoundTrip) {
  EXPECT_EQ(parse_residue_norm("l1"), ResidueNorm::kL1);
  EXPECT_EQ(parse_residue_norm(to_string(ResidueNorm::kL2)), ResidueNorm::kL2);
  EXPECT_THROW(parse_residue_norm("l3"), Error);
}
