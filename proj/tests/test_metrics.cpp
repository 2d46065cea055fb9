#include <gtest/gtest.h>

#include <random>

#include "camadapt/error.hpp"
#include "camadapt/metrics.hpp"
#include "oracles.hpp"

using namespace camadapt;

TEST(Qwk, PerfectAgreementIsOne) {
  const std::vector<int> y{0, 1, 2, 3, 4, 2, 2, 0};
  EXPECT_DOUBLE_EQ(quadratic_weighted_kappa(y, y, 5), 1.0);
}

TEST(Qwk, FlippedBinaryIsMinusOne) {
  EXPECT_DOUBLE_EQ(quadratic_weighted_kappa({0, 0, 1, 1}, {1, 1, 0, 0}, 2), -1.0);
}

TEST(Qwk, MatchesCountOracleOnRandomInstances) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> cls(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> a(200), b(200);
    for (int i = 0; i < 200; ++i) {
      a[i] = cls(rng);
      b[i] = std::uniform_real_distribution<double>()(rng) < 0.6 ? a[i] : cls(rng);
    }
    EXPECT_NEAR(quadratic_weighted_kappa(a, b, 5), oracle::weighted_kappa(a, b, 5), 1e-10);
  }
}

TEST(Qwk, DegenerateDenominatorDefinedAsOne) {
  const KappaResult r = quadratic_weighted_kappa_checked({2, 2, 2}, {2, 2, 2}, 5);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.value, 1.0);
}

TEST(Qwk, Errors) {
  EXPECT_THROW(quadratic_weighted_kappa({0, 1}, {0}, 2), Error);
  EXPECT_THROW(quadratic_weighted_kappa({0, 5}, {0, 1}, 5), Error);
  EXPECT_THROW(quadratic_weighted_kappa({}, {}, 5), Error);
}

TEST(Qwk, SymmetricInArguments) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cls(0, 4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> a(30), b(30);
    for (int i = 0; i < 30; ++i) a[i] = cls(rng), b[i] = cls(rng);
    EXPECT_NEAR(quadratic_weighted_kappa(a, b, 5), quadratic_weighted_kappa(b, a, 5), 1e-12);
  }
}

TEST(Qwk, ShiftByOneIsImperfect) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> cls(0, 4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> a(25), b(25);
    for (int i = 0; i < 25; ++i) a[i] = cls(rng);
    a[0] = 0;
    a[1] = 3;  // labels vary
    for (int i = 0; i < 25; ++i) b[i] = std::min(4, a[i] + 1);
    EXPECT_LT(quadratic_weighted_kappa(a, b, 5), 1.0);
  }
}

TEST(Auc, WorkedExamples) {
  EXPECT_DOUBLE_EQ(auc({1, 0, 1, 0}, {0.9, 0.8, 0.7, 0.1}), 0.75);
  EXPECT_DOUBLE_EQ(auc({1, 1, 0, 0}, {0.5, 0.5, 0.5, 0.5}), 0.5);
  EXPECT_DOUBLE_EQ(auc({1, 1, 0, 0}, {0.9, 0.8, 0.3, 0.1}), 1.0);
}

TEST(Auc, SingleClassRejected) {
  EXPECT_THROW(auc({1, 1}, {0.1, 0.2}), Error);
  EXPECT_THROW(auc({0, 0}, {0.1, 0.2}), Error);
  EXPECT_THROW(auc({0, 2}, {0.1, 0.2}), Error);
}

TEST(Auc, PairwiseRankSumAndRocAgree) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 60);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng() % 2);
      s[i] = static_cast<double>(rng() % 7) / 7.0;  // plenty of ties
    }
    y[0] = 0;
    y[1] = 1;
    const double ref = oracle::roc_area(y, s);
    EXPECT_NEAR(auc_pairwise(y, s), ref, 1e-10);
    EXPECT_NEAR(auc_rank_sum(y, s), ref, 1e-10);
  }
}

TEST(Auc, ComplementWithoutTies) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  std::vector<int> y(80);
  std::vector<double> s(80), neg(80);
  for (int i = 0; i < 80; ++i) {
    y[i] = i % 3 == 0;
    s[i] = z(rng);
    neg[i] = -s[i];
  }
  EXPECT_NEAR(auc(y, s) + auc(y, neg), 1.0, 1e-12);
}

TEST(Auc, MonotoneTransformInvariant) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z;
  std::vector<int> y(100);
  std::vector<double> s(100), t(100);
  for (int i = 0; i < 100; ++i) {
    y[i] = i % 2;
    s[i] = z(rng) + 0.5 * y[i];
    t[i] = std::exp(3.0 * s[i]) + 7.0;
  }
  EXPECT_DOUBLE_EQ(auc(y, s), auc(y, t));
}

TEST(Auc, LargeInputUsesRankSum) {
  std::mt19937_64 rng(7);
  const int n = static_cast<int>(kExactAucLimit) + 500;
  std::vector<int> y(n);
  std::vector<double> s(n);
  for (int i = 0; i < n; ++i) {
    y[i] = static_cast<int>(rng() % 2);
    s[i] = static_cast<double>(rng() % 1000);
  }
  EXPECT_NEAR(auc(y, s), auc_pairwise(y, s), 1e-10);
}

TEST(EvaluateCell, ValueEqualsDirectMetric) {
  CellPredictions cell{{0, 1, 1, 0}, {0, 1, 0, 0}, {0.2, 0.9, 0.4, 0.3}};
  const EvalResult r = evaluate_cell("B", Task::kBinary, cell, true);
  EXPECT_EQ(r.metric_name, MetricName::kAuc);
  EXPECT_DOUBLE_EQ(r.value, auc(cell.labels, cell.scores));
  EXPECT_EQ(r.n_samples, 4u);
  const EvalResult q = evaluate_cell("B", Task::kGrading5, {{0, 4, 2}, {0, 3, 2}, {}}, false);
  EXPECT_EQ(q.metric_name, MetricName::kQwk);
  EXPECT_DOUBLE_EQ(q.value, quadratic_weighted_kappa({0, 4, 2}, {0, 3, 2}, 5));
  EXPECT_THROW(evaluate_cell("B", Task::kBinary, {}, false), Error);
}

TEST(ResultTable, SourceRowHasNoAdaptedValue) {
  std::vector<EvalResult> rs = {{"C", MetricName::kAuc, 0.8, 10, false},
                                {"A", MetricName::kAuc, 0.95, 10, false},
                                {"C", MetricName::kAuc, 0.9, 10, true}};
  const ResultTable t = make_table(rs);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].brand, "A");
  EXPECT_FALSE(t.rows[0].has_adapted);
  EXPECT_TRUE(t.rows[1].has_adapted);
  EXPECT_DOUBLE_EQ(t.rows[1].adapted, 0.9);
}
