// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"

namespace fedssl {
namespace {

/// alpha0 * CE(v, p) + alpha1 * KL(v, u) for a two-class v = (x, 1 - x).
double two_class_objective(double x, const std::vector<double>& p, double a0, double a1) {
  const std::vector<double> v{x, 1.0 - x};
  double value = 0.0;
  for (std::size_t c = 0; c < 2; ++c) value -= a0 * v[c] * std::log(p[c]);
  return value + a1 * testing::reference_kl_uniform(v);
}

/// Golden-section minimiser on [0, 1]; the objective is strictly convex.
double golden_section(const std::vector<double>& p, double a0, double a1) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double m1 = hi - phi * (hi - lo);
    const double m2 = lo + phi * (hi - lo);
    if (two_class_objective(m1, p, a0, a1) < two_class_objective(m2, p, a0, a1)) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  return 0.5 * (lo + hi);
}

TEST(PseudoLabel, HardLabelBreaksTiesTowardSmallestIndex) {
  const std::vector<double> tie{0.2, 0.4, 0.4};
  EXPECT_EQ(hard_label(tie), (std::vector<double>{0.0, 1.0, 0.0}));
  const std::vector<double> flat{0.25, 0.25, 0.25, 0.25};
  EXPECT_EQ(hard_label(flat), (std::vector<double>{1.0, 0.0, 0.0, 0.0}));
}

TEST(PseudoLabel, SharpenWithUnitRatioIsIdentity) {
  const std::vector<double> p{0.1, 0.6, 0.3};
  EXPECT_EQ(sharpen(p, 1.0), p);
}

TEST(PseudoLabel, SharpenMatchesPowerFormula) {
  const std::vector<double> p{0.1, 0.6, 0.3};
  const double r = 2.5;
  const auto s = sharpen(p, r);
  double z = 0.0;
  for (double v : p) z += std::pow(v, r);
  for (std::size_t c = 0; c < p.size(); ++c) EXPECT_NEAR(s[c], std::pow(p[c], r) / z, 1e-15);
}

TEST(PseudoLabel, SharpeningConcentratesAndFlatteningSpreads) {
  const std::vector<double> p{0.1, 0.6, 0.3};
  EXPECT_GT(sharpen(p, 3.0)[1], 0.6);
  EXPECT_LT(sharpen(p, 0.2)[1], 0.6);
  const auto near_uniform = sharpen(p, 1e-9);
  for (double v : near_uniform) EXPECT_NEAR(v, 1.0 / 3.0, 1e-8);
}

TEST(PseudoLabel, SharpenSurvivesZeroProbabilities) {
  const std::vector<double> p{0.0, 1.0, 0.0};
  const auto s = sharpen(p, 0.5);
  double total = 0.0;
  for (double v : s) {
    EXPECT_TRUE(std::isfinite(v));
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(PseudoLabel, ClosedFormMinimisesTheTwoClassObjective) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> prob(0.02, 0.98);
  std::uniform_real_distribution<double> alpha(0.2, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double q = prob(rng);
    const std::vector<double> p{q, 1.0 - q};
    const double a0 = alpha(rng);
    const double a1 = alpha(rng);
    EXPECT_NEAR(sharpen(p, a0 / a1)[0], golden_section(p, a0, a1), 1e-7);
  }
}

TEST(PseudoLabel, OracleResolvesEntriesFarBelowEpsilon) {
  const std::vector<double> p{0.0112103, 0.173923, 0.814867};
  const auto oracle = oracle_solve(p, 6.66316 * 0.689513, 0.689513);
  const auto closed = sharpen(p, 6.66316);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(oracle[c], closed[c], 1e-9);
  EXPECT_LT(oracle[0], 1e-12);
}

TEST(PseudoLabel, OracleRejectsNonPositiveRegularizer) {
  const std::vector<double> p{0.5, 0.5};
  EXPECT_THROW(oracle_solve(p, 1.0, 0.0), std::exception);
}

TEST(PseudoLabel, TableUpdateUsesHardLabelsWhenAlpha1IsZero) {
  const auto params = testing::random_params({4, 5, 3}, 7);
  const DenseMatrix x = testing::random_matrix(6, 4, 8);
  const auto soft = update_pseudo_labels(params, x, 1.0, 0.5, 3);
  const auto hard = update_pseudo_labels(params, x, 1.0, 0.0, 3);
  const DenseMatrix probs = forward(params, x);
  EXPECT_EQ(soft.client_id, 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> row(probs.row(i).data(), probs.row(i).data() + probs.cols());
    const auto want_soft = sharpen(row, 2.0);
    const auto want_hard = hard_label(row);
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      EXPECT_NEAR(soft.rows(i, c), want_soft[static_cast<std::size_t>(c)], 1e-15);
      EXPECT_EQ(hard.rows(i, c), want_hard[static_cast<std::size_t>(c)]);
    }
  }
}

TEST(PseudoLabel, UniformTableRowsSumToOne) {
  const auto t = uniform_table(2, 4, 5);
  EXPECT_EQ(t.size(), 4u);
  EXPECT_NEAR(t.rows.sum(), 4.0, 1e-14);
}

}  // namespace
}  // namespace fedssl
