#include <gtest/gtest.h>

#include <cmath>

#include "softnce/estimators.hpp"
#include "softnce/losses.hpp"
#include "test_util.hpp"

using namespace softnce;

namespace {

const Matrix kS = Matrix::from_rows({{1.2, -0.3, 0.5}, {0.1, 0.8, -0.6}, {0.4, 0.9, 1.5}});
const Matrix kSim = Matrix::from_rows({{0, 0.7, 0.3}, {0.25, 0, 0.75}, {0.6, 0.4, 0}});

}  // namespace

TEST(InfoNce, TwoByTwoHandValue) {
  EXPECT_NEAR(infonce(Matrix::from_rows({{2, 0}, {0, 2}})).value, 0.1269280110429726, 1e-15);
  EXPECT_NEAR(infonce(Matrix::from_rows({{2, 0}, {0, 2}})).value, 0.126928, 1e-6);
}

TEST(InfoNce, EqualEntriesGiveLogN) {
  for (std::size_t n : {2u, 5u, 32u}) EXPECT_NEAR(infonce(Matrix(n, n, 0.37)).value, std::log(static_cast<double>(n)), 1e-14);
}

TEST(InfoNce, FixedInstanceOracle) { EXPECT_NEAR(infonce(kS).value, 0.5766792072583926, 1e-14); }

TEST(InfoNce, GradientRowsSumToZeroAndValuePositive) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = testutil::random_matrix(rng, 6, 6, 4.0);
    const auto r = infonce(s);
    EXPECT_GT(r.value, 0.0);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(testutil::row_sum(r.grad, i), 0.0, 1e-15);
  }
}

TEST(InfoNce, StableForLargeLogits) {
  const auto r = infonce(Matrix::from_rows({{1000, 990}, {-1000, 1000}}));
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_TRUE(r.grad.all_finite());
  EXPECT_NEAR(r.value, 0.5 * std::log1p(std::exp(-10.0)), 1e-12);
}

TEST(SoftInfoNce, OnesWeightsEqualInfoNce) {
  Rng rng(6);
  for (std::size_t n : {2u, 3u, 8u}) {
    const auto s = testutil::random_matrix(rng, n, n, 2.0);
    const auto a = infonce(s), b = soft_infonce(s, Matrix(n, n, 1.0));
    EXPECT_NEAR(a.value, b.value, 1e-12);
    EXPECT_LE(max_abs_diff(a.grad, b.grad), 1e-12);
  }
}

TEST(SoftInfoNce, TwoByTwoWeightsAreOne) {
  // At N = 2 the single sim entry is 1, so any feasible (alpha, beta) gives w = 1.
  Rng rng(7);
  const auto s = testutil::random_matrix(rng, 2, 2, 2.0);
  const auto w = compute_weights(testutil::uniform_sim(2), 0.7, 1.3);
  EXPECT_LE(max_abs_diff(w, Matrix(2, 2, 1.0)), 1e-15);
  EXPECT_NEAR(soft_infonce(s, w).value, infonce(s).value, 1e-12);
}

TEST(SoftInfoNce, HandEvaluatedRows) {
  Matrix w = Matrix::from_rows({{1, 0.6, 1.4}, {1.4, 1, 0.6}, {0.6, 1.4, 1}});
  EXPECT_NEAR(soft_infonce(Matrix(3, 3), w).value, std::log(3.0), 1e-15);
}

TEST(SoftInfoNce, FixedInstanceOracles) {
  EXPECT_NEAR(soft_infonce(kS, compute_weights(kSim, 1.3, 0.7, 0.1)).value, 1.356940240859717, 1e-13);
  EXPECT_NEAR(soft_infonce(kS, compute_weights(kSim, 1.0, 1.0)).value, 0.6278814466296894, 1e-13);
}

TEST(SoftInfoNce, RejectsNonFiniteWeights) {
  Matrix w(3, 3, 1.0);
  w(0, 1) = std::nan("");
  EXPECT_THROW(soft_infonce(kS, w), NumericError);
  w(0, 1) = -5.0;
  w(0, 2) = -5.0;
  EXPECT_THROW(soft_infonce(Matrix(3, 3), w), NumericError);
}

TEST(SoftInfoNce, MonotoneInWeights) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng.below(6);
    const auto s = testutil::random_matrix(rng, n, n, 2.0);
    Matrix w(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) w(i, j) = i == j ? 1.0 : 0.1 + 2.0 * rng.uniform();
    const std::size_t i = rng.below(n);
    std::size_t j = rng.below(n);
    if (j == i) j = (j + 1) % n;
    Matrix lower = w;
    lower(i, j) *= 0.5;
    EXPECT_LT(soft_infonce(s, lower).value, soft_infonce(s, w).value);
  }
}

TEST(GradientWrtExp, ProportionalToWeights) {
  const auto ones = gradient_wrt_exp(kS, Matrix(3, 3, 1.0), 1);
  EXPECT_EQ(ones[0], ones[1]);
  EXPECT_EQ(ones[0], ones[2]);
  const Matrix w = Matrix::from_rows({{1, 0.6, 1.4}, {1, 1, 1}, {1, 1, 1}});
  const auto g = gradient_wrt_exp(kS, w, 0);
  EXPECT_NEAR(g[1] / g[2], 0.6 / 1.4, 1e-15);
}

TEST(GradientWrtExp, FixedInstanceOracle) {
  const auto g = gradient_wrt_exp(kS, compute_weights(kSim, 1.3, 0.7, 0.1), 0);
  EXPECT_NEAR(g[0], 0.02448051618236193, 1e-15);
  EXPECT_NEAR(g[1], 0.002448051618236193, 1e-16);
  EXPECT_NEAR(g[2], 0.15177920033064413, 1e-15);
}

TEST(GradientWrtExp, MatchesFiniteDifferencesInExpSpace) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng.below(5);
    const auto s = testutil::random_matrix(rng, n, n);
    Matrix w(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) w(i, j) = i == j ? 1.0 : 0.1 + rng.uniform();
    Matrix e(n, n), analytic(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto g = gradient_wrt_exp(s, w, i);
      for (std::size_t j = 0; j < n; ++j) {
        e(i, j) = std::exp(s(i, j));
        analytic(i, j) = g[j];
      }
    }
    auto f = [&](const Matrix& ex) {
      Matrix sl(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) sl(i, j) = std::log(ex(i, j));
      return soft_infonce(sl, w).value;
    };
    // Off-diagonal entries only: the diagonal also appears in the numerator.
    Matrix off = analytic;
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        Matrix up = e, down = e;
        up(i, j) += h;
        down(i, j) -= h;
        const double numeric = (f(up) - f(down)) / (2.0 * h);
        worst = std::max(worst, std::abs(numeric - off(i, j)) / std::abs(off(i, j)));
      }
    EXPECT_LE(worst, 1e-6);
  }
}

TEST(Bce, TwoByTwoUniform) {
  EXPECT_NEAR(bce_loss(Matrix(2, 2, 0.3), testutil::uniform_sim(2)).value, std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_loss(Matrix(2, 2, 0.3), testutil::uniform_sim(2)).value, 0.693147, 1e-6);
}

TEST(Bce, FixedInstanceOracle) { EXPECT_NEAR(bce_loss(kS, kSim).value, 0.8555179790164616, 1e-13); }

TEST(Bce, ConfidentPositiveContributesNothing) {
  // Positives at p -> 1: only the negatives' (1 - target) log(1 - p) terms and
  // the clipped target log p terms remain.
  const std::size_t n = 3;
  Matrix s(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) s(i, i) = 60.0;
  const auto sim = testutil::uniform_sim(n);
  double expected = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double p = std::max(std::exp(-60.0) / (1.0 + 2.0 * std::exp(-60.0)), kProbabilityClip);
      expected -= sim(i, j) * std::log(p) + (1.0 - sim(i, j)) * std::log1p(-p);
    }
  expected /= static_cast<double>(n * n);
  const auto r = bce_loss(s, sim);
  EXPECT_NEAR(r.value, expected, 1e-12);
  EXPECT_TRUE(r.grad.all_finite());
}

TEST(Bce, ExtremeLogitsStayFinite) {
  const auto r = bce_loss(Matrix::from_rows({{500, -500, 0}, {-500, 500, 500}, {0, 0, -500}}), kSim);
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_TRUE(r.grad.all_finite());
  const auto q = bce_loss_negative_softmax(Matrix::from_rows({{0, 500, -500}, {-500, 0, 500}, {0, 0, 0}}), kSim);
  EXPECT_TRUE(std::isfinite(q.value));
  EXPECT_TRUE(q.grad.all_finite());
}

TEST(Weighted, ZeroSimReducesToInfoNce) {
  const auto a = weighted_infonce(kS, Matrix(3, 3));
  const auto b = infonce(kS);
  EXPECT_NEAR(a.value, b.value, 1e-15);
  EXPECT_LE(max_abs_diff(a.grad, b.grad), 1e-15);
}

TEST(Weighted, EqualLogitsGiveTwoLogN) {
  Rng rng(12);
  for (std::size_t n : {3u, 7u}) EXPECT_NEAR(weighted_infonce(Matrix(n, n, 1.1), testutil::random_sim(rng, n)).value, 2.0 * std::log(static_cast<double>(n)), 1e-13);
}

TEST(Weighted, FixedInstanceOracle) { EXPECT_NEAR(weighted_infonce(kS, kSim).value, 2.2816917478501186, 1e-13); }

TEST(KlReg, MatchingDistributionHasNoPenalty) {
  const std::size_t n = 4;
  Rng rng(13);
  const auto s = testutil::random_matrix(rng, n, n);
  const auto p = normalize_scores(s, 1.0);  // model distribution over negatives
  EXPECT_NEAR(kl_reg_infonce(s, p, 1.3, 0.7).value, 1.3 * infonce(s).value, 1e-14);
  EXPECT_NEAR(kl_reg_infonce(s, testutil::uniform_sim(n), 1.3, 0.0).value, 1.3 * infonce(s).value, 1e-14);
}

TEST(KlReg, FixedInstanceOracle) { EXPECT_NEAR(kl_reg_infonce(kS, kSim, 1.3, 0.7).value, 0.933351906013, 1e-11); }

TEST(Fnc, ZeroKIsInfoNce) {
  const auto a = fnc_infonce(kS, FncMode::topk, 0, 0.7), b = infonce(kS);
  EXPECT_NEAR(a.value, b.value, 1e-15);
  EXPECT_LE(max_abs_diff(a.grad, b.grad), 1e-15);
}

TEST(Fnc, MaximalKKeepsOneNegative) {
  Rng rng(14);
  const std::size_t n = 6;
  const auto s = testutil::random_matrix(rng, n, n);
  const auto keep = fnc_keep_mask(s, FncMode::topk, static_cast<int>(n - 2), 0.7);
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(testutil::row_sum(keep, i), 2.0);
  EXPECT_THROW(fnc_keep_mask(s, FncMode::topk, static_cast<int>(n - 1), 0.7), ConfigError);
  EXPECT_THROW(fnc_keep_mask(s, FncMode::topk, -1, 0.7), ConfigError);
  EXPECT_THROW(fnc_keep_mask(s, FncMode::threshold, 1, 0.0), ConfigError);
  EXPECT_THROW(fnc_keep_mask(s, FncMode::threshold, 1, 1.5), ConfigError);
}

TEST(Fnc, TiesGoToSmallerColumn) {
  const auto keep = fnc_keep_mask(Matrix::from_rows({{5, 1, 1, 1}, {2, 0, 2, 2}, {0, 0, 0, 0}, {3, 3, 3, 3}}),
                                  FncMode::topk, 1, 0.7);
  EXPECT_EQ(keep(0, 1), 0.0);
  EXPECT_EQ(keep(0, 2), 1.0);
  EXPECT_EQ(keep(1, 0), 0.0);
  EXPECT_EQ(keep(2, 0), 0.0);
  EXPECT_EQ(keep(3, 0), 0.0);
}

TEST(Fnc, ThresholdWithoutRemovalsIsInfoNce) {
  EXPECT_NEAR(fnc_infonce(kS, FncMode::threshold, 0, 0.7).value, infonce(kS).value, 1e-15);
}

TEST(Fnc, FixedInstanceOracles) {
  EXPECT_NEAR(fnc_infonce(kS, FncMode::topk, 1, 0.7).value, 0.23638867100554473, 1e-14);
  EXPECT_NEAR(fnc_infonce(kS, FncMode::threshold, 0, 0.4).value, 0.3481536451480896, 1e-14);
}

TEST(Fnc, EqualsSoftInfoNceWithMask) {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng.below(8);
    const auto s = testutil::random_matrix(rng, n, n, 2.0);
    for (auto mode : {FncMode::topk, FncMode::threshold}) {
      const int k = static_cast<int>(rng.below(n - 1));
      const double ratio = 0.1 + 0.9 * rng.uniform();
      const auto a = fnc_infonce(s, mode, k, ratio);
      const auto b = soft_infonce(s, fnc_keep_mask(s, mode, k, ratio));
      EXPECT_NEAR(a.value, b.value, 1e-12);
      EXPECT_LE(max_abs_diff(a.grad, b.grad), 1e-12);
    }
  }
}

TEST(LossGradients, MatchFiniteDifferences) {
  Rng rng(16);
  for (std::size_t n : {4u, 8u})
    for (int trial = 0; trial < 10; ++trial) {
      const auto s = testutil::random_matrix(rng, n, n, 1.5);
      const auto sim = testutil::random_sim(rng, n, 0.5);
      const auto w = compute_weights(sim, 1.3, 0.7, 0.1);
      const std::vector<std::pair<const char*, std::function<LossResult(const Matrix&)>>> losses = {
          {"infonce", [&](const Matrix& x) { return infonce(x); }},
          {"soft", [&](const Matrix& x) { return soft_infonce(x, w); }},
          {"bce", [&](const Matrix& x) { return bce_loss(x, sim); }},
          {"bce_neg", [&](const Matrix& x) { return bce_loss_negative_softmax(x, sim); }},
          {"weighted", [&](const Matrix& x) { return weighted_infonce(x, sim); }},
          {"klreg", [&](const Matrix& x) { return kl_reg_infonce(x, sim, 1.3, 0.7); }},
          {"fnc_topk", [&](const Matrix& x) { return fnc_infonce(x, FncMode::topk, 1, 0.7); }},
          {"fnc_threshold", [&](const Matrix& x) { return fnc_infonce(x, FncMode::threshold, 0, 0.7); }},
      };
      for (const auto& [name, loss] : losses) {
        const double err =
            testutil::fd_rel_error([&](const Matrix& x) { return loss(x).value; }, s, loss(s).grad);
        EXPECT_LE(err, 1e-5) << name << " n=" << n;
      }
    }
}

TEST(ComputeLoss, DispatchAndMissingInputs) {
  LossConfig c;
  c.kind = LossKind::soft;
  EXPECT_THROW(compute_loss(c, kS, &kSim, nullptr), ConfigError);
  c.kind = LossKind::weighted;
  EXPECT_THROW(compute_loss(c, kS, nullptr, nullptr), ConfigError);
  EXPECT_NEAR(compute_loss(c, kS, &kSim, nullptr).value, weighted_infonce(kS, kSim).value, 0.0);
  c.kind = LossKind::klreg;
  c.lambda_kl = -1.0;
  EXPECT_THROW(validate(c), ConfigError);
  EXPECT_TRUE(needs_estimates(LossKind::soft));
  EXPECT_FALSE(needs_estimates(LossKind::fnc_topk));
  EXPECT_FALSE(needs_estimates(LossKind::infonce));
}
