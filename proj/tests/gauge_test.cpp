#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "svdscope/gauge.hpp"

using namespace svdscope;

TEST(Gauge, StepDriftIsExactlySecondOrder) {
  Rng rng(1);
  const Matrix w1 = random_gaussian(4, 6, rng);
  const Matrix w2 = random_gaussian(6, 3, rng);
  const Matrix a = random_skew(6, 2);
  for (double eta : {0.1, 0.01}) {
    const auto [w1p, w2p] = gauge_step(w1, w2, a, eta);
    // (I + eta A)(I - eta A) = I - eta^2 A^2.
    const Matrix expected = w1 * w2 - eta * eta * w1 * a * a * w2;
    EXPECT_LE((w1p * w2p - expected).norm(), 1e-12);
  }
}

TEST(Gauge, CostMatchesTraceForm) {
  Rng rng(2);
  const Matrix w1 = random_gaussian(5, 8, rng);
  const Matrix w2 = random_gaussian(8, 5, rng);
  const Matrix a = random_skew(8, 3);
  const auto [w1p, w2p] = gauge_step(w1, w2, a, 0.05);
  const double cost = parameter_cost(w1, w2, w1p, w2p);
  EXPECT_NEAR(cost, gauge_cost_trace(w1, w2, a, 0.05), 1e-12 * cost);
  // Elementwise form of the same quantity: ||W1 A||^2 + ||A W2||^2 scaled.
  EXPECT_NEAR(cost, 0.0025 * ((w1 * a).squaredNorm() + (a * w2).squaredNorm()), 1e-12 * cost);
}

TEST(Gauge, InputValidation) {
  const Matrix w = Matrix::Ones(3, 3);
  Matrix not_skew = Matrix::Zero(3, 3);
  not_skew(0, 1) = 1.0;
  EXPECT_THROW(gauge_step(w, w, not_skew, 0.1), DomainError);
  EXPECT_THROW(gauge_step(w, w, random_skew(3, 1), 1.0), DomainError);
  EXPECT_THROW(gauge_step(w, w, random_skew(3, 1), -0.1), DomainError);
  EXPECT_THROW(gauge_step(w, w, random_skew(4, 1), 0.1), ShapeError);
}

TEST(Gauge, SigmaPerturbationShiftsEverySingularValue) {
  Rng rng(3);
  const Matrix w = random_gaussian(6, 4, rng);
  const Vector before = compute_svd(w).sigma;
  const Vector after = compute_svd(sigma_perturb_step(w, 0.01)).sigma;
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(after(i) - before(i), 0.01, 1e-12);
}

TEST(Gauge, SkewExponentialOfPlaneGenerator) {
  Matrix s(2, 2);
  s << 0.0, -0.7, 0.7, 0.0;
  EXPECT_LE((skew_exponential(s) - rotation2d(0.7)).norm(), 1e-14);
}

TEST(Gauge, AccumulatedSmallRotationsStayNearOrthogonal) {
  std::vector<Matrix> gens;
  for (int t = 0; t < 50; ++t) gens.push_back(random_skew(5, static_cast<std::uint64_t>(t)));
  const auto res = accumulate_rotations(gens, 1e-3);
  EXPECT_LE(res.exponential_defect, 1e-12);
  EXPECT_GT(res.product_defect, 0.0);
  EXPECT_LE(res.product_defect, 1e-3);
  EXPECT_LE((res.product - res.exponential).norm(), 1e-2);
}

TEST(Gauge, ScalingSlopes) {
  GaugeConfig c;
  c.trials = 8;
  c.lambda = 0.1;
  const auto r = scaling_experiment(c);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_NEAR(r.slope_cost_gauge, 2.0, 0.05);
  EXPECT_NEAR(r.slope_drift, 2.0, 0.1);
  EXPECT_NEAR(r.slope_sigma_delta, 1.0, 0.01);
  EXPECT_NEAR(r.slope_cost_sigma, 2.0, 0.05);
  EXPECT_NEAR(r.slope_penalty_gauge, 2.0, 0.05);
  EXPECT_LE(r.trace_residual_max, 1e-10);
  for (const auto& row : r.rows) EXPECT_LE(row.max_drift_bound_ratio, 1.0 + 1e-12);
  EXPECT_EQ(scaling_to_json(c, r).dump(), scaling_to_json(c, scaling_experiment(c)).dump());
}

TEST(Gauge, ConfigValidation) {
  GaugeConfig c;
  c.eta_grid = {0.1, 0.01};
  EXPECT_THROW(validate(c), DomainError);
  c.eta_grid = {0.1, 0.2, 0.01};
  EXPECT_THROW(validate(c), DomainError);
  c = GaugeConfig{};
  c.d_mid = 1;
  EXPECT_THROW(validate(c), DomainError);
}

TEST(Gauge, ProcrustesToy) {
  const auto res = procrustes_toy(10.0, 0, 5);
  EXPECT_LE(res.r_error, 1e-12);
  EXPECT_LE(res.aligned_delta, 1e-24);
  EXPECT_LE(res.max_output_diff, 1e-12);
  EXPECT_NEAR(res.r_true(1, 0), std::sin(10.0 * std::numbers::pi / 180.0), 1e-15);
}
