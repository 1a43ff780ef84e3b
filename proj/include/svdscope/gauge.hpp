#pragma once

// Orthogonal-gauge experiments on a two-matrix linear chain y = x W1 W2
// (row-vector convention, W1: d_in x d_mid, W2: d_mid x d_out). A skew
// generator A moves the pair along (W1 (I + eta A), (I - eta A) W2), which
// leaves the product unchanged to first order.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "svdscope/error.hpp"
#include "svdscope/linalg.hpp"
#include "svdscope/rng.hpp"

namespace svdscope {

inline double skew_defect(const Matrix& a) { return (a + a.transpose()).cwiseAbs().maxCoeff(); }

inline void require_step(double eta) {
  if (!(eta >= 0.0 && eta < 1.0)) throw DomainError("step size must satisfy 0 <= eta < 1, got " + std::to_string(eta));
}

inline void require_skew(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("generator must be square");
  const double d = skew_defect(a);
  if (d > 1e-12) throw DomainError("generator is not skew-symmetric (defect " + std::to_string(d) + ")");
}

/// (W1 (I + eta A), (I - eta A) W2)
inline std::pair<Matrix, Matrix> gauge_step(const Matrix& w1, const Matrix& w2, const Matrix& a, double eta) {
  require_skew(a);
  require_step(eta);
  if (w1.cols() != a.rows() || w2.rows() != a.rows()) {
    throw ShapeError("gauge_step: W1 has " + std::to_string(w1.cols()) + " columns, W2 has " +
                     std::to_string(w2.rows()) + " rows, generator is " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()));
  }
  const Matrix id = Matrix::Identity(a.rows(), a.cols());
  return {w1 * (id + eta * a), (id - eta * a) * w2};
}

/// ||W1' - W1||_F^2 + ||W2' - W2||_F^2
inline double parameter_cost(const Matrix& w1, const Matrix& w2, const Matrix& w1p, const Matrix& w2p) {
  if (w1.rows() != w1p.rows() || w1.cols() != w1p.cols() || w2.rows() != w2p.rows() || w2.cols() != w2p.cols()) {
    throw ShapeError("parameter_cost: shape mismatch");
  }
  return (w1p - w1).squaredNorm() + (w2p - w2).squaredNorm();
}

/// eta^2 trace(A^T W1^T W1 A + A W2 W2^T A^T): the closed form of the gauge
/// step's parameter cost.
inline double gauge_cost_trace(const Matrix& w1, const Matrix& w2, const Matrix& a, double eta) {
  return eta * eta * (a.transpose() * w1.transpose() * w1 * a + a * w2 * w2.transpose() * a.transpose()).trace();
}

/// U diag(sigma + eta) V^T.
inline Matrix sigma_perturb_step(const Matrix& w, double eta) {
  require_step(eta);
  const SvdFactors f = compute_svd(w);
  return f.u * (f.sigma.array() + eta).matrix().asDiagonal() * f.v.transpose();
}

/// exp(S) for skew S through the Hermitian eigenproblem of iS.
inline Matrix skew_exponential(const Matrix& s) {
  require_skew(s);
  const Eigen::MatrixXcd h = std::complex<double>(0.0, 1.0) * s.cast<std::complex<double>>();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h);
  const Eigen::VectorXcd phase =
      es.eigenvalues().unaryExpr([](double l) { return std::exp(std::complex<double>(0.0, -l)); });
  return (es.eigenvectors() * phase.asDiagonal() * es.eigenvectors().adjoint()).real();
}

struct RotationAccumulation {
  Matrix product;      // prod_t (I + eta A_t)
  Matrix exponential;  // exp(sum_t eta A_t)
  double product_defect = 0;
  double exponential_defect = 0;
};

inline RotationAccumulation accumulate_rotations(const std::vector<Matrix>& generators, double eta) {
  if (generators.empty()) throw DomainError("accumulate_rotations: no generators");
  require_step(eta);
  const Eigen::Index d = generators.front().rows();
  RotationAccumulation out;
  out.product = Matrix::Identity(d, d);
  Matrix sum = Matrix::Zero(d, d);
  for (const auto& a : generators) {
    require_skew(a);
    if (a.rows() != d) throw ShapeError("accumulate_rotations: generators differ in size");
    out.product = out.product * (Matrix::Identity(d, d) + eta * a);
    sum += eta * a;
  }
  out.exponential = skew_exponential(sum);
  out.product_defect = orthonormality_defect(out.product);
  out.exponential_defect = orthonormality_defect(out.exponential);
  return out;
}

// --- scaling experiment -----------------------------------------------------

struct GaugeConfig {
  Eigen::Index d_in = 8, d_mid = 16, d_out = 8;
  std::vector<double> eta_grid = {1e-1, 1e-2, 1e-3, 1e-4};
  int trials = 32;
  std::uint64_t seed = 0;
  double lambda = 0.0;  // weight-decay coefficient for the penalty comparison
};

inline void validate(const GaugeConfig& c) {
  if (c.d_in < 1 || c.d_out < 1 || c.d_mid < 2) throw DomainError("gauge dims must be positive with d_mid >= 2");
  if (c.trials < 1) throw DomainError("gauge trials must be positive");
  if (!(c.lambda >= 0.0)) throw DomainError("weight decay must be non-negative");
  if (c.eta_grid.size() < 3) throw DomainError("slope fit needs at least 3 step sizes");
  for (std::size_t i = 0; i < c.eta_grid.size(); ++i) {
    const double e = c.eta_grid[i];
    if (!(e > 0.0 && e < 1.0)) throw DomainError("every step size must lie in (0, 1)");
    if (i && !(e < c.eta_grid[i - 1])) throw DomainError("step sizes must be strictly decreasing");
  }
}

struct EtaRow {
  double eta = 0;
  double mean_cost_gauge = 0;   // ||dW1||^2 + ||dW2||^2, gauge step
  double mean_cost_sigma = 0;   // same, sigma perturbation of W1 and W2
  double mean_sigma_delta = 0;  // ||dSigma||_F over W1 and W2
  double mean_drift = 0;        // ||W1'W2' - W1W2||_F, gauge step
  double mean_penalty_gauge = 0;
  double mean_penalty_sigma = 0;
  double penalty_ratio = 0;     // gauge / sigma weight-decay penalty change
  double max_sigma_shift = 0;   // max_i |sigma_i(W1') - sigma_i(W1)|, gauge step
  double max_drift_bound_ratio = 0;  // drift / (eta^2 ||A||_2^2 ||W1||_F ||W2||_F)
};

struct ScalingResult {
  std::vector<EtaRow> rows;
  double slope_cost_gauge = 0;
  double slope_drift = 0;
  double slope_sigma_delta = 0;
  double slope_cost_sigma = 0;
  double slope_penalty_gauge = 0;
  double slope_penalty_sigma = 0;
  double trace_residual_max = 0;  // relative
};

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3) throw DomainError("slope fit needs at least 3 points");
  double sx = 0, sy = 0;
  const auto n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw DomainError("slope fit needs positive values");
    sx += std::log(x[i]);
    sy += std::log(y[i]);
  }
  const double mx = sx / n, my = sy / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw DomainError("slope fit needs distinct step sizes");
  return sxy / sxx;
}

struct GaugeTrial {
  Matrix w1, w2, a;
};

/// Trial t draws unit-Frobenius W1, W2 and A from a stream keyed by (seed, t).
inline GaugeTrial make_trial(const GaugeConfig& c, int t) {
  Rng rng(c.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(t));
  GaugeTrial tr;
  tr.w1 = random_gaussian(c.d_in, c.d_mid, rng);
  tr.w2 = random_gaussian(c.d_mid, c.d_out, rng);
  tr.w1 /= tr.w1.norm();
  tr.w2 /= tr.w2.norm();
  tr.a = random_skew(c.d_mid, rng.below(UINT64_MAX));
  tr.a /= tr.a.norm();
  return tr;
}

inline ScalingResult scaling_experiment(const GaugeConfig& c) {
  validate(c);
  ScalingResult res;
  std::vector<GaugeTrial> trials;
  for (int t = 0; t < c.trials; ++t) trials.push_back(make_trial(c, t));
  std::vector<SvdFactors> svd1, svd2;
  std::vector<double> a_norm2;
  for (const auto& tr : trials) {
    svd1.push_back(compute_svd(tr.w1));
    svd2.push_back(compute_svd(tr.w2));
    a_norm2.push_back(compute_svd(tr.a).sigma(0));
  }
  const double n = c.trials;
  for (double eta : c.eta_grid) {
    EtaRow row;
    row.eta = eta;
    double dnorm_gauge = 0, dnorm_sigma = 0;
    for (std::size_t t = 0; t < trials.size(); ++t) {
      const auto& tr = trials[t];
      const auto [w1p, w2p] = gauge_step(tr.w1, tr.w2, tr.a, eta);
      const double cost = parameter_cost(tr.w1, tr.w2, w1p, w2p);
      const double closed = gauge_cost_trace(tr.w1, tr.w2, tr.a, eta);
      res.trace_residual_max = std::max(res.trace_residual_max, std::fabs(cost - closed) / closed);
      const double drift = (w1p * w2p - tr.w1 * tr.w2).norm();
      row.mean_cost_gauge += cost;
      row.mean_drift += drift;
      const double bound = eta * eta * a_norm2[t] * a_norm2[t] * tr.w1.norm() * tr.w2.norm();
      row.max_drift_bound_ratio = std::max(row.max_drift_bound_ratio, drift / bound);
      const Vector s1p = compute_svd(w1p).sigma;
      row.max_sigma_shift = std::max(row.max_sigma_shift, (s1p - svd1[t].sigma).cwiseAbs().maxCoeff());
      dnorm_gauge += w1p.squaredNorm() + w2p.squaredNorm() - tr.w1.squaredNorm() - tr.w2.squaredNorm();

      const Matrix w1s = sigma_perturb_step(tr.w1, eta);
      const Matrix w2s = sigma_perturb_step(tr.w2, eta);
      row.mean_cost_sigma += parameter_cost(tr.w1, tr.w2, w1s, w2s);
      const double ds1 = (compute_svd(w1s).sigma - svd1[t].sigma).squaredNorm();
      const double ds2 = (compute_svd(w2s).sigma - svd2[t].sigma).squaredNorm();
      row.mean_sigma_delta += std::sqrt(ds1 + ds2);
      dnorm_sigma += w1s.squaredNorm() + w2s.squaredNorm() - tr.w1.squaredNorm() - tr.w2.squaredNorm();
    }
    row.mean_cost_gauge /= n;
    row.mean_cost_sigma /= n;
    row.mean_sigma_delta /= n;
    row.mean_drift /= n;
    row.mean_penalty_gauge = c.lambda * dnorm_gauge / n;
    row.mean_penalty_sigma = c.lambda * dnorm_sigma / n;
    row.penalty_ratio = dnorm_gauge / dnorm_sigma;
    res.rows.push_back(row);
  }
  auto column = [&](double EtaRow::*field) {
    std::vector<double> v;
    for (const auto& r : res.rows) v.push_back(r.*field);
    return v;
  };
  const auto etas = column(&EtaRow::eta);
  res.slope_cost_gauge = loglog_slope(etas, column(&EtaRow::mean_cost_gauge));
  res.slope_drift = loglog_slope(etas, column(&EtaRow::mean_drift));
  res.slope_sigma_delta = loglog_slope(etas, column(&EtaRow::mean_sigma_delta));
  res.slope_cost_sigma = loglog_slope(etas, column(&EtaRow::mean_cost_sigma));
  if (c.lambda > 0.0) {
    res.slope_penalty_gauge = loglog_slope(etas, column(&EtaRow::mean_penalty_gauge));
    res.slope_penalty_sigma = loglog_slope(etas, column(&EtaRow::mean_penalty_sigma));
  }
  return res;
}

// --- two-dimensional Procrustes demonstration --------------------------------

struct ProcrustesToyResult {
  Matrix r_true, r_hat;
  double r_error = 0;          // ||R_hat - R_true||_F
  double aligned_delta = 0;    // ||W1_al - W1||^2 + ||W2_al - W2||^2
  double max_output_diff = 0;  // over the random inputs
};

/// W1 = I2, W2 = diag(1, 0.5), rotated onto (W1 R, R^T W2), then R is
/// recovered from (W1, W1 R) and undone.
inline ProcrustesToyResult procrustes_toy(double theta_deg = 10.0, std::uint64_t seed = 0, int inputs = 5) {
  const Matrix w1 = Matrix::Identity(2, 2);
  Matrix w2(2, 2);
  w2 << 1.0, 0.0, 0.0, 0.5;
  ProcrustesToyResult res;
  res.r_true = rotation2d(theta_deg * std::numbers::pi / 180.0);
  const Matrix w1_rot = w1 * res.r_true;
  const Matrix w2_rot = res.r_true.transpose() * w2;
  res.r_hat = procrustes_rotation(w1, w1_rot).rotation;
  res.r_error = (res.r_hat - res.r_true).norm();
  const Matrix w1_al = w1_rot * res.r_hat.transpose();
  const Matrix w2_al = res.r_hat * w2_rot;
  res.aligned_delta = (w1_al - w1).squaredNorm() + (w2_al - w2).squaredNorm();
  Rng rng(seed);
  const Matrix x = random_gaussian(inputs, 2, rng);
  res.max_output_diff = (x * w1_al * w2_al - x * w1 * w2).cwiseAbs().maxCoeff();
  return res;
}

inline nlohmann::ordered_json scaling_to_json(const GaugeConfig& c, const ScalingResult& r) {
  nlohmann::ordered_json j;
  j["config"] = {{"d_in", c.d_in},   {"d_mid", c.d_mid}, {"d_out", c.d_out}, {"eta_grid", c.eta_grid},
                 {"trials", c.trials}, {"seed", c.seed},   {"lambda", c.lambda}};
  j["per_eta"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    j["per_eta"].push_back({{"eta", row.eta},
                            {"mean_cost_gauge", row.mean_cost_gauge},
                            {"mean_cost_sigma", row.mean_cost_sigma},
                            {"mean_sigma_delta", row.mean_sigma_delta},
                            {"mean_drift", row.mean_drift},
                            {"mean_penalty_gauge", row.mean_penalty_gauge},
                            {"mean_penalty_sigma", row.mean_penalty_sigma},
                            {"penalty_ratio", row.penalty_ratio},
                            {"max_sigma_shift", row.max_sigma_shift},
                            {"max_drift_bound_ratio", row.max_drift_bound_ratio}});
  }
  j["slopes"] = {{"cost_gauge", r.slope_cost_gauge},       {"drift", r.slope_drift},
                 {"sigma_delta", r.slope_sigma_delta},     {"cost_sigma", r.slope_cost_sigma},
                 {"penalty_gauge", r.slope_penalty_gauge}, {"penalty_sigma", r.slope_penalty_sigma}};
  j["trace_residual_max"] = r.trace_residual_max;
  return j;
}

}  // namespace svdscope
