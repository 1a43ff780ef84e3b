#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "svdscope/error.hpp"
#include "svdscope/rng.hpp"

namespace svdscope {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thin SVD: a = u * diag(sigma) * v^T with r = min(m, n) columns,
/// sigma non-increasing, and each u-column's largest-magnitude entry
/// positive (paired v-column flipped with it).
struct SvdFactors {
  Matrix u;
  Vector sigma;
  Matrix v;

  [[nodiscard]] Eigen::Index rank() const { return sigma.size(); }
  [[nodiscard]] Matrix reconstruct() const { return u * sigma.asDiagonal() * v.transpose(); }
};

struct SvdOptions {
  double tolerance = 1e-12;  // max relative column coupling at convergence
  int max_sweeps = 200;
  std::string label;         // used in error messages
};

inline double orthonormality_defect(const Matrix& q) {
  return (q.transpose() * q - Matrix::Identity(q.cols(), q.cols())).norm();
}

/// Flips u_i and v_i together so that the largest-magnitude entry of u_i
/// (first one on ties) is positive. Columns with sigma_i == 0 are left alone.
inline SvdFactors canonicalize_signs(SvdFactors f) {
  for (Eigen::Index i = 0; i < f.sigma.size(); ++i) {
    if (f.sigma(i) == 0.0) continue;
    Eigen::Index arg = 0;
    f.u.col(i).cwiseAbs().maxCoeff(&arg);
    if (f.u(arg, i) < 0.0) {
      f.u.col(i) *= -1.0;
      f.v.col(i) *= -1.0;
    }
  }
  return f;
}

namespace detail {

// Extends the orthonormal columns of q flagged in `have` to a full
// orthonormal set, taking the missing columns from the complement block of
// a Householder QR of the filled ones.
inline void complete_basis(Matrix& q, const std::vector<bool>& have) {
  const Eigen::Index m = q.rows();
  std::vector<Eigen::Index> filled, missing;
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    (have[static_cast<std::size_t>(j)] ? filled : missing).push_back(j);
  }
  if (missing.empty()) return;
  const auto k = static_cast<Eigen::Index>(filled.size());
  Matrix full = Matrix::Identity(m, m);
  if (k > 0) {
    Matrix span(m, k);
    for (Eigen::Index i = 0; i < k; ++i) span.col(i) = q.col(filled[static_cast<std::size_t>(i)]);
    Eigen::HouseholderQR<Matrix> qr(span);
    full = qr.householderQ() * Matrix::Identity(m, m);
  }
  // The trailing Householder columns span the orthogonal complement.
  for (std::size_t i = 0; i < missing.size(); ++i) {
    q.col(missing[i]) = full.col(k + static_cast<Eigen::Index>(i));
  }
}

// One-sided (Hestenes) Jacobi on the columns of w, accumulating the
// rotations into v. Returns the number of sweeps used.
inline int jacobi_orthogonalize(Matrix& w, Matrix& v, const SvdOptions& opt) {
  const Eigen::Index m = w.rows();
  const Eigen::Index n = w.cols();
  constexpr double kRotationFloor = 4.0 * std::numeric_limits<double>::epsilon();
  for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
    double max_coupling = 0.0;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        double* xp = w.col(p).data();
        double* xq = w.col(q).data();
        double a = 0.0, b = 0.0, c = 0.0;
        for (Eigen::Index k = 0; k < m; ++k) {
          a += xp[k] * xp[k];
          b += xq[k] * xq[k];
          c += xp[k] * xq[k];
        }
        if (a == 0.0 || b == 0.0) continue;
        const double coupling = std::fabs(c) / std::sqrt(a * b);
        max_coupling = std::max(max_coupling, coupling);
        if (coupling <= kRotationFloor) continue;
        const double zeta = (b - a) / (2.0 * c);
        const double t = std::copysign(1.0, zeta) / (std::fabs(zeta) + std::hypot(1.0, zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (Eigen::Index k = 0; k < m; ++k) {
          const double x = xp[k], y = xq[k];
          xp[k] = cs * x - sn * y;
          xq[k] = sn * x + cs * y;
        }
        double* vp = v.col(p).data();
        double* vq = v.col(q).data();
        for (Eigen::Index k = 0; k < n; ++k) {
          const double x = vp[k], y = vq[k];
          vp[k] = cs * x - sn * y;
          vq[k] = sn * x + cs * y;
        }
      }
    }
    if (max_coupling <= opt.tolerance) return sweep;
    if (sweep == opt.max_sweeps) {
      throw ConvergenceError("SVD of " + (opt.label.empty() ? std::string("matrix") : "'" + opt.label + "'") +
                             " did not converge after " + std::to_string(opt.max_sweeps) +
                             " sweeps (residual coupling " + std::to_string(max_coupling) + ")");
    }
  }
  return opt.max_sweeps;
}

}  // namespace detail

/// Deterministic thin SVD by one-sided Jacobi. The input (m >= n after an
/// optional transpose) is first reduced by a column-pivoted Householder QR,
/// a P = Q R, and the rotations run on the columns of R^T, which converges
/// in few sweeps for the graded R that pivoting produces:
/// R^T W = X Sigma  =>  a = (Q W) Sigma (P X)^T.
/// Singular values at or below sigma_max * max(m, n) * eps are returned as
/// exact zeros, with their vectors completed to an orthonormal basis.
inline SvdFactors compute_svd(const Matrix& a, const SvdOptions& opt = {}) {
  if (a.rows() < 1 || a.cols() < 1) throw ShapeError("SVD of an empty matrix");
  if (!a.allFinite()) {
    throw DomainError("SVD input " + (opt.label.empty() ? std::string() : "'" + opt.label + "' ") +
                      "has non-finite entries");
  }
  if (a.rows() < a.cols()) {
    SvdFactors t = compute_svd(a.transpose(), opt);
    std::swap(t.u, t.v);
    return canonicalize_signs(std::move(t));
  }

  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  const Matrix r_full = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();

  // Trailing rows of R whose combined norm is below the zero threshold carry
  // only singular values that would be reported as 0; dropping them keeps
  // the rotations off pure rounding noise. |R_00| bounds sigma_max below.
  const double eps = std::numeric_limits<double>::epsilon();
  const double drop = std::fabs(r_full(0, 0)) * static_cast<double>(std::max(m, n)) * eps;
  Eigen::Index rk = n;
  double tail2 = 0.0;
  while (rk > 0) {
    const double next = tail2 + r_full.row(rk - 1).squaredNorm();
    if (std::sqrt(next) > drop) break;
    tail2 = next;
    --rk;
  }

  Matrix w = r_full.topRows(rk).transpose();
  Matrix rot = Matrix::Identity(rk, rk);
  detail::jacobi_orthogonalize(w, rot, opt);

  Vector norms(rk);
  for (Eigen::Index j = 0; j < rk; ++j) norms(j) = w.col(j).norm();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rk));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return norms(x) > norms(y); });

  const double sigma_max = rk ? norms.maxCoeff() : 0.0;
  const double negligible = sigma_max * static_cast<double>(std::max(m, n)) * eps;

  SvdFactors f;
  f.sigma = Vector::Zero(n);
  Matrix left = Matrix::Identity(n, n);  // rotations padded with the dropped rows' basis
  Matrix right = Matrix::Zero(n, n);
  std::vector<bool> have(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < rk; ++i) {
    const Eigen::Index j = order[static_cast<std::size_t>(i)];
    left.col(i).head(rk) = rot.col(j);
    left.col(i).tail(n - rk).setZero();
    if (norms(j) > negligible) {
      f.sigma(i) = norms(j);
      right.col(i) = w.col(j) / norms(j);
      have[static_cast<std::size_t>(i)] = true;
    }
  }
  if (std::find(have.begin(), have.end(), false) != have.end()) detail::complete_basis(right, have);
  f.u = qr.householderQ() * (Matrix::Identity(m, n) * left);
  f.v = qr.colsPermutation() * right;
  return canonicalize_signs(std::move(f));
}

// --- principal angles -------------------------------------------------------

inline void require_orthonormal(const Matrix& q, const char* what) {
  const double defect = orthonormality_defect(q);
  if (!(defect <= 1e-8)) {
    throw DomainError(std::string(what) + " does not have orthonormal columns (defect " +
                      std::to_string(defect) + ")");
  }
}

/// Principal angles between span(u_base) and span(u_tgt), non-decreasing,
/// in radians. Cosines are the clamped singular values of u_base^T u_tgt;
/// where cos^2 >= 1/2 the angle is taken from the matching sine (singular
/// values of the residual of u_tgt against span(u_base)), which resolves
/// small angles that arccos cannot.
inline std::vector<double> principal_angles(const Matrix& u_base, const Matrix& u_tgt) {
  if (u_base.rows() != u_tgt.rows()) {
    throw ShapeError("principal angles: bases live in R^" + std::to_string(u_base.rows()) + " and R^" +
                     std::to_string(u_tgt.rows()));
  }
  require_orthonormal(u_base, "principal angles: base basis");
  require_orthonormal(u_tgt, "principal angles: target basis");

  const Matrix overlap = u_base.transpose() * u_tgt;
  const Vector cosines = compute_svd(overlap).sigma;  // descending
  const Matrix residual = u_base.cols() >= u_tgt.cols() ? Matrix(u_tgt - u_base * overlap)
                                                        : Matrix(u_base - u_tgt * overlap.transpose());
  Vector sines = compute_svd(residual).sigma;  // descending; reverse to pair with cosines
  sines.reverseInPlace();

  const Eigen::Index k = cosines.size();
  std::vector<double> theta(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) {
    const double c = std::clamp(cosines(i), -1.0, 1.0);
    const double s = std::clamp(sines(i + sines.size() - k), 0.0, 1.0);
    theta[static_cast<std::size_t>(i)] = c * c >= 0.5 ? std::asin(s) : std::acos(c);
  }
  std::sort(theta.begin(), theta.end());
  return theta;
}

/// Angle between x_i and y_i for each column pair, ignoring sign.
inline std::vector<double> per_index_angles(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw ShapeError("per-index angles: basis shapes differ");
  }
  std::vector<double> out(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const double dot = x.col(i).dot(y.col(i));
    const double perp = (y.col(i) - dot * x.col(i)).norm();
    out[static_cast<std::size_t>(i)] = std::atan2(perp, std::fabs(dot));
  }
  return out;
}

struct PrincipalAngleSpectrum {
  std::vector<double> theta_left;
  std::vector<double> theta_right;
  std::vector<double> per_index_left;
  std::vector<double> per_index_right;
};

inline PrincipalAngleSpectrum angle_spectrum(const SvdFactors& base, const SvdFactors& tgt) {
  return {principal_angles(base.u, tgt.u), principal_angles(base.v, tgt.v),
          per_index_angles(base.u, tgt.u), per_index_angles(base.v, tgt.v)};
}

// --- Procrustes and generators ---------------------------------------------

struct ProcrustesResult {
  Matrix rotation;
  bool unique = true;  // false when a^T b is (numerically) singular
};

/// Orthogonal R minimizing ||a R - b||_F: with a^T b = U S V^T, R = U V^T.
inline ProcrustesResult procrustes_rotation(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("procrustes: a and b shapes differ");
  if (a.cols() > a.rows()) throw ShapeError("procrustes: more columns than rows");
  if (!a.allFinite() || !b.allFinite()) throw DomainError("procrustes: non-finite input");
  const SvdFactors f = compute_svd(a.transpose() * b, {.label = "procrustes cross-covariance"});
  ProcrustesResult res;
  res.rotation = f.u * f.v.transpose();
  const double smax = f.sigma.size() ? f.sigma(0) : 0.0;
  res.unique = smax > 0.0 && f.sigma(f.sigma.size() - 1) > 1e-12 * smax;
  return res;
}

/// Seeded skew-symmetric matrix with upper entries uniform in [-1, 1).
inline Matrix random_skew(Eigen::Index dim, std::uint64_t seed) {
  if (dim < 2) throw DomainError("random_skew: dimension must be at least 2");
  Rng rng(seed);
  Matrix a = Matrix::Zero(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = i + 1; j < dim; ++j) {
      const double x = rng.symmetric();
      a(i, j) = x;
      a(j, i) = -x;
    }
  }
  return a;
}

/// Counter-clockwise planar rotation by `theta` radians.
inline Matrix rotation2d(double theta) {
  Matrix r(2, 2);
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

inline Matrix random_gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

/// Random matrix with orthonormal columns (QR of a Gaussian draw).
inline Matrix random_orthonormal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(random_gaussian(rows, cols, rng));
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

}  // namespace svdscope
