#pragma once

#include "lenkf/common.hpp"
#include "lenkf/rng.hpp"

#include <cmath>

namespace lenkf {

/// Advection-diffusion-reaction testbed on the periodic unit square,
///   du/dt + v . grad(u) = mu Laplace(u) - alpha*(sin(u) - u),
/// with v(x) = (sin(2 pi x2), sin(2 pi x1)). Discretization: uniform
/// n x n grid, centered flux-form advection (conservative for this
/// divergence-free v), 5-point Laplacian, midpoint RK2 in time with
/// automatic sub-stepping under advective and diffusive limits.
struct AdrParams {
  int grid_n = 64;
  double mu = 1e-3;
  double alpha = 0.8;
  double ell = 0.2;            // GRF correlation length for initial fields
  double adv_scale = 1.0;      // scales v; 0 disables advection entirely
  double cfl = 0.5;            // advective CFL target
  double diff_safety = 0.4;    // fraction of the diffusive stability limit
  double internal_dt = 0.0;    // 0 = choose automatically from the limits
};

class AdrSolver {
 public:
  explicit AdrSolver(const AdrParams& p) : p_(p), h_(1.0 / p.grid_n) {
    require(p.grid_n >= 4, "AdrSolver: grid too small");
    const double dt_adv = p.cfl * h_;  // |v| <= 1
    const double dt_diff =
        p.mu > 0.0 ? p.diff_safety * h_ * h_ / (4.0 * p.mu) : dt_adv;
    const double dt_max = std::min(dt_adv, dt_diff);
    if (p.internal_dt > 0.0) {
      require(p.internal_dt <= dt_max,
              "AdrSolver: requested internal dt violates the stability bound");
      dt_int_ = p.internal_dt;
    } else {
      dt_int_ = dt_max;
    }
    // Face velocities depend on a single coordinate each, precompute rows.
    v1_ = Vec(p.grid_n);  // x1-velocity, varies with x2 index j
    v2_ = Vec(p.grid_n);  // x2-velocity, varies with x1 index i
    for (int k = 0; k < p.grid_n; ++k) {
      v1_[k] = p.adv_scale * std::sin(2.0 * M_PI * k * h_);
      v2_[k] = p.adv_scale * std::sin(2.0 * M_PI * k * h_);
    }
  }

  int grid_n() const { return p_.grid_n; }
  double internal_dt() const { return dt_int_; }
  const AdrParams& params() const { return p_; }

  /// Right-hand side on the grid; u(i, j) indexes (x1, x2).
  Mat rhs(const Mat& u) const {
    const int n = p_.grid_n;
    Mat out(n, n);
    const double inv2h = 1.0 / (2.0 * h_);
    const double invh2 = 1.0 / (h_ * h_);
    for (int j = 0; j < n; ++j) {
      const int jp = (j + 1) % n, jm = (j - 1 + n) % n;
      for (int i = 0; i < n; ++i) {
        const int ip = (i + 1) % n, im = (i - 1 + n) % n;
        const double adv = v1_[j] * (u(ip, j) - u(im, j)) * inv2h +
                           v2_[i] * (u(i, jp) - u(i, jm)) * inv2h;
        const double lap =
            (u(ip, j) + u(im, j) + u(i, jp) + u(i, jm) - 4.0 * u(i, j)) * invh2;
        out(i, j) = -adv + p_.mu * lap - p_.alpha * (std::sin(u(i, j)) - u(i, j));
      }
    }
    return out;
  }

  /// One midpoint-RK2 step of size dt (no sub-stepping).
  Mat rk2_step(const Mat& u, double dt) const {
    Mat mid = u + (0.5 * dt) * rhs(u);
    Mat out = u + dt * rhs(mid);
    require(out.allFinite(), "AdrSolver: non-finite field after step");
    return out;
  }

  /// Advance by dt_total using internal sub-steps of at most internal_dt.
  Mat advance(Mat u, double dt_total) const {
    require(dt_total > 0.0, "AdrSolver: dt_total must be positive");
    const int steps = std::max(1, static_cast<int>(std::ceil(dt_total / dt_int_ - 1e-12)));
    const double dt = dt_total / steps;
    for (int s = 0; s < steps; ++s) u = rk2_step(u, dt);
    return u;
  }

 private:
  AdrParams p_;
  double h_;
  double dt_int_ = 0.0;
  Vec v1_, v2_;
};

/// Row-major flattening used whenever a field enters vector-based code.
inline Vec field_to_vec(const Mat& u) {
  Vec v(u.size());
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = 0; j < u.cols(); ++j) v[i * u.cols() + j] = u(i, j);
  return v;
}

inline Mat vec_to_field(const Vec& v, int n) {
  require(v.size() == static_cast<Eigen::Index>(n) * n, "vec_to_field: size mismatch");
  Mat u(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) u(i, j) = v[i * n + j];
  return u;
}

/// Sampler for the zero-mean periodic Gaussian random field with kernel
///   K(x, x') = exp(-(sin^2(pi dx1) + sin^2(pi dx2)) / (2 ell^2)).
/// The kernel factorizes over the two coordinates, so the covariance is
/// a Kronecker product of two symmetric circulants C; drawing
/// U = L Xi L^T with C = L L^T gives exact samples on the grid.
class GrfSampler {
 public:
  GrfSampler(int grid_n, double ell) : n_(grid_n) {
    require(ell > 0.0, "GrfSampler: ell must be positive");
    Mat c(n_, n_);
    const double h = 1.0 / n_;
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) {
        const double s = std::sin(M_PI * (i - j) * h);
        c(i, j) = std::exp(-s * s / (2.0 * ell * ell));
      }
    circulant_ = c;
    Eigen::SelfAdjointEigenSolver<Mat> es(c);
    require(es.info() == Eigen::Success, "GrfSampler: eigendecomposition failed");
    Vec lam = es.eigenvalues();
    for (Eigen::Index k = 0; k < lam.size(); ++k) {
      if (lam[k] < 0.0) {
        ++clamped_modes_;
        lam[k] = 0.0;
      }
    }
    factor_ = es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
  }

  Mat sample(RngStream& rng) const {
    Mat xi = rng.normal_mat(n_, n_);
    return factor_ * xi * factor_.transpose();
  }

  /// Number of (numerically) negative spectral weights clamped to zero.
  int clamped_modes() const { return clamped_modes_; }
  const Mat& one_dim_covariance() const { return circulant_; }

 private:
  int n_;
  Mat factor_;
  Mat circulant_;
  int clamped_modes_ = 0;
};

}  // namespace lenkf
