#pragma once

#include "lenkf/common.hpp"
#include "lenkf/rng.hpp"

#include <cmath>

namespace lenkf {

struct SpectralResult {
  double sigma = 0.0;  // largest singular value estimate
  Vec u, v;            // corresponding left/right singular vectors
  int iters = 0;
  bool converged = false;
};

/// Leading singular value of a (possibly non-square) matrix by power
/// iteration on A^T A. Stops when the relative change of the estimate drops
/// below `tol`. `v0` supplies a warm-start right vector (training reuses the
/// previous step's vector); otherwise the start is drawn from a stream
/// derived from `seed` so results are reproducible.
inline SpectralResult spectral_norm(const Mat& a, double tol = 1e-10, int max_iter = 200,
                                    const Vec* v0 = nullptr, std::uint64_t seed = 1) {
  require(a.rows() > 0 && a.cols() > 0, "spectral_norm: empty matrix");
  SpectralResult res;
  Vec v;
  if (v0 != nullptr && v0->size() == a.cols() && v0->norm() > 0.0) {
    v = *v0 / v0->norm();
  } else {
    RngStream rng = RngStream::derive(seed, "spectral-start");
    v = rng.normal_vec(a.cols());
    v /= v.norm();
  }
  res.u = Vec::Zero(a.rows());
  double prev = -1.0;
  for (int it = 0; it < max_iter; ++it) {
    Vec av = a * v;
    const double nu = av.norm();
    if (nu == 0.0) {  // v in the null space; the matrix may still be nonzero
      RngStream rng = RngStream::derive(seed, "spectral-restart", static_cast<std::uint64_t>(it));
      v = rng.normal_vec(a.cols());
      v /= v.norm();
      continue;
    }
    res.u = av / nu;
    Vec atu = a.transpose() * res.u;
    const double sigma = atu.norm();
    res.iters = it + 1;
    if (sigma == 0.0) {
      res.sigma = 0.0;
      res.v = v;
      res.converged = true;
      return res;
    }
    v = atu / sigma;
    res.sigma = sigma;
    if (prev >= 0.0 && std::abs(sigma - prev) <= tol * std::max(1.0, sigma)) {
      res.converged = true;
      break;
    }
    prev = sigma;
  }
  res.v = v;
  require(std::isfinite(res.sigma), "spectral_norm: non-finite estimate");
  return res;
}

/// Stability penalty R(A) = max(0, ||A||_2 - 1)^2 evaluated from a spectral
/// estimate.
inline double spectral_penalty(const SpectralResult& s) {
  const double excess = std::max(0.0, s.sigma - 1.0);
  return excess * excess;
}

/// Subgradient of the stability penalty with respect to A:
/// 2 max(0, sigma - 1) * u v^T, zero when the norm is within the unit disk.
inline Mat spectral_penalty_grad(const SpectralResult& s) {
  const double excess = std::max(0.0, s.sigma - 1.0);
  if (excess == 0.0) return Mat::Zero(s.u.size(), s.v.size());
  return (2.0 * excess) * (s.u * s.v.transpose());
}

}  // namespace lenkf
