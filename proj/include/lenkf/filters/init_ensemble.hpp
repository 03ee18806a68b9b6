#pragma once

#include "lenkf/common.hpp"
#include "lenkf/rng.hpp"
#include "lenkf/systems/adr.hpp"
#include "lenkf/systems/dataset.hpp"
#include "lenkf/systems/toy.hpp"

#include <cmath>
#include <vector>

namespace lenkf {

/// Separable Gaussian blur with periodic wrap-around (kernel truncated at
/// 4 sigma, normalized to unit sum).
inline Mat gaussian_smooth_periodic(const Mat& field, double sigma) {
  require(field.rows() == field.cols() && field.rows() >= 1, "gaussian_smooth_periodic: square");
  require(sigma > 0.0, "gaussian_smooth_periodic: sigma must be positive");
  const int n = static_cast<int>(field.rows());
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int r = -radius; r <= radius; ++r) {
    kernel[r + radius] = std::exp(-0.5 * r * r / (sigma * sigma));
    sum += kernel[r + radius];
  }
  for (double& k : kernel) k /= sum;

  auto wrap = [n](int i) { return ((i % n) + n) % n; };
  Mat tmp = Mat::Zero(n, n), out = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int r = -radius; r <= radius; ++r) tmp(i, j) += kernel[r + radius] * field(wrap(i + r), j);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int r = -radius; r <= radius; ++r) out(i, j) += kernel[r + radius] * tmp(i, wrap(j + r));
  return out;
}

struct InitEnsembleOptions {
  double spread = 1.0;        // Lorenz-96 perturbation std about the center state
  double smooth_sigma = 3.0;  // ADR Gaussian filter std (grid points)
};

/// Initial prior ensemble, one column per member. The same (dataset, seed)
/// always yields the same ensemble, so all filter kinds share one prior.
///   toy: uniform angle samples embedded through W (members lie in span W);
///   Lorenz-96: spherical perturbations of a randomly chosen training
///     (attractor) state;
///   ADR: spatial white noise convolved with a periodic 2-D Gaussian filter.
inline Mat make_initial_ensemble(const Dataset& ds, int n_members, std::uint64_t seed,
                                 const InitEnsembleOptions& opt = {}) {
  require(n_members >= 2, "make_initial_ensemble: need at least 2 members");
  RngStream rng = RngStream::derive(seed, "init-ensemble");
  Mat members(ds.dim(), n_members);
  switch (ds.spec.kind) {
    case SystemKind::ToyRotation:
      for (int j = 0; j < n_members; ++j)
        members.col(j) = toy_embed(rng.uniform(-M_PI, M_PI), ds.toy_w);
      break;
    case SystemKind::Lorenz96: {
      const int t = static_cast<int>(rng.index(ds.n_train));
      const int k = static_cast<int>(rng.index(ds.n_steps + 1));
      const Vec center = ds.states[t].col(k);
      for (int j = 0; j < n_members; ++j)
        members.col(j) = center + opt.spread * rng.normal_vec(ds.dim());
      break;
    }
    case SystemKind::Adr2d: {
      const int n = ds.spec.adr.grid_n;
      for (int j = 0; j < n_members; ++j)
        members.col(j) =
            field_to_vec(gaussian_smooth_periodic(rng.normal_mat(n, n), opt.smooth_sigma));
      break;
    }
  }
  require(members.allFinite(), "make_initial_ensemble: non-finite member");
  return members;
}

}  // namespace lenkf
