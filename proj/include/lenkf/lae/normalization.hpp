#pragma once

#include "lenkf/common.hpp"

#include <cmath>
#include <vector>

namespace lenkf {

inline constexpr double kStdFloor = 1e-8;

/// Component-wise affine normalization x -> (x - mean) / std with the
/// standard deviation floored at kStdFloor. Stats must come from the
/// training split only.
struct Normalization {
  Vec mean, stdev;

  int dim() const { return static_cast<int>(mean.size()); }

  Mat apply(const Mat& x) const {
    require(x.rows() == mean.size(), "Normalization::apply: dimension mismatch");
    return stdev.cwiseInverse().asDiagonal() * (x.colwise() - mean);
  }

  Mat invert(const Mat& z) const {
    require(z.rows() == mean.size(), "Normalization::invert: dimension mismatch");
    return (stdev.asDiagonal() * z).colwise() + mean;
  }

  Vec apply_vec(const Vec& x) const { return apply(Mat(x)).col(0); }
  Vec invert_vec(const Vec& z) const { return invert(Mat(z)).col(0); }
};

inline Normalization identity_normalization(int dim) {
  return {Vec::Zero(dim), Vec::Ones(dim)};
}

/// Population moments over all columns of trajectories [0, n_use).
inline Normalization compute_normalization(const std::vector<Mat>& trajs, int n_use) {
  require(n_use >= 1 && n_use <= static_cast<int>(trajs.size()),
          "compute_normalization: bad trajectory count");
  const auto dim = trajs[0].rows();
  Vec sum = Vec::Zero(dim), sumsq = Vec::Zero(dim);
  double count = 0.0;
  for (int t = 0; t < n_use; ++t) {
    require(trajs[t].rows() == dim, "compute_normalization: inconsistent dimension");
    sum += trajs[t].rowwise().sum();
    sumsq += trajs[t].cwiseProduct(trajs[t]).rowwise().sum();
    count += static_cast<double>(trajs[t].cols());
  }
  Normalization n;
  n.mean = sum / count;
  Vec var = (sumsq / count - n.mean.cwiseProduct(n.mean)).cwiseMax(0.0);
  n.stdev = var.cwiseSqrt().cwiseMax(kStdFloor);
  return n;
}

/// Stats restricted to a component subset (observation operators observe a
/// subset of state components, so observation stats are the state stats at
/// the observed indices).
inline Normalization subset_normalization(const Normalization& n, const std::vector<int>& idx) {
  Normalization out;
  out.mean.resize(idx.size());
  out.stdev.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < n.dim(), "subset_normalization: index out of range");
    out.mean[i] = n.mean[idx[i]];
    out.stdev[i] = n.stdev[idx[i]];
  }
  return out;
}

/// Stats for a delay-embedded vector: the single-observation stats tiled L
/// times.
inline Normalization tile_normalization(const Normalization& n, int L) {
  require(L >= 1, "tile_normalization: L must be >= 1");
  Normalization out;
  out.mean.resize(n.dim() * L);
  out.stdev.resize(n.dim() * L);
  for (int j = 0; j < L; ++j) {
    out.mean.segment(j * n.dim(), n.dim()) = n.mean;
    out.stdev.segment(j * n.dim(), n.dim()) = n.stdev;
  }
  return out;
}

}  // namespace lenkf
