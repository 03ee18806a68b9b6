#pragma once

#include "lenkf/common.hpp"

namespace lenkf {

/// Ensembles are matrices with one member per column.

struct SampleStats {
  Vec x_mean, y_mean;
  Mat p_xy;  // unbiased sample cross-covariance, dim(x) x dim(y)
  Mat p_yy;  // unbiased sample covariance of y
};

inline SampleStats sample_stats(const Mat& xs, const Mat& ys) {
  require(xs.cols() == ys.cols(), "sample_stats: member count mismatch");
  const auto ne = xs.cols();
  require(ne >= 2, "sample_stats: need at least 2 members");
  SampleStats s;
  s.x_mean = xs.rowwise().mean();
  s.y_mean = ys.rowwise().mean();
  const Mat xc = xs.colwise() - s.x_mean;
  const Mat yc = ys.colwise() - s.y_mean;
  const double scale = 1.0 / static_cast<double>(ne - 1);
  s.p_xy.noalias() = scale * (xc * yc.transpose());
  s.p_yy.noalias() = scale * (yc * yc.transpose());
  return s;
}

/// Multiplicative inflation about the ensemble mean (1.0 = no-op).
inline void inflate_ensemble(Mat& members, double factor) {
  if (factor == 1.0) return;
  require(factor > 0.0, "inflate_ensemble: factor must be positive");
  const Vec mean = members.rowwise().mean();
  members = ((members.colwise() - mean) * factor).colwise() + mean;
}

}  // namespace lenkf
