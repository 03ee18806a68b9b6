#pragma once

#include "lenkf/common.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace lenkf {

struct StepError {
  double value = 0.0;
  bool defined = true;  // false when the truth norm is zero
};

/// Per-step relative state error ||x_hat - x|| / ||x||. A zero truth norm
/// makes the metric undefined; such steps are excluded from aggregation but
/// counted by the callers.
inline StepError relative_error_step(const Vec& estimate, const Vec& truth) {
  require(estimate.size() == truth.size(), "relative_error_step: size mismatch");
  const double denom = truth.norm();
  if (denom == 0.0) return {0.0, false};
  return {(estimate - truth).norm() / denom, true};
}

struct GlobalErrors {
  double e_1t = 0.0;   // sqrt( (1/(T D)) sum_k sum_i (x_hat - x)^2 )
  double e_rel = 0.0;  // e_1t / sqrt( (1/T) sum_k (1/D) sum_i x^2 )
  bool defined = true;
};

/// Global errors over an assimilation window; columns of both matrices are
/// the per-cycle states (k = 1..T).
inline GlobalErrors global_errors(const Mat& estimates, const Mat& truths) {
  require(estimates.rows() == truths.rows() && estimates.cols() == truths.cols(),
          "global_errors: shape mismatch");
  require(estimates.cols() >= 1, "global_errors: empty window");
  const double td = static_cast<double>(estimates.size());
  GlobalErrors g;
  g.e_1t = std::sqrt((estimates - truths).squaredNorm() / td);
  const double denom_sq = truths.squaredNorm() / td;
  if (denom_sq == 0.0) {
    g.defined = false;
    return g;
  }
  g.e_rel = g.e_1t / std::sqrt(denom_sq);
  return g;
}

struct CiBand {
  Vec mean, lo, hi;  // pointwise mean and normal-approximation confidence band
};

/// Pointwise mean +/- z * std / sqrt(R) over R run curves (population std).
inline CiBand multirun_ci(const std::vector<Vec>& curves, double z = 1.96) {
  require(curves.size() >= 2, "multirun_ci: need at least 2 runs");
  const auto len = curves[0].size();
  const double r = static_cast<double>(curves.size());
  Vec sum = Vec::Zero(len);
  for (const Vec& c : curves) {
    require(c.size() == len, "multirun_ci: curve length mismatch");
    sum += c;
  }
  CiBand band;
  band.mean = sum / r;
  // Two-pass variance: the one-pass formula cancels catastrophically when
  // the runs agree closely, and identical runs must give exact zero width.
  Vec var = Vec::Zero(len);
  for (const Vec& c : curves) {
    const Vec dev = c - band.mean;
    var += dev.cwiseProduct(dev);
  }
  var /= r;
  const Vec half = (z / std::sqrt(r)) * var.cwiseSqrt();
  band.lo = band.mean - half;
  band.hi = band.mean + half;
  return band;
}

/// Median of a sample (average of the middle pair for even sizes).
inline double median(std::vector<double> xs) {
  require(!xs.empty(), "median: empty sample");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace lenkf
