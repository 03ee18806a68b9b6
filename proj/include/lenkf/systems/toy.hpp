#pragma once

#include "lenkf/common.hpp"
#include "lenkf/rng.hpp"

#include <cmath>

namespace lenkf {

/// 100-dimensional rotation testbed: a single angle drives the state
/// through a fixed random embedding x = W [cos(theta); sin(theta)].
struct ToyParams {
  double delta = M_PI / 50.0;  // constant rotation increment
  double alpha = 0.01;         // weak nonlinearity
  double noise_c = 0.01;       // process noise scale on the angle
};

inline double toy_step(double theta, const ToyParams& p, RngStream& rng) {
  return theta + p.delta + p.alpha * std::sin(2.0 * theta) + p.noise_c * rng.normal();
}

/// Deterministic part of the angle map (noise term forced to zero).
inline double toy_step_mean(double theta, const ToyParams& p) {
  return theta + p.delta + p.alpha * std::sin(2.0 * theta);
}

inline Vec toy_embed(double theta, const Mat& w) {
  require(w.cols() == 2, "toy_embed: W must have two columns");
  Vec cs(2);
  cs << std::cos(theta), std::sin(theta);
  return w * cs;
}

inline Mat make_toy_w(int dim, RngStream& rng) { return rng.normal_mat(dim, 2); }

/// Least-squares recovery of the angle from an ambient-space vector.
/// w_pinv is the 2 x D pseudo-inverse of W, precomputed once per model.
inline double toy_recover_angle(const Vec& x, const Mat& w_pinv) {
  Vec cs = w_pinv * x;
  return std::atan2(cs[1], cs[0]);
}

inline Mat toy_w_pinv(const Mat& w) {
  return (w.transpose() * w).ldlt().solve(w.transpose());
}

/// One transition of the toy system extended to the full ambient space:
/// the in-plane coordinates z = W^+ x are rotated through the angle
/// increment of the recovered angle (preserving the in-plane radius),
/// and the component of x outside the column space of W is carried
/// along unchanged. On the data manifold (x = W [cos t; sin t]) this
/// reduces exactly to the angular dynamics. Off the manifold the map is
/// deliberately neutral: the forecast neither amplifies nor repairs
/// deviations, so any off-manifold displacement introduced by an
/// analysis update persists until an observation corrects it.
inline Vec toy_advance_state(const Vec& x, const Mat& w, const Mat& w_pinv,
                             const ToyParams& p, RngStream& rng) {
  Vec z = w_pinv * x;
  const double theta = std::atan2(z[1], z[0]);
  const double inc = toy_step(theta, p, rng) - theta;
  const double c = std::cos(inc);
  const double s = std::sin(inc);
  Vec z_next(2);
  z_next << c * z[0] - s * z[1], s * z[0] + c * z[1];
  return x + w * (z_next - z);
}

}  // namespace lenkf
