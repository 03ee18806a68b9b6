#pragma once

#include "lenkf/common.hpp"
#include "lenkf/systems/integrate.hpp"

namespace lenkf {

struct Lorenz96Params {
  double forcing = 8.0;
  double dt = 0.01;    // integrator step
  int burn_in = 1000;  // RK4 steps discarded before recording
};

/// dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F with periodic wrapping.
inline Vec lorenz96_rhs(const Vec& x, double forcing) {
  const Eigen::Index d = x.size();
  require(d >= 4, "lorenz96_rhs: dimension must be >= 4");
  Vec out(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double xp1 = x[(i + 1) % d];
    const double xm1 = x[(i - 1 + d) % d];
    const double xm2 = x[(i - 2 + d) % d];
    out[i] = (xp1 - xm2) * xm1 - x[i] + forcing;
  }
  return out;
}

inline Vec lorenz96_step(const Vec& x, const Lorenz96Params& p) {
  return rk4_step([&](const Vec& v) { return lorenz96_rhs(v, p.forcing); }, x, p.dt);
}

/// Advance by n integrator steps.
inline Vec lorenz96_advance(Vec x, const Lorenz96Params& p, int n_steps) {
  for (int s = 0; s < n_steps; ++s) x = lorenz96_step(x, p);
  return x;
}

}  // namespace lenkf
