#pragma once

#include "lenkf/common.hpp"

namespace lenkf {

/// Classical fourth-order Runge-Kutta step for dx/dt = rhs(x).
/// Throws if any intermediate stage goes non-finite.
template <typename Rhs>
Vec rk4_step(Rhs&& rhs, const Vec& x, double dt) {
  require(dt > 0.0, "rk4_step: dt must be positive");
  Vec k1 = rhs(x);
  Vec k2 = rhs(x + 0.5 * dt * k1);
  Vec k3 = rhs(x + 0.5 * dt * k2);
  Vec k4 = rhs(x + dt * k3);
  require(k1.allFinite() && k2.allFinite() && k3.allFinite() && k4.allFinite(),
          "rk4_step: non-finite stage");
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace lenkf
