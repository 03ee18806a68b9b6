#pragma once

#include "lenkf/common.hpp"

#include <cmath>

namespace lenkf {

/// Adam over a flat parameter vector. Moment buffers are allocated on the
/// first step; the parameter size must not change afterwards.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  long step_count = 0;
  Vec m, v;

  void step(Vec& params, const Vec& grad) {
    require(params.size() == grad.size(), "Adam::step: size mismatch");
    if (step_count == 0) {
      m = Vec::Zero(params.size());
      v = Vec::Zero(params.size());
    }
    require(m.size() == params.size(), "Adam::step: parameter size changed");
    ++step_count;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    params -= (lr / bc1) *
              m.cwiseQuotient((v / bc2).cwiseSqrt() + Vec::Constant(params.size(), eps));
  }
};

}  // namespace lenkf
