#pragma once

#include "lenkf/common.hpp"

#include <cstdint>
#include <random>
#include <string>

namespace lenkf {

/// Seeded random stream. Experiments never share one stream across
/// independent roles; instead every consumer derives its own substream
/// from (master seed, label, indices) so that results do not depend on
/// evaluation order and stay reproducible run to run.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  /// Substream derivation: label is hashed, indices are mixed in verbatim.
  static RngStream derive(std::uint64_t master, const std::string& label,
                          std::uint64_t i0 = 0, std::uint64_t i1 = 0,
                          std::uint64_t i2 = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(master),
                      static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(fnv1a(label)),
                      static_cast<std::uint32_t>(fnv1a(label) >> 32),
                      static_cast<std::uint32_t>(i0),
                      static_cast<std::uint32_t>(i0 >> 32),
                      static_cast<std::uint32_t>(i1),
                      static_cast<std::uint32_t>(i1 >> 32),
                      static_cast<std::uint32_t>(i2),
                      static_cast<std::uint32_t>(i2 >> 32)};
    RngStream s(0);
    s.engine_.seed(seq);
    return s;
  }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }         // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(engine_);
  }

  Vec normal_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Mat normal_mat(Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace lenkf
