#pragma once

#include "lenkf/common.hpp"

#include <algorithm>

namespace lenkf {

/// Time-delay embedding y_k^(L) = [y_{k-L+1}; ...; y_k] (chronological,
/// newest last). Steps before the start of the sequence are padded by
/// repeating the earliest available observation.
inline Vec delay_embed(const Mat& obs, int k, int L) {
  require(L >= 1, "delay_embed: L must be >= 1");
  require(k >= 0 && k < obs.cols(), "delay_embed: step out of range");
  const auto dy = obs.rows();
  Vec out(L * dy);
  for (int j = 0; j < L; ++j) {
    const int src = std::max(0, k - (L - 1) + j);
    out.segment(static_cast<Eigen::Index>(j) * dy, dy) = obs.col(src);
  }
  return out;
}

/// Delay embedding of every column: output is (L*Dy) x K with column k equal
/// to delay_embed(obs, k, L).
inline Mat delay_embed_all(const Mat& obs, int L) {
  Mat out(L * obs.rows(), obs.cols());
  for (int k = 0; k < obs.cols(); ++k) out.col(k) = delay_embed(obs, k, L);
  return out;
}

}  // namespace lenkf
