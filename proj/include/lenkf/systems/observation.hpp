#pragma once

#include "lenkf/common.hpp"
#include "lenkf/rng.hpp"

#include <set>
#include <vector>

namespace lenkf {

/// Linear observation operator: either component subsampling or a full
/// matrix H, plus i.i.d. Gaussian measurement noise of std noise_std.
struct ObservationOperator {
  enum class Kind { Subsample, Matrix };

  Kind kind = Kind::Subsample;
  std::vector<int> indices;  // Subsample only
  Mat h;                     // Matrix only, Dy x D
  double noise_std = 0.0;

  int dy() const {
    return kind == Kind::Subsample ? static_cast<int>(indices.size())
                                   : static_cast<int>(h.rows());
  }

  void validate(int dim) const {
    require(noise_std >= 0.0, "ObservationOperator: negative noise std");
    if (kind == Kind::Subsample) {
      std::set<int> seen;
      for (int i : indices) {
        require(i >= 0 && i < dim, "ObservationOperator: index out of range");
        require(seen.insert(i).second, "ObservationOperator: duplicate index");
      }
      require(!indices.empty(), "ObservationOperator: no indices");
    } else {
      require(h.cols() == dim, "ObservationOperator: H column count != D");
      require(h.allFinite(), "ObservationOperator: H has non-finite entries");
    }
  }

  Vec apply(const Vec& x) const {
    if (kind == Kind::Subsample) {
      Vec y(indices.size());
      for (std::size_t k = 0; k < indices.size(); ++k) y[k] = x[indices[k]];
      return y;
    }
    return h * x;
  }

  /// Column-wise application to an ensemble matrix (D x N).
  Mat apply_ensemble(const Mat& members) const {
    if (kind == Kind::Subsample) {
      Mat y(indices.size(), members.cols());
      for (std::size_t k = 0; k < indices.size(); ++k) y.row(k) = members.row(indices[k]);
      return y;
    }
    return h * members;
  }
};

inline Vec observe(const Vec& x, const ObservationOperator& op, RngStream& rng) {
  Vec y = op.apply(x);
  if (op.noise_std > 0.0)
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += op.noise_std * rng.normal();
  return y;
}

/// Every-other-component subsampling (x_0, x_2, ...).
inline std::vector<int> every_other_indices(int dim) {
  std::vector<int> idx;
  for (int i = 0; i < dim; i += 2) idx.push_back(i);
  return idx;
}

/// k x k sensor sub-lattice of an n x n grid, row-major flat indices,
/// sensors centered in equal-width bands.
inline std::vector<int> sensor_lattice_indices(int grid_n, int k) {
  std::vector<int> idx;
  for (int a = 0; a < k; ++a) {
    const int i = static_cast<int>((a + 0.5) * grid_n / k);
    for (int b = 0; b < k; ++b) {
      const int j = static_cast<int>((b + 0.5) * grid_n / k);
      idx.push_back(i * grid_n + j);
    }
  }
  return idx;
}

}  // namespace lenkf
