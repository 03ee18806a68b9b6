#pragma once

#include "lenkf/common.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace lenkf {

/// Gaspari-Cohn 5th-order piecewise-rational compactly supported correlation
/// with half-support `c`: value 1 at r = 0, 0.2083... at r = c, exactly 0
/// for r >= 2c.
inline double gaspari_cohn(double r, double c) {
  require(c > 0.0, "gaspari_cohn: radius must be positive");
  const double a = std::abs(r) / c;
  if (a >= 2.0) return 0.0;
  const double a2 = a * a, a3 = a2 * a, a4 = a3 * a, a5 = a4 * a;
  if (a <= 1.0)
    return -0.25 * a5 + 0.5 * a4 + 0.625 * a3 - 5.0 / 3.0 * a2 + 1.0;
  return a5 / 12.0 - 0.5 * a4 + 0.625 * a3 + 5.0 / 3.0 * a2 - 5.0 * a + 4.0 - 2.0 / (3.0 * a);
}

/// Periodic lattice distance on a ring of `dim` sites.
inline double periodic_distance(int i, int j, int dim) {
  const int d = std::abs(i - j);
  return static_cast<double>(std::min(d, dim - d));
}

/// Schur-product taper for the state/observation cross-covariance: entry
/// (i, j) = GC(dist(site i, site of observation j), radius).
inline Mat gc_taper_xy(int dim, const std::vector<int>& obs_sites, double radius) {
  Mat t(dim, obs_sites.size());
  for (int i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < obs_sites.size(); ++j)
      t(i, j) = gaspari_cohn(periodic_distance(i, obs_sites[j], dim), radius);
  return t;
}

/// Taper for the observation-space covariance between observation sites.
inline Mat gc_taper_yy(int dim, const std::vector<int>& obs_sites, double radius) {
  const auto m = static_cast<Eigen::Index>(obs_sites.size());
  Mat t(m, m);
  for (Eigen::Index j1 = 0; j1 < m; ++j1)
    for (Eigen::Index j2 = 0; j2 < m; ++j2)
      t(j1, j2) = gaspari_cohn(periodic_distance(obs_sites[j1], obs_sites[j2], dim), radius);
  return t;
}

}  // namespace lenkf
