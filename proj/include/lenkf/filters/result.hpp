#pragma once

#include "lenkf/common.hpp"
#include "lenkf/metrics/metrics.hpp"

#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

namespace lenkf {

/// Output of one assimilation run: per-cycle analysis-mean estimates in the
/// physical space, per-cycle relative errors, and the wall clock of the
/// online loop only (model loading and setup excluded).
struct AssimilationResult {
  Mat estimates;                     // D x K, column k-1 estimates cycle k
  std::vector<StepError> rel_errors;  // one per cycle
  double wall_clock_s = 0.0;

  int n_cycles() const { return static_cast<int>(estimates.cols()); }
};

inline void save_result_csv(const std::filesystem::path& path, const AssimilationResult& r,
                            double dt_obs) {
  std::ofstream os(path);
  require(os.good(), "save_result_csv: cannot open " + path.string());
  os << "cycle,time,relative_error,estimate_norm\n";
  os.precision(17);
  for (int k = 0; k < r.n_cycles(); ++k) {
    const double err = r.rel_errors[k].defined ? r.rel_errors[k].value
                                               : std::numeric_limits<double>::quiet_NaN();
    os << (k + 1) << "," << (k + 1) * dt_obs << "," << err << ","
       << r.estimates.col(k).norm() << "\n";
  }
  require(os.good(), "save_result_csv: write failed");
}

}  // namespace lenkf
