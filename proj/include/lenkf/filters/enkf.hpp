#pragma once

#include "lenkf/common.hpp"
#include "lenkf/filters/ensemble.hpp"
#include "lenkf/filters/result.hpp"
#include "lenkf/metrics/metrics.hpp"
#include "lenkf/rng.hpp"
#include "lenkf/systems/dataset.hpp"
#include "lenkf/systems/observation.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <functional>

namespace lenkf {

namespace detail {

/// Cholesky with a single jitter retry (1e-9 * trace / dim on the diagonal).
inline Eigen::LLT<Mat> chol_with_jitter(Mat s, const char* what) {
  Eigen::LLT<Mat> llt(s);
  if (llt.info() == Eigen::Success) return llt;
  const double jitter = 1e-9 * s.trace() / static_cast<double>(s.rows());
  s += jitter * Mat::Identity(s.rows(), s.cols());
  llt.compute(s);
  require(llt.info() == Eigen::Success,
          std::string("Cholesky failed after jitter retry: ") + what);
  return llt;
}

}  // namespace detail

struct AnalysisOptions {
  const Mat* taper_xy = nullptr;  // Schur taper for P_xy (localized EnKF)
  const Mat* taper_yy = nullptr;  // Schur taper for P_yy
  bool perturb_obs = true;        // false: eta = 0 (deterministic update, tests)
};

/// Ensemble forecast: members propagated by `model` (which may consume RNG
/// draws for its own process noise), plus optional additive isotropic noise.
template <typename Model>
inline Mat enkf_forecast(const Mat& members, Model&& model, double process_noise_std,
                         RngStream& rng) {
  Mat out(members.rows(), members.cols());
  for (Eigen::Index j = 0; j < members.cols(); ++j) {
    out.col(j) = model(members.col(j), rng);
    if (process_noise_std > 0.0) out.col(j) += process_noise_std * rng.normal_vec(members.rows());
  }
  require(out.allFinite(), "enkf_forecast: non-finite member");
  return out;
}

/// Perturbed-observation analysis: K = P_xy (P_yy + Gamma)^-1, each member
/// shifted by K (y + eta_j - yhat_j) with eta_j ~ N(0, Gamma).
inline Mat enkf_analysis(const Mat& xf, const Mat& yf, const Vec& y_obs, const Mat& gamma,
                         RngStream& rng, const AnalysisOptions& opt = {}) {
  require(xf.cols() == yf.cols(), "enkf_analysis: member count mismatch");
  require(yf.rows() == y_obs.size() && gamma.rows() == y_obs.size() &&
              gamma.cols() == y_obs.size(),
          "enkf_analysis: observation dimension mismatch");
  SampleStats stats = sample_stats(xf, yf);
  if (opt.taper_xy != nullptr) {
    require(opt.taper_xy->rows() == stats.p_xy.rows() &&
                opt.taper_xy->cols() == stats.p_xy.cols(),
            "enkf_analysis: taper_xy shape mismatch");
    stats.p_xy = stats.p_xy.cwiseProduct(*opt.taper_xy);
  }
  if (opt.taper_yy != nullptr) {
    require(opt.taper_yy->rows() == stats.p_yy.rows() &&
                opt.taper_yy->cols() == stats.p_yy.cols(),
            "enkf_analysis: taper_yy shape mismatch");
    stats.p_yy = stats.p_yy.cwiseProduct(*opt.taper_yy);
  }

  const Eigen::LLT<Mat> llt_s = detail::chol_with_jitter(stats.p_yy + gamma, "P_yy + Gamma");
  const Mat gain = llt_s.solve(stats.p_xy.transpose()).transpose();

  Mat innovations(y_obs.size(), xf.cols());
  if (opt.perturb_obs) {
    const Eigen::LLT<Mat> llt_g = detail::chol_with_jitter(gamma, "Gamma");
    const Mat chol_l = llt_g.matrixL();
    for (Eigen::Index j = 0; j < xf.cols(); ++j)
      innovations.col(j) = y_obs + chol_l * rng.normal_vec(y_obs.size()) - yf.col(j);
  } else {
    innovations = (-yf).colwise() + y_obs;
  }
  Mat xa = xf;
  xa.noalias() += gain * innovations;
  require(xa.allFinite(), "enkf_analysis: non-finite analysis member");
  return xa;
}

struct PhysicalFilterOptions {
  double inflation = 1.0;          // multiplicative, about the forecast mean
  double gamma_scale = 1.0;        // scales Gamma (zero-gain limit tests)
  double process_noise_std = 0.0;  // additive isotropic forecast noise
  const Mat* taper_xy = nullptr;
  const Mat* taper_yy = nullptr;
  std::function<Mat(const Mat&)> project;  // applied to the forecast ensemble
                                           // before analysis (AE variant)
};

/// Physical-space EnKF over all cycles of one test trajectory. Column k of
/// `observations`/`truth` is the observation/true state at cycle k; column 0
/// (the initial condition) is not assimilated.
inline AssimilationResult run_enkf(const SystemModel& model, const Mat& init_ensemble,
                                   const Mat& observations, const Mat& truth,
                                   const ObservationOperator& obs_op, std::uint64_t seed,
                                   const PhysicalFilterOptions& opt = {}) {
  require(observations.cols() == truth.cols() && observations.cols() >= 2,
          "run_enkf: schedule mismatch");
  require(init_ensemble.rows() == truth.rows(), "run_enkf: member dimension mismatch");
  require(init_ensemble.cols() >= 2, "run_enkf: need at least 2 members");
  const int n_cycles = static_cast<int>(observations.cols()) - 1;
  const Mat gamma =
      opt.gamma_scale * obs_op.noise_std * obs_op.noise_std *
      Mat::Identity(obs_op.dy(), obs_op.dy());
  AnalysisOptions aopt;
  aopt.taper_xy = opt.taper_xy;
  aopt.taper_yy = opt.taper_yy;

  AssimilationResult res;
  res.estimates.resize(truth.rows(), n_cycles);
  res.rel_errors.resize(n_cycles);

  Mat members = init_ensemble;
  const auto tic = std::chrono::steady_clock::now();
  for (int k = 1; k <= n_cycles; ++k) {
    RngStream rng = RngStream::derive(seed, "cycle", k);
    members = enkf_forecast(
        members, [&](const Vec& x, RngStream& r) { return model.step(x, r); },
        opt.process_noise_std, rng);
    if (opt.project) members = opt.project(members);
    inflate_ensemble(members, opt.inflation);
    const Mat predicted = obs_op.apply_ensemble(members);
    members = enkf_analysis(members, predicted, observations.col(k), gamma, rng, aopt);
    res.estimates.col(k - 1) = members.rowwise().mean();
    res.rel_errors[k - 1] = relative_error_step(res.estimates.col(k - 1), truth.col(k));
  }
  const auto toc = std::chrono::steady_clock::now();
  res.wall_clock_s = std::chrono::duration<double>(toc - tic).count();
  return res;
}

}  // namespace lenkf
