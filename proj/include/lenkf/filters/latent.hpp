#pragma once

#include "lenkf/common.hpp"
#include "lenkf/filters/enkf.hpp"
#include "lenkf/lae/delay.hpp"
#include "lenkf/lae/model.hpp"

#include <chrono>

namespace lenkf {

struct LatentFilterOptions {
  double inflation = 1.0;
  double gamma_scale = 1.0;
};

/// Latent-space EnKF shared by the lae and dae variants:
///   z_0 = E(x_0) per member; per cycle z <- A z (or the nonlinear
///   propagator), predicted latent observation H z, real observation
///   delay-embedded and encoded by E_obs, perturbed-observation analysis
///   with Gamma-tilde, estimate decoded from the latent mean.
inline AssimilationResult run_latent_enkf(const LatentModel& model, const Mat& init_ensemble,
                                          const Mat& observations, const Mat& truth,
                                          std::uint64_t seed,
                                          const LatentFilterOptions& opt = {}) {
  model.validate();
  require(model.gamma_tilde.size() > 0, "run_latent_enkf: model has no Gamma-tilde estimate");
  require(observations.cols() == truth.cols() && observations.cols() >= 2,
          "run_latent_enkf: schedule mismatch");
  require(init_ensemble.rows() == model.state_dim, "run_latent_enkf: member dimension mismatch");
  require(observations.rows() == model.obs_dim, "run_latent_enkf: observation dimension mismatch");
  require(init_ensemble.cols() >= 2, "run_latent_enkf: need at least 2 members");
  const int n_cycles = static_cast<int>(observations.cols()) - 1;
  const Mat gamma = opt.gamma_scale * model.gamma_tilde;

  AssimilationResult res;
  res.estimates.resize(model.state_dim, n_cycles);
  res.rel_errors.resize(n_cycles);

  Mat z = model.encode(init_ensemble);
  const auto tic = std::chrono::steady_clock::now();
  for (int k = 1; k <= n_cycles; ++k) {
    RngStream rng = RngStream::derive(seed, "cycle", k);
    z = model.propagate(z);
    require(z.allFinite(), "run_latent_enkf: non-finite latent member");
    inflate_ensemble(z, opt.inflation);
    const Mat predicted = model.apply_h(z);
    const Vec y_enc = model.encode_obs(delay_embed(observations, k, model.delay)).col(0);
    z = enkf_analysis(z, predicted, y_enc, gamma, rng);
    res.estimates.col(k - 1) = model.decode(z.rowwise().mean()).col(0);
    res.rel_errors[k - 1] = relative_error_step(res.estimates.col(k - 1), truth.col(k));
  }
  const auto toc = std::chrono::steady_clock::now();
  res.wall_clock_s = std::chrono::duration<double>(toc - tic).count();
  return res;
}

inline AssimilationResult run_lae_enkf(const LatentModel& model, const Mat& init_ensemble,
                                       const Mat& observations, const Mat& truth,
                                       std::uint64_t seed, const LatentFilterOptions& opt = {}) {
  require(model.variant == ModelVariant::Lae, "run_lae_enkf: model is not the lae variant");
  return run_latent_enkf(model, init_ensemble, observations, truth, seed, opt);
}

inline AssimilationResult run_dae_enkf(const LatentModel& model, const Mat& init_ensemble,
                                       const Mat& observations, const Mat& truth,
                                       std::uint64_t seed, const LatentFilterOptions& opt = {}) {
  require(model.variant == ModelVariant::Dae, "run_dae_enkf: model is not the dae variant");
  return run_latent_enkf(model, init_ensemble, observations, truth, seed, opt);
}

/// AE baseline: physical-space EnKF whose forecast members are passed
/// through the trained autoencoder (decode . encode) before each analysis.
/// With an identity autoencoder this reduces bit-for-bit to run_enkf.
inline AssimilationResult run_ae_enkf(const LatentModel& model, const SystemModel& system,
                                      const Mat& init_ensemble, const Mat& observations,
                                      const Mat& truth, const ObservationOperator& obs_op,
                                      std::uint64_t seed,
                                      const PhysicalFilterOptions& base_opt = {}) {
  require(model.variant == ModelVariant::Ae, "run_ae_enkf: model is not the ae variant");
  require(!base_opt.project, "run_ae_enkf: projection hook is set internally");
  PhysicalFilterOptions opt = base_opt;
  opt.project = [&model](const Mat& x) { return model.decode(model.encode(x)); };
  return run_enkf(system, init_ensemble, observations, truth, obs_op, seed, opt);
}

}  // namespace lenkf
