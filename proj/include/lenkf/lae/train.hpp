#pragma once

#include "lenkf/common.hpp"
#include "lenkf/lae/model.hpp"
#include "lenkf/nn/adam.hpp"
#include "lenkf/nn/network.hpp"
#include "lenkf/nn/spectral.hpp"
#include "lenkf/rng.hpp"
#include "lenkf/systems/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace lenkf {

struct LossWeights {
  double rec = 1.0;
  double pred = 1.0;
  double latent = 1.0;
  double reg = 10.0;
};

struct TrainConfig {
  int latent_dim = 2;
  int delay = 1;
  std::vector<int> enc_hidden{256, 128};
  std::vector<int> dec_hidden{128, 256};
  std::vector<int> obs_hidden{128, 64};
  std::vector<int> prop_hidden{128};  // dae latent propagator (two dense layers)
  LossWeights weights;
  double lr = 1e-3;
  int batch = 128;
  int max_epochs = 500;
  int patience = 20;
  double min_delta = 1e-5;
  ModelVariant variant = ModelVariant::Lae;
  Mat h;  // fixed latent observation matrix; empty = identity (never trained)
};

/// The ae variant trains with the reconstruction term only; the dae variant
/// drops the stability penalty (its latent map is nonlinear).
inline LossWeights effective_weights(const TrainConfig& cfg) {
  LossWeights w = cfg.weights;
  if (cfg.variant == ModelVariant::Ae) w.pred = w.latent = w.reg = 0.0;
  if (cfg.variant == ModelVariant::Dae) w.reg = 0.0;
  return w;
}

/// Fresh model with He-initialized networks, A = 0.99 I, and normalization
/// stats from the training split of `ds`.
inline LatentModel make_latent_model(const Dataset& ds, const TrainConfig& cfg,
                                     std::uint64_t seed) {
  require(ds.obs_op.kind == ObservationOperator::Kind::Subsample,
          "make_latent_model: observation stats need a subsampling operator");
  LatentModel m;
  m.variant = cfg.variant;
  m.state_dim = ds.dim();
  m.obs_dim = ds.dy();
  m.latent_dim = cfg.latent_dim;
  m.delay = cfg.delay;
  m.h = cfg.h;
  m.state_norm = compute_normalization(ds.states, ds.n_train);
  m.obs_norm = subset_normalization(m.state_norm, ds.obs_op.indices);
  m.obs_delay_norm = tile_normalization(m.obs_norm, m.delay);

  RngStream enc_rng = RngStream::derive(seed, "init-encoder");
  RngStream dec_rng = RngStream::derive(seed, "init-decoder");
  RngStream obs_rng = RngStream::derive(seed, "init-obs-encoder");
  m.encoder = make_mlp(m.state_dim, cfg.enc_hidden, m.latent_dim, enc_rng);
  m.decoder = make_mlp(m.latent_dim, cfg.dec_hidden, m.state_dim, dec_rng);
  m.obs_encoder = make_mlp(m.delay * m.obs_dim, cfg.obs_hidden, m.obs_latent_dim(), obs_rng);
  if (cfg.variant == ModelVariant::Dae) {
    RngStream prop_rng = RngStream::derive(seed, "init-propagator");
    m.propagator = make_mlp(m.latent_dim, cfg.prop_hidden, m.latent_dim, prop_rng);
  } else {
    m.a = 0.99 * Mat::Identity(m.latent_dim, m.latent_dim);
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Stage I: loss1 = mean_b [ l_rec ||D(E(x_k)) - x_k||^2
//                         + l_pred ||D(A E(x_k)) - x_{k+1}||^2
//                         + l_lat ||A E(x_k) - E(x_{k+1})||^2 ]
//                + l_reg (max(0, ||A||_2 - 1))^2
// over normalized consecutive-state pairs. The latent map A is replaced by
// the nonlinear propagator for the dae variant.
// ---------------------------------------------------------------------------

struct Stage1Parts {
  double rec = 0.0, pred = 0.0, latent = 0.0, penalty = 0.0;

  double total(const LossWeights& w) const {
    return w.rec * rec + w.pred * pred + w.latent * latent + w.reg * penalty;
  }
};

struct Stage1Grads {
  NetGrads enc, dec, prop;
  Mat a;

  void reset(const LatentModel& m) {
    enc.resize_like(m.encoder);
    dec.resize_like(m.decoder);
    if (m.has_propagator())
      prop.resize_like(m.propagator);
    else
      a = Mat::Zero(m.a.rows(), m.a.cols());
  }
};

/// Loss parts (and, when `grads` is non-null, exact reverse-mode gradients)
/// of the Stage-I objective on a normalized batch. `spectral_warm` carries
/// the power-iteration start vector between calls.
inline Stage1Parts stage1_loss_grad(const LatentModel& m, const Mat& xk, const Mat& xk1,
                                    const LossWeights& w, Stage1Grads* grads,
                                    Vec* spectral_warm = nullptr) {
  require(xk.rows() == m.state_dim && xk1.rows() == m.state_dim && xk.cols() == xk1.cols(),
          "stage1_loss_grad: batch shape mismatch");
  require(xk.cols() >= 1, "stage1_loss_grad: empty batch");
  const double bsz = static_cast<double>(xk.cols());
  const bool needs_dynamics = w.pred > 0.0 || w.latent > 0.0;

  Stage1Parts parts;
  if (grads != nullptr) grads->reset(m);

  NetCache cache_e1, cache_e2, cache_d1, cache_d2, cache_p;
  const Mat z = forward_cached(m.encoder, xk, cache_e1);
  const Mat xr = forward_cached(m.decoder, z, cache_d1);
  const Mat r_rec = xr - xk;
  parts.rec = r_rec.squaredNorm() / bsz;

  Mat az, xp, z2, r_pred, r_lat;
  if (needs_dynamics) {
    az = m.has_propagator() ? forward_cached(m.propagator, z, cache_p) : Mat(m.a * z);
    xp = forward_cached(m.decoder, az, cache_d2);
    z2 = forward_cached(m.encoder, xk1, cache_e2);
    r_pred = xp - xk1;
    r_lat = az - z2;
    parts.pred = r_pred.squaredNorm() / bsz;
    parts.latent = r_lat.squaredNorm() / bsz;
  }

  SpectralResult spec;
  if (!m.has_propagator() && w.reg > 0.0) {
    spec = spectral_norm(m.a, 1e-12, 500, spectral_warm);
    if (spectral_warm != nullptr) *spectral_warm = spec.v;
    parts.penalty = spectral_penalty(spec);
  }

  if (grads == nullptr) return parts;

  // dL/d(encoder output) from the reconstruction term.
  Mat dz = backward(m.decoder, cache_d1, (2.0 * w.rec / bsz) * r_rec, grads->dec);

  // Prediction and latent-consistency terms share the propagated latent az.
  if (needs_dynamics) {
    Mat daz = backward(m.decoder, cache_d2, (2.0 * w.pred / bsz) * r_pred, grads->dec);
    daz += (2.0 * w.latent / bsz) * r_lat;
    backward(m.encoder, cache_e2, (-2.0 * w.latent / bsz) * r_lat, grads->enc);
    if (m.has_propagator()) {
      dz += backward(m.propagator, cache_p, daz, grads->prop);
    } else {
      grads->a.noalias() += daz * z.transpose();
      dz.noalias() += m.a.transpose() * daz;
    }
  }
  backward(m.encoder, cache_e1, dz, grads->enc);
  if (!m.has_propagator() && w.reg > 0.0 && parts.penalty > 0.0)
    grads->a += w.reg * spectral_penalty_grad(spec);
  return parts;
}

// ---------------------------------------------------------------------------
// Flat parameter/gradient views over the trainable Stage-I parameters
// (encoder, decoder, and A or the propagator; the ae variant keeps A fixed).
// ---------------------------------------------------------------------------

inline bool stage1_trains_a(const LatentModel& m) { return m.variant == ModelVariant::Lae; }

inline std::size_t stage1_param_count(const LatentModel& m) {
  std::size_t n = m.encoder.n_params() + m.decoder.n_params();
  if (m.has_propagator()) n += m.propagator.n_params();
  if (stage1_trains_a(m)) n += static_cast<std::size_t>(m.a.size());
  return n;
}

inline Vec pack_stage1_params(const LatentModel& m) {
  Vec p(stage1_param_count(m));
  double* dst = p.data();
  pack_net(m.encoder, dst);
  dst += m.encoder.n_params();
  pack_net(m.decoder, dst);
  dst += m.decoder.n_params();
  if (m.has_propagator()) {
    pack_net(m.propagator, dst);
  } else if (stage1_trains_a(m)) {
    std::copy(m.a.data(), m.a.data() + m.a.size(), dst);
  }
  return p;
}

inline void unpack_stage1_params(LatentModel& m, const Vec& p) {
  require(p.size() == static_cast<Eigen::Index>(stage1_param_count(m)),
          "unpack_stage1_params: size mismatch");
  const double* src = p.data();
  unpack_net(m.encoder, src);
  src += m.encoder.n_params();
  unpack_net(m.decoder, src);
  src += m.decoder.n_params();
  if (m.has_propagator()) {
    unpack_net(m.propagator, src);
  } else if (stage1_trains_a(m)) {
    std::copy(src, src + m.a.size(), m.a.data());
  }
}

inline Vec pack_stage1_grads(const LatentModel& m, const Stage1Grads& g) {
  Vec p(stage1_param_count(m));
  double* dst = p.data();
  pack_net_grads(g.enc, dst);
  dst += m.encoder.n_params();
  pack_net_grads(g.dec, dst);
  dst += m.decoder.n_params();
  if (m.has_propagator()) {
    pack_net_grads(g.prop, dst);
  } else if (stage1_trains_a(m)) {
    std::copy(g.a.data(), g.a.data() + g.a.size(), dst);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct TrainCurves {
  std::vector<double> train, val;  // one entry per epoch
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_run = 0;
};

namespace detail {

using PairItem = std::pair<int, int>;  // (trajectory, step k): sample x_k -> x_{k+1}

inline std::vector<PairItem> make_pair_items(const Dataset& ds, int t_begin, int t_end) {
  std::vector<PairItem> items;
  items.reserve(static_cast<std::size_t>(t_end - t_begin) * ds.n_steps);
  for (int t = t_begin; t < t_end; ++t)
    for (int k = 0; k < ds.n_steps; ++k) items.emplace_back(t, k);
  return items;
}

inline void gather_pair_batch(const Dataset& ds, const Normalization& norm,
                              const std::vector<PairItem>& items, std::size_t begin,
                              std::size_t end, Mat& xk, Mat& xk1) {
  const auto b = static_cast<Eigen::Index>(end - begin);
  xk.resize(ds.dim(), b);
  xk1.resize(ds.dim(), b);
  for (std::size_t i = begin; i < end; ++i) {
    const auto [t, k] = items[i];
    xk.col(static_cast<Eigen::Index>(i - begin)) = ds.states[t].col(k);
    xk1.col(static_cast<Eigen::Index>(i - begin)) = ds.states[t].col(k + 1);
  }
  xk = norm.apply(xk);
  xk1 = norm.apply(xk1);
}

inline double eval_stage1(const LatentModel& m, const Dataset& ds,
                          const std::vector<PairItem>& items, const LossWeights& w,
                          int batch) {
  LossWeights data_only = w;
  data_only.reg = 0.0;
  Mat xk, xk1;
  double acc = 0.0;
  for (std::size_t begin = 0; begin < items.size(); begin += batch) {
    const std::size_t end = std::min(items.size(), begin + batch);
    gather_pair_batch(ds, m.state_norm, items, begin, end, xk, xk1);
    acc += stage1_loss_grad(m, xk, xk1, data_only, nullptr).total(data_only) *
           static_cast<double>(end - begin);
  }
  double loss = acc / static_cast<double>(items.size());
  if (!m.has_propagator() && w.reg > 0.0)
    loss += w.reg * spectral_penalty(spectral_norm(m.a));
  return loss;
}

}  // namespace detail

/// Stage I: Adam on (encoder, decoder, latent map) with per-epoch shuffled
/// consecutive-pair batches, early stopping on the validation loss
/// (patience/min-delta in `cfg`), and restoration of the best parameters.
inline TrainCurves train_stage1(LatentModel& m, const Dataset& ds, const TrainConfig& cfg,
                                std::uint64_t seed) {
  require(cfg.batch >= 1 && cfg.max_epochs >= 1, "train_stage1: bad config");
  const LossWeights w = effective_weights(cfg);
  auto train_items = detail::make_pair_items(ds, 0, ds.n_train);
  const auto val_items = detail::make_pair_items(ds, ds.n_train, ds.n_traj);
  require(!train_items.empty() && !val_items.empty(), "train_stage1: empty split");

  Adam adam;
  adam.lr = cfg.lr;
  Vec params = pack_stage1_params(m);
  Vec best_params = params;
  Vec warm;
  Stage1Grads grads;
  Mat xk, xk1;
  TrainCurves curves;
  int stall = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    RngStream shuffle_rng = RngStream::derive(seed, "stage1-shuffle", epoch);
    std::shuffle(train_items.begin(), train_items.end(), shuffle_rng.engine());

    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < train_items.size(); begin += cfg.batch) {
      const std::size_t end = std::min(train_items.size(), begin + cfg.batch);
      detail::gather_pair_batch(ds, m.state_norm, train_items, begin, end, xk, xk1);
      const Stage1Parts parts = stage1_loss_grad(m, xk, xk1, w, &grads, &warm);
      const double loss = parts.total(w);
      require(std::isfinite(loss), "train_stage1: non-finite loss at epoch " +
                                       std::to_string(epoch) + ", batch " +
                                       std::to_string(n_batches));
      epoch_loss += loss;
      ++n_batches;
      adam.step(params, pack_stage1_grads(m, grads));
      unpack_stage1_params(m, params);
    }
    curves.train.push_back(epoch_loss / static_cast<double>(n_batches));

    const double val = detail::eval_stage1(m, ds, val_items, w, cfg.batch);
    require(std::isfinite(val),
            "train_stage1: non-finite validation loss at epoch " + std::to_string(epoch));
    curves.val.push_back(val);
    curves.epochs_run = epoch + 1;
    if (val < curves.best_val - cfg.min_delta) {
      curves.best_val = val;
      curves.best_epoch = epoch;
      best_params = params;
      stall = 0;
    } else if (++stall >= cfg.patience) {
      break;
    }
  }
  unpack_stage1_params(m, best_params);
  return curves;
}

// ---------------------------------------------------------------------------
// Stage II: loss2 = mean_b || E_obs(y_k^(L)) - H E(x_k) ||^2 with E, D, A
// frozen. Inputs and targets are fixed once E is frozen, so they are
// materialized up front.
// ---------------------------------------------------------------------------

namespace detail {

struct Stage2Data {
  Mat inputs;   // (L*Dy) x N, normalized delayed observations
  Mat targets;  // m x N, H E(x) on normalized states
};

inline Stage2Data make_stage2_data(const LatentModel& m, const Dataset& ds, int t_begin,
                                   int t_end) {
  const int per_traj = ds.n_steps + 1;
  const auto n = static_cast<Eigen::Index>(t_end - t_begin) * per_traj;
  Stage2Data d;
  d.inputs.resize(m.delay * m.obs_dim, n);
  d.targets.resize(m.obs_latent_dim(), n);
  Eigen::Index col = 0;
  for (int t = t_begin; t < t_end; ++t) {
    const Mat delayed = delay_embed_all(ds.observations[t], m.delay);
    d.inputs.middleCols(col, per_traj) = m.obs_delay_norm.apply(delayed);
    d.targets.middleCols(col, per_traj) = m.apply_h(m.encode(ds.states[t]));
    col += per_traj;
  }
  return d;
}

}  // namespace detail

/// Mean squared alignment error on a normalized batch; gradients only with
/// respect to the observation encoder.
inline double stage2_loss_grad(const LatentModel& m, const Mat& y_in, const Mat& target,
                               NetGrads* grads) {
  require(y_in.cols() == target.cols() && y_in.cols() >= 1,
          "stage2_loss_grad: batch shape mismatch");
  const double bsz = static_cast<double>(y_in.cols());
  NetCache cache;
  const Mat out = forward_cached(m.obs_encoder, y_in, cache);
  const Mat r = out - target;
  if (grads != nullptr) backward(m.obs_encoder, cache, (2.0 / bsz) * r, *grads);
  return r.squaredNorm() / bsz;
}

inline TrainCurves train_stage2(LatentModel& m, const Dataset& ds, const TrainConfig& cfg,
                                std::uint64_t seed) {
  require(cfg.batch >= 1 && cfg.max_epochs >= 1, "train_stage2: bad config");
  const detail::Stage2Data train = detail::make_stage2_data(m, ds, 0, ds.n_train);
  const detail::Stage2Data val = detail::make_stage2_data(m, ds, ds.n_train, ds.n_traj);

  Adam adam;
  adam.lr = cfg.lr;
  Vec params(m.obs_encoder.n_params());
  pack_net(m.obs_encoder, params.data());
  Vec best_params = params;
  NetGrads grads;
  TrainCurves curves;
  int stall = 0;

  std::vector<Eigen::Index> order(train.inputs.cols());
  for (Eigen::Index i = 0; i < train.inputs.cols(); ++i) order[i] = i;

  auto eval_val = [&]() {
    double acc = 0.0;
    for (Eigen::Index begin = 0; begin < val.inputs.cols(); begin += cfg.batch) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch, val.inputs.cols() - begin);
      acc += stage2_loss_grad(m, val.inputs.middleCols(begin, b),
                              val.targets.middleCols(begin, b), nullptr) *
             static_cast<double>(b);
    }
    return acc / static_cast<double>(val.inputs.cols());
  };

  Mat y_batch, t_batch;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    RngStream shuffle_rng = RngStream::derive(seed, "stage2-shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch);
      const auto b = static_cast<Eigen::Index>(end - begin);
      y_batch.resize(train.inputs.rows(), b);
      t_batch.resize(train.targets.rows(), b);
      for (std::size_t i = begin; i < end; ++i) {
        y_batch.col(static_cast<Eigen::Index>(i - begin)) = train.inputs.col(order[i]);
        t_batch.col(static_cast<Eigen::Index>(i - begin)) = train.targets.col(order[i]);
      }
      grads.resize_like(m.obs_encoder);
      const double loss = stage2_loss_grad(m, y_batch, t_batch, &grads);
      require(std::isfinite(loss), "train_stage2: non-finite loss at epoch " +
                                       std::to_string(epoch) + ", batch " +
                                       std::to_string(n_batches));
      epoch_loss += loss;
      ++n_batches;
      Vec g(params.size());
      pack_net_grads(grads, g.data());
      adam.step(params, g);
      unpack_net(m.obs_encoder, params.data());
    }
    curves.train.push_back(epoch_loss / static_cast<double>(n_batches));

    const double v = eval_val();
    require(std::isfinite(v),
            "train_stage2: non-finite validation loss at epoch " + std::to_string(epoch));
    curves.val.push_back(v);
    curves.epochs_run = epoch + 1;
    if (v < curves.best_val - cfg.min_delta) {
      curves.best_val = v;
      curves.best_epoch = epoch;
      best_params = params;
      stall = 0;
    } else if (++stall >= cfg.patience) {
      break;
    }
  }
  unpack_net(m.obs_encoder, best_params.data());
  return curves;
}

/// Latent observation covariance: sample covariance of the Stage-II
/// residuals E_obs(y^(L)) - H E(x) over the validation split plus a 1e-6
/// jitter. With fewer than m+1 residuals, falls back to the diagonal
/// variances.
inline Mat estimate_gamma_tilde(const LatentModel& m, const Dataset& ds) {
  const detail::Stage2Data val = detail::make_stage2_data(m, ds, ds.n_train, ds.n_traj);
  const Mat residuals = m.obs_encoder.forward(val.inputs) - val.targets;  // m x N
  const auto dim = residuals.rows();
  const auto n = residuals.cols();
  require(n >= 2, "estimate_gamma_tilde: need at least 2 residuals");
  const Vec mean = residuals.rowwise().mean();
  const Mat centered = residuals.colwise() - mean;
  Mat gamma;
  if (n >= dim + 1) {
    gamma = centered * centered.transpose() / static_cast<double>(n - 1);
  } else {
    gamma = (centered.cwiseProduct(centered).rowwise().sum() / static_cast<double>(n - 1))
                .asDiagonal();
  }
  gamma += 1e-6 * Mat::Identity(dim, dim);
  require(gamma.allFinite(), "estimate_gamma_tilde: non-finite covariance");
  return gamma;
}

}  // namespace lenkf
