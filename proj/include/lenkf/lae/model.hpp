#pragma once

#include "lenkf/common.hpp"
#include "lenkf/lae/delay.hpp"
#include "lenkf/lae/normalization.hpp"
#include "lenkf/nn/network.hpp"
#include "lenkf/tensor_io.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace lenkf {

/// Model variants sharing the two-stage recipe:
///  - lae: linear latent operator A with the stability penalty;
///  - ae:  plain autoencoder (reconstruction loss only, no latent dynamics);
///  - dae: A replaced by a small nonlinear network, no stability penalty.
enum class ModelVariant { Lae, Ae, Dae };

inline std::string variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::Lae: return "lae";
    case ModelVariant::Ae: return "ae";
    case ModelVariant::Dae: return "dae";
  }
  return "?";
}

inline ModelVariant variant_from_name(const std::string& s) {
  if (s == "lae") return ModelVariant::Lae;
  if (s == "ae") return ModelVariant::Ae;
  if (s == "dae") return ModelVariant::Dae;
  throw std::runtime_error("unknown model variant: " + s);
}

/// Trained latent model bundle: encoder E, decoder D, latent transition
/// (matrix A or nonlinear propagator), observation encoder E_obs, latent
/// observation matrix H (empty = identity), estimated latent observation
/// covariance, and the normalization stats the networks were trained under.
struct LatentModel {
  ModelVariant variant = ModelVariant::Lae;
  int state_dim = 0;
  int obs_dim = 0;     // single-observation dimension D_y
  int latent_dim = 0;  // n
  int delay = 1;       // L

  DenseNet encoder;      // D -> n (normalized input)
  DenseNet decoder;      // n -> D (normalized output)
  DenseNet obs_encoder;  // L*D_y -> m (normalized input)
  DenseNet propagator;   // n -> n, dae only
  Mat a;                 // n x n, lae/ae
  Mat h;                 // m x n latent observation matrix; empty = identity
  Mat gamma_tilde;       // m x m; empty until estimated

  Normalization state_norm;      // dimension D
  Normalization obs_norm;        // dimension D_y (single observation)
  Normalization obs_delay_norm;  // dimension L*D_y, tiled from obs_norm

  std::string config_hash;

  bool has_propagator() const { return variant == ModelVariant::Dae; }
  int obs_latent_dim() const { return h.size() > 0 ? static_cast<int>(h.rows()) : latent_dim; }

  Mat encode(const Mat& x_raw) const { return encoder.forward(state_norm.apply(x_raw)); }
  Mat decode(const Mat& z) const { return state_norm.invert(decoder.forward(z)); }
  Mat propagate(const Mat& z) const { return has_propagator() ? propagator.forward(z) : a * z; }
  Mat apply_h(const Mat& z) const { return h.size() > 0 ? h * z : z; }

  /// Encode a raw delay-embedded observation vector (or batch of columns).
  Mat encode_obs(const Mat& y_delayed_raw) const {
    return obs_encoder.forward(obs_delay_norm.apply(y_delayed_raw));
  }

  void validate() const {
    require(state_dim > 0 && obs_dim > 0 && latent_dim > 0 && delay >= 1,
            "LatentModel: bad dimensions");
    require(encoder.in_dim() == state_dim && encoder.out_dim() == latent_dim,
            "LatentModel: encoder dimension chain");
    require(decoder.in_dim() == latent_dim && decoder.out_dim() == state_dim,
            "LatentModel: decoder dimension chain");
    if (has_propagator()) {
      require(propagator.in_dim() == latent_dim && propagator.out_dim() == latent_dim,
              "LatentModel: propagator dimension chain");
    } else {
      require(a.rows() == latent_dim && a.cols() == latent_dim, "LatentModel: A must be n x n");
    }
    if (obs_encoder.layers.size() > 0) {
      require(obs_encoder.in_dim() == delay * obs_dim &&
                  obs_encoder.out_dim() == obs_latent_dim(),
              "LatentModel: observation encoder dimension chain");
    }
    if (h.size() > 0) require(h.cols() == latent_dim, "LatentModel: H column count");
    require(state_norm.dim() == state_dim && obs_norm.dim() == obs_dim &&
                obs_delay_norm.dim() == delay * obs_dim,
            "LatentModel: normalization dimensions");
  }
};

// ---------------------------------------------------------------------------
// Bundle persistence: a model directory holds model.json (structure and
// metadata) plus one flat parameter tensor per network and matrices for A,
// H, Gamma-tilde, and the normalization stats. Round trips are bit exact.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json net_structure(const DenseNet& net) {
  nlohmann::json j;
  j["sizes"] = nlohmann::json::array();
  j["acts"] = nlohmann::json::array();
  if (!net.layers.empty()) {
    j["sizes"].push_back(net.in_dim());
    for (const Layer& l : net.layers) {
      j["sizes"].push_back(static_cast<int>(l.w.rows()));
      j["acts"].push_back(l.act == Act::LeakyRelu ? "leaky_relu" : "identity");
    }
  }
  return j;
}

inline DenseNet net_from_structure(const nlohmann::json& j) {
  DenseNet net;
  const auto sizes = j.at("sizes").get<std::vector<int>>();
  const auto acts = j.at("acts").get<std::vector<std::string>>();
  require(sizes.empty() || sizes.size() == acts.size() + 1, "model.json: bad net structure");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    Layer l;
    l.w = Mat::Zero(sizes[i + 1], sizes[i]);
    l.b = Vec::Zero(sizes[i + 1]);
    l.act = acts[i] == "leaky_relu" ? Act::LeakyRelu : Act::Identity;
    net.layers.push_back(std::move(l));
  }
  return net;
}

inline void save_net_params(const std::filesystem::path& path, const DenseNet& net) {
  Tensor t;
  t.shape = {net.n_params()};
  t.data.resize(net.n_params());
  pack_net(net, t.data.data());
  save_tensor(path, t);
}

inline void load_net_params(const std::filesystem::path& path, DenseNet& net) {
  Tensor t = load_tensor(path);
  require(t.data.size() == net.n_params(), "model bundle: parameter count mismatch");
  unpack_net(net, t.data.data());
}

inline Mat norm_to_matrix(const Normalization& n) {
  Mat m(n.dim(), 2);
  m.col(0) = n.mean;
  m.col(1) = n.stdev;
  return m;
}

inline Normalization norm_from_matrix(const Mat& m) {
  require(m.cols() == 2, "model bundle: bad normalization matrix");
  return {m.col(0), m.col(1)};
}

}  // namespace detail

inline void save_model(const std::filesystem::path& dir, const LatentModel& m) {
  namespace fs = std::filesystem;
  m.validate();
  fs::create_directories(dir);

  nlohmann::json j;
  j["format"] = "lenkf-model-1";
  j["variant"] = variant_name(m.variant);
  j["state_dim"] = m.state_dim;
  j["obs_dim"] = m.obs_dim;
  j["latent_dim"] = m.latent_dim;
  j["delay"] = m.delay;
  j["config_hash"] = m.config_hash;
  j["encoder"] = detail::net_structure(m.encoder);
  j["decoder"] = detail::net_structure(m.decoder);
  j["obs_encoder"] = detail::net_structure(m.obs_encoder);
  j["propagator"] = detail::net_structure(m.propagator);
  j["has_h"] = m.h.size() > 0;
  j["has_gamma_tilde"] = m.gamma_tilde.size() > 0;
  std::ofstream os(dir / "model.json");
  require(os.good(), "save_model: cannot open model.json");
  os << j.dump(2) << "\n";
  require(os.good(), "save_model: write failed");

  detail::save_net_params(dir / "encoder.bin", m.encoder);
  detail::save_net_params(dir / "decoder.bin", m.decoder);
  detail::save_net_params(dir / "obs_encoder.bin", m.obs_encoder);
  detail::save_net_params(dir / "propagator.bin", m.propagator);
  if (!m.has_propagator()) save_matrix(dir / "a.bin", m.a);
  if (m.h.size() > 0) save_matrix(dir / "h.bin", m.h);
  if (m.gamma_tilde.size() > 0) save_matrix(dir / "gamma_tilde.bin", m.gamma_tilde);
  save_matrix(dir / "state_norm.bin", detail::norm_to_matrix(m.state_norm));
  save_matrix(dir / "obs_norm.bin", detail::norm_to_matrix(m.obs_norm));
}

inline LatentModel load_model(const std::filesystem::path& dir) {
  std::ifstream is(dir / "model.json");
  require(is.good(), "load_model: cannot open model.json");
  nlohmann::json j = nlohmann::json::parse(is);
  require(j.at("format") == "lenkf-model-1", "load_model: unknown format");

  LatentModel m;
  m.variant = variant_from_name(j.at("variant").get<std::string>());
  m.state_dim = j.at("state_dim").get<int>();
  m.obs_dim = j.at("obs_dim").get<int>();
  m.latent_dim = j.at("latent_dim").get<int>();
  m.delay = j.at("delay").get<int>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.encoder = detail::net_from_structure(j.at("encoder"));
  m.decoder = detail::net_from_structure(j.at("decoder"));
  m.obs_encoder = detail::net_from_structure(j.at("obs_encoder"));
  m.propagator = detail::net_from_structure(j.at("propagator"));
  detail::load_net_params(dir / "encoder.bin", m.encoder);
  detail::load_net_params(dir / "decoder.bin", m.decoder);
  detail::load_net_params(dir / "obs_encoder.bin", m.obs_encoder);
  detail::load_net_params(dir / "propagator.bin", m.propagator);
  if (!m.has_propagator()) m.a = load_matrix(dir / "a.bin");
  if (j.at("has_h").get<bool>()) m.h = load_matrix(dir / "h.bin");
  if (j.at("has_gamma_tilde").get<bool>()) m.gamma_tilde = load_matrix(dir / "gamma_tilde.bin");
  m.state_norm = detail::norm_from_matrix(load_matrix(dir / "state_norm.bin"));
  m.obs_norm = detail::norm_from_matrix(load_matrix(dir / "obs_norm.bin"));
  m.obs_delay_norm = tile_normalization(m.obs_norm, m.delay);
  m.validate();
  return m;
}

}  // namespace lenkf
