#pragma once

#include "lenkf/common.hpp"
#include "lenkf/rng.hpp"
#include "lenkf/systems/adr.hpp"
#include "lenkf/systems/lorenz96.hpp"
#include "lenkf/systems/observation.hpp"
#include "lenkf/systems/toy.hpp"
#include "lenkf/tensor_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace lenkf {

enum class SystemKind { ToyRotation, Adr2d, Lorenz96 };

inline std::string system_name(SystemKind k) {
  switch (k) {
    case SystemKind::ToyRotation: return "toy";
    case SystemKind::Adr2d: return "adr";
    case SystemKind::Lorenz96: return "l96";
  }
  return "?";
}

inline SystemKind system_from_name(const std::string& s) {
  if (s == "toy") return SystemKind::ToyRotation;
  if (s == "adr") return SystemKind::Adr2d;
  if (s == "l96") return SystemKind::Lorenz96;
  throw std::runtime_error("unknown system kind: " + s);
}

struct SystemSpec {
  SystemKind kind = SystemKind::ToyRotation;
  int dim = 100;
  double dt_obs = 1.0;  // assimilation cycle length (toy: one map step)
  ToyParams toy;
  Lorenz96Params l96;
  AdrParams adr;

  void validate() const {
    switch (kind) {
      case SystemKind::ToyRotation:
        require(dim == 100, "toy system has D = 100");
        break;
      case SystemKind::Lorenz96:
        require(dim >= 4, "Lorenz-96 needs D >= 4");
        break;
      case SystemKind::Adr2d:
        require(dim == adr.grid_n * adr.grid_n, "ADR dim must equal grid_n^2");
        break;
    }
    require(dt_obs > 0.0, "dt_obs must be positive");
  }
};

struct DatasetParams {
  int n_traj = 500;
  int n_steps = 100;   // K assimilation cycles; K+1 states recorded
  double split = 0.9;  // leading fraction of trajectories used for training
  double obs_sigma = 0.1;
};

struct Dataset {
  SystemSpec spec;
  ObservationOperator obs_op;
  Mat toy_w;  // 100 x 2, toy only
  int n_traj = 0;
  int n_steps = 0;
  int n_train = 0;
  std::uint64_t master_seed = 0;
  std::string config_hash;
  std::vector<Mat> states;        // per trajectory, D x (K+1)
  std::vector<Mat> observations;  // per trajectory, Dy x (K+1)

  int dim() const { return spec.dim; }
  int dy() const { return obs_op.dy(); }
  int n_val() const { return n_traj - n_train; }
};

/// One assimilation-cycle transition of the underlying system, used as
/// the "true model" by the physical-space filters. The toy map carries
/// its angle process noise; the other systems are deterministic.
class SystemModel {
 public:
  SystemModel(const SystemSpec& spec, const Mat& toy_w) : spec_(spec) {
    spec_.validate();
    switch (spec_.kind) {
      case SystemKind::ToyRotation:
        require(toy_w.rows() == spec_.dim && toy_w.cols() == 2,
                "SystemModel: bad toy embedding matrix");
        toy_w_ = toy_w;
        toy_w_pinv_ = toy_w_pinv(toy_w);
        break;
      case SystemKind::Lorenz96: {
        const double ratio = spec_.dt_obs / spec_.l96.dt;
        substeps_ = static_cast<int>(std::lround(ratio));
        require(substeps_ >= 1 && std::abs(substeps_ - ratio) < 1e-9,
                "SystemModel: dt_obs must be an integer multiple of the L96 dt");
        break;
      }
      case SystemKind::Adr2d:
        adr_ = std::make_shared<AdrSolver>(spec_.adr);
        break;
    }
  }

  Vec step(const Vec& x, RngStream& rng) const {
    switch (spec_.kind) {
      case SystemKind::ToyRotation:
        return toy_advance_state(x, toy_w_, toy_w_pinv_, spec_.toy, rng);
      case SystemKind::Lorenz96:
        return lorenz96_advance(x, spec_.l96, substeps_);
      case SystemKind::Adr2d:
        return field_to_vec(adr_->advance(vec_to_field(x, spec_.adr.grid_n), spec_.dt_obs));
    }
    throw std::logic_error("SystemModel: unreachable");
  }

  const SystemSpec& spec() const { return spec_; }

 private:
  SystemSpec spec_;
  Mat toy_w_, toy_w_pinv_;
  int substeps_ = 1;
  std::shared_ptr<AdrSolver> adr_;
};

/// Default observation operator of each experiment: two random state
/// components (toy), a 5x5 sensor lattice (ADR), every other variable
/// (Lorenz-96).
inline ObservationOperator default_obs_op(const SystemSpec& spec, double sigma,
                                          std::uint64_t master_seed) {
  ObservationOperator op;
  op.noise_std = sigma;
  switch (spec.kind) {
    case SystemKind::ToyRotation: {
      RngStream rng = RngStream::derive(master_seed, "obs-indices");
      const int a = static_cast<int>(rng.index(spec.dim));
      int b = static_cast<int>(rng.index(spec.dim - 1));
      if (b >= a) ++b;
      op.indices = {a, b};
      break;
    }
    case SystemKind::Adr2d:
      op.indices = sensor_lattice_indices(spec.adr.grid_n, 5);
      break;
    case SystemKind::Lorenz96:
      op.indices = every_other_indices(spec.dim);
      break;
  }
  op.validate(spec.dim);
  return op;
}

inline Dataset generate_dataset(const SystemSpec& spec, const DatasetParams& params,
                                std::uint64_t master_seed) {
  spec.validate();
  require(params.n_traj >= 2 && params.n_steps >= 1, "generate_dataset: bad sizes");

  Dataset ds;
  ds.spec = spec;
  ds.n_traj = params.n_traj;
  ds.n_steps = params.n_steps;
  ds.n_train = static_cast<int>(std::lround(params.split * params.n_traj));
  require(ds.n_train >= 1 && ds.n_train < ds.n_traj, "generate_dataset: degenerate split");
  ds.master_seed = master_seed;

  if (spec.kind == SystemKind::ToyRotation) {
    RngStream wrng = RngStream::derive(master_seed, "toy-w");
    ds.toy_w = make_toy_w(spec.dim, wrng);
  }
  ds.obs_op = default_obs_op(spec, params.obs_sigma, master_seed);

  std::shared_ptr<const GrfSampler> grf;
  if (spec.kind == SystemKind::Adr2d)
    grf = std::make_shared<GrfSampler>(spec.adr.grid_n, spec.adr.ell);
  std::shared_ptr<const AdrSolver> adr;
  if (spec.kind == SystemKind::Adr2d) adr = std::make_shared<AdrSolver>(spec.adr);

  const int kk = params.n_steps;
  ds.states.resize(ds.n_traj);
  ds.observations.resize(ds.n_traj);
  for (int t = 0; t < ds.n_traj; ++t) {
    RngStream rng = RngStream::derive(master_seed, "data", t);
    Mat traj(spec.dim, kk + 1);
    switch (spec.kind) {
      case SystemKind::ToyRotation: {
        double theta = rng.uniform(-M_PI, M_PI);
        traj.col(0) = toy_embed(theta, ds.toy_w);
        for (int k = 1; k <= kk; ++k) {
          theta = toy_step(theta, spec.toy, rng);
          traj.col(k) = toy_embed(theta, ds.toy_w);
        }
        break;
      }
      case SystemKind::Lorenz96: {
        Vec x = Vec::Constant(spec.dim, spec.l96.forcing) + rng.normal_vec(spec.dim);
        x = lorenz96_advance(x, spec.l96, spec.l96.burn_in);
        const int sub = static_cast<int>(std::lround(spec.dt_obs / spec.l96.dt));
        traj.col(0) = x;
        for (int k = 1; k <= kk; ++k) {
          x = lorenz96_advance(x, spec.l96, sub);
          traj.col(k) = x;
        }
        break;
      }
      case SystemKind::Adr2d: {
        Mat u = grf->sample(rng);
        traj.col(0) = field_to_vec(u);
        for (int k = 1; k <= kk; ++k) {
          u = adr->advance(u, spec.dt_obs);
          traj.col(k) = field_to_vec(u);
        }
        break;
      }
    }
    require(traj.allFinite(), "generate_dataset: non-finite trajectory");
    ds.states[t] = std::move(traj);

    RngStream obs_rng = RngStream::derive(master_seed, "data-noise", t);
    Mat obs(ds.dy(), kk + 1);
    for (int k = 0; k <= kk; ++k)
      obs.col(k) = observe(ds.states[t].col(k), ds.obs_op, obs_rng);
    ds.observations[t] = std::move(obs);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Persistence: a dataset directory holds meta.txt (key = value lines) plus
// states.bin / observations.bin (and w_matrix.bin for the toy system) in the
// tensor format of tensor_io.hpp. Round trips are bit exact; doubles in the
// metadata are printed with 17 significant digits.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using KvMap = std::map<std::string, std::string>;

inline void write_kv_file(const std::filesystem::path& path, const KvMap& kv) {
  std::ofstream os(path);
  require(os.good(), "write_kv_file: cannot open " + path.string());
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  require(os.good(), "write_kv_file: write failed");
}

inline KvMap read_kv_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(is.good(), "read_kv_file: cannot open " + path.string());
  KvMap kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "read_kv_file: malformed line: " + line);
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(val);
    kv[key] = val;
  }
  return kv;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  KvMap kv;
  kv["format"] = "lenkf-dataset-1";
  kv["system"] = system_name(ds.spec.kind);
  kv["dim"] = std::to_string(ds.spec.dim);
  kv["dy"] = std::to_string(ds.dy());
  kv["n_traj"] = std::to_string(ds.n_traj);
  kv["n_steps"] = std::to_string(ds.n_steps);
  kv["n_train"] = std::to_string(ds.n_train);
  kv["dt_obs"] = format_double(ds.spec.dt_obs);
  kv["master_seed"] = std::to_string(ds.master_seed);
  kv["config_hash"] = ds.config_hash;
  kv["obs_kind"] = ds.obs_op.kind == ObservationOperator::Kind::Subsample ? "subsample" : "matrix";
  kv["obs_indices"] = join_ints(ds.obs_op.indices);
  kv["obs_sigma"] = format_double(ds.obs_op.noise_std);
  switch (ds.spec.kind) {
    case SystemKind::ToyRotation:
      kv["toy_delta"] = format_double(ds.spec.toy.delta);
      kv["toy_alpha"] = format_double(ds.spec.toy.alpha);
      kv["toy_noise_c"] = format_double(ds.spec.toy.noise_c);
      break;
    case SystemKind::Lorenz96:
      kv["l96_forcing"] = format_double(ds.spec.l96.forcing);
      kv["l96_dt"] = format_double(ds.spec.l96.dt);
      kv["l96_burn_in"] = std::to_string(ds.spec.l96.burn_in);
      break;
    case SystemKind::Adr2d:
      kv["adr_grid_n"] = std::to_string(ds.spec.adr.grid_n);
      kv["adr_mu"] = format_double(ds.spec.adr.mu);
      kv["adr_alpha"] = format_double(ds.spec.adr.alpha);
      kv["adr_ell"] = format_double(ds.spec.adr.ell);
      kv["adr_adv_scale"] = format_double(ds.spec.adr.adv_scale);
      kv["adr_cfl"] = format_double(ds.spec.adr.cfl);
      kv["adr_diff_safety"] = format_double(ds.spec.adr.diff_safety);
      kv["adr_internal_dt"] = format_double(ds.spec.adr.internal_dt);
      break;
  }
  write_kv_file(dir / "meta.txt", kv);

  auto pack = [](const std::vector<Mat>& seq) {
    Tensor t;
    const auto n = seq.size();
    const auto rows = static_cast<std::uint64_t>(seq[0].rows());
    const auto cols = static_cast<std::uint64_t>(seq[0].cols());
    t.shape = {n, cols, rows};  // (trajectory, time, component)
    t.data.resize(n * cols * rows);
    std::size_t p = 0;
    for (const Mat& m : seq)
      for (std::uint64_t k = 0; k < cols; ++k)
        for (std::uint64_t i = 0; i < rows; ++i) t.data[p++] = m(i, k);
    return t;
  };
  save_tensor(dir / "states.bin", pack(ds.states));
  save_tensor(dir / "observations.bin", pack(ds.observations));
  if (ds.spec.kind == SystemKind::ToyRotation) save_matrix(dir / "w_matrix.bin", ds.toy_w);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  KvMap kv = read_kv_file(dir / "meta.txt");
  require(kv.at("format") == "lenkf-dataset-1", "load_dataset: unknown format");

  Dataset ds;
  ds.spec.kind = system_from_name(kv.at("system"));
  ds.spec.dim = std::stoi(kv.at("dim"));
  ds.spec.dt_obs = std::stod(kv.at("dt_obs"));
  ds.n_traj = std::stoi(kv.at("n_traj"));
  ds.n_steps = std::stoi(kv.at("n_steps"));
  ds.n_train = std::stoi(kv.at("n_train"));
  ds.master_seed = std::stoull(kv.at("master_seed"));
  ds.config_hash = kv.at("config_hash");
  ds.obs_op.kind = ObservationOperator::Kind::Subsample;
  require(kv.at("obs_kind") == "subsample", "load_dataset: only subsample operators are stored");
  ds.obs_op.indices = split_ints(kv.at("obs_indices"));
  ds.obs_op.noise_std = std::stod(kv.at("obs_sigma"));
  switch (ds.spec.kind) {
    case SystemKind::ToyRotation:
      ds.spec.toy.delta = std::stod(kv.at("toy_delta"));
      ds.spec.toy.alpha = std::stod(kv.at("toy_alpha"));
      ds.spec.toy.noise_c = std::stod(kv.at("toy_noise_c"));
      ds.toy_w = load_matrix(dir / "w_matrix.bin");
      break;
    case SystemKind::Lorenz96:
      ds.spec.l96.forcing = std::stod(kv.at("l96_forcing"));
      ds.spec.l96.dt = std::stod(kv.at("l96_dt"));
      ds.spec.l96.burn_in = std::stoi(kv.at("l96_burn_in"));
      break;
    case SystemKind::Adr2d:
      ds.spec.adr.grid_n = std::stoi(kv.at("adr_grid_n"));
      ds.spec.adr.mu = std::stod(kv.at("adr_mu"));
      ds.spec.adr.alpha = std::stod(kv.at("adr_alpha"));
      ds.spec.adr.ell = std::stod(kv.at("adr_ell"));
      ds.spec.adr.adv_scale = std::stod(kv.at("adr_adv_scale"));
      ds.spec.adr.cfl = std::stod(kv.at("adr_cfl"));
      ds.spec.adr.diff_safety = std::stod(kv.at("adr_diff_safety"));
      ds.spec.adr.internal_dt = std::stod(kv.at("adr_internal_dt"));
      break;
  }
  ds.obs_op.validate(ds.spec.dim);

  auto unpack = [&](const Tensor& t, std::vector<Mat>& seq) {
    require(t.shape.size() == 3, "load_dataset: tensor rank != 3");
    const auto n = t.shape[0], cols = t.shape[1], rows = t.shape[2];
    require(n == static_cast<std::uint64_t>(ds.n_traj), "load_dataset: trajectory count mismatch");
    seq.resize(n);
    std::size_t p = 0;
    for (auto& m : seq) {
      m.resize(rows, cols);
      for (std::uint64_t k = 0; k < cols; ++k)
        for (std::uint64_t i = 0; i < rows; ++i) m(i, k) = t.data[p++];
    }
  };
  unpack(load_tensor(dir / "states.bin"), ds.states);
  unpack(load_tensor(dir / "observations.bin"), ds.observations);
  return ds;
}

}  // namespace lenkf
