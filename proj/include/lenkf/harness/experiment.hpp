#pragma once

#include "lenkf/common.hpp"
#include "lenkf/filters/enkf.hpp"
#include "lenkf/filters/init_ensemble.hpp"
#include "lenkf/filters/latent.hpp"
#include "lenkf/filters/taper.hpp"
#include "lenkf/harness/config.hpp"
#include "lenkf/lae/train.hpp"
#include "lenkf/metrics/metrics.hpp"
#include "lenkf/systems/dataset.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace lenkf {

/// Fresh 64-bit seed for a labeled substream of the master seed. The master
/// fans out to "data" (inside generate_dataset), "training",
/// "init-ensemble" and "filter-noise" substreams.
inline std::uint64_t derive_seed(std::uint64_t master, const std::string& label,
                                 std::uint64_t idx = 0) {
  RngStream s = RngStream::derive(master, label, idx);
  return s.next_u64();
}

// ---------------------------------------------------------------------------
// Config -> module structs
// ---------------------------------------------------------------------------

inline SystemSpec system_spec_from_config(const Config& cfg) {
  SystemSpec spec;
  spec.kind = system_from_name(cfg.get_str_required("system"));
  switch (spec.kind) {
    case SystemKind::ToyRotation:
      spec.dim = 100;
      spec.dt_obs = cfg.get_double("dt_obs", 1.0);
      break;
    case SystemKind::Lorenz96:
      spec.dim = cfg.get_int("dim", 40);
      spec.dt_obs = cfg.get_double("dt_obs", 0.1);
      spec.l96.forcing = cfg.get_double("l96_forcing", 8.0);
      spec.l96.dt = cfg.get_double("l96_dt", 0.01);
      spec.l96.burn_in = cfg.get_int("l96_burn_in", 1000);
      break;
    case SystemKind::Adr2d:
      spec.adr.grid_n = cfg.get_int("adr_grid_n", 64);
      spec.adr.mu = cfg.get_double("adr_mu", 1e-3);
      spec.adr.alpha = cfg.get_double("adr_alpha", 0.8);
      spec.adr.ell = cfg.get_double("adr_ell", 0.2);
      spec.adr.adv_scale = cfg.get_double("adr_adv_scale", 1.0);
      spec.dim = spec.adr.grid_n * spec.adr.grid_n;
      spec.dt_obs = cfg.get_double("dt_obs", 0.05);
      break;
  }
  spec.validate();
  return spec;
}

inline DatasetParams dataset_params_from_config(const Config& cfg) {
  DatasetParams p;
  p.n_traj = cfg.get_int("n_traj", 500);
  p.n_steps = cfg.get_int("n_steps", 100);
  p.split = cfg.get_double("split", 0.9);
  p.obs_sigma = cfg.get_double("obs_sigma", 0.1);
  return p;
}

inline TrainConfig train_config_from_config(const Config& cfg) {
  TrainConfig tc;
  tc.latent_dim = cfg.get_int("latent_dim", 2);
  tc.delay = cfg.get_int("delay", 1);
  tc.enc_hidden = cfg.get_ints("enc_hidden", {256, 128});
  std::vector<int> dec_default(tc.enc_hidden.rbegin(), tc.enc_hidden.rend());
  tc.dec_hidden = cfg.get_ints("dec_hidden", dec_default);
  tc.obs_hidden = cfg.get_ints("obs_hidden", {128, 64});
  tc.prop_hidden = cfg.get_ints("prop_hidden", {128});
  tc.lr = cfg.get_double("lr", 1e-3);
  tc.batch = cfg.get_int("batch", 128);
  tc.max_epochs = cfg.get_int("max_epochs", 500);
  tc.patience = cfg.get_int("patience", 20);
  tc.min_delta = cfg.get_double("min_delta", 1e-5);
  tc.weights.rec = cfg.get_double("lambda_rec", 1.0);
  tc.weights.pred = cfg.get_double("lambda_pred", 1.0);
  tc.weights.latent = cfg.get_double("lambda_latent", 1.0);
  tc.weights.reg = cfg.get_double("lambda_reg", 10.0);
  tc.variant = variant_from_name(cfg.get_str("variant", "lae"));
  if (cfg.has("h_file")) tc.h = load_matrix(cfg.get_str_required("h_file"));
  return tc;
}

// ---------------------------------------------------------------------------
// Output layout under the `out` root
// ---------------------------------------------------------------------------

inline std::filesystem::path out_root(const Config& cfg) {
  return cfg.get_str("out", "out");
}

inline std::filesystem::path data_dir(const Config& cfg) {
  return cfg.has("data") ? std::filesystem::path(cfg.get_str_required("data"))
                         : out_root(cfg) / "data";
}

inline std::filesystem::path model_dir_for(const Config& cfg, const std::string& variant) {
  if (cfg.has("model")) return cfg.get_str_required("model");
  return out_root(cfg) /
         ("model_" + variant + "_n" + std::to_string(cfg.get_int("latent_dim", 2)));
}

inline std::string method_dir_name(const Config& cfg, const std::string& method) {
  if (method == "enkf" || method == "enkf-loc") {
    return "assim_" + std::string(method == "enkf" ? "enkf" : "enkf_loc");
  }
  return "assim_" + method + "_n" + std::to_string(cfg.get_int("latent_dim", 2));
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void cmd_generate(const Config& cfg) {
  const SystemSpec spec = system_spec_from_config(cfg);
  const DatasetParams params = dataset_params_from_config(cfg);
  const std::uint64_t master = cfg.get_u64("seed", 1);
  Dataset ds = generate_dataset(spec, params, master);
  ds.config_hash = cfg.hash();
  save_dataset(data_dir(cfg), ds);
  std::cout << "[generate] " << system_name(spec.kind) << ": " << ds.n_traj
            << " trajectories x " << ds.n_steps + 1 << " states (D=" << ds.dim()
            << ", Dy=" << ds.dy() << ") -> " << data_dir(cfg).string() << "\n";
}

inline void write_curves_csv(const std::filesystem::path& path, const TrainCurves& s1,
                             const TrainCurves* s2) {
  std::ofstream os(path);
  require(os.good(), "cmd_train: cannot open " + path.string());
  os.precision(17);
  os << "stage,epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < s1.train.size(); ++e)
    os << "1," << e << "," << s1.train[e] << "," << s1.val[e] << "\n";
  if (s2 != nullptr)
    for (std::size_t e = 0; e < s2->train.size(); ++e)
      os << "2," << e << "," << s2->train[e] << "," << s2->val[e] << "\n";
  require(os.good(), "cmd_train: write failed");
}

inline void cmd_train(const Config& cfg) {
  const Dataset ds = load_dataset(data_dir(cfg));
  const TrainConfig tc = train_config_from_config(cfg);
  const std::uint64_t master = cfg.get_u64("seed", 1);
  const std::uint64_t train_seed = derive_seed(master, "training");

  LatentModel model = make_latent_model(ds, tc, train_seed);
  model.config_hash = cfg.hash();
  const TrainCurves s1 = train_stage1(model, ds, tc, train_seed);
  std::cout << "[train] stage I: " << s1.epochs_run << " epochs, best val " << s1.best_val
            << " (epoch " << s1.best_epoch << ")\n";

  TrainCurves s2;
  const bool has_stage2 = tc.variant != ModelVariant::Ae;
  if (has_stage2) {
    s2 = train_stage2(model, ds, tc, train_seed);
    model.gamma_tilde = estimate_gamma_tilde(model, ds);
    std::cout << "[train] stage II: " << s2.epochs_run << " epochs, best val " << s2.best_val
              << " (epoch " << s2.best_epoch << ")\n";
  }

  const auto dir = model_dir_for(cfg, variant_name(tc.variant));
  save_model(dir, model);
  write_curves_csv(dir / "curves.csv", s1, has_stage2 ? &s2 : nullptr);
  std::cout << "[train] wrote bundle -> " << dir.string() << "\n";
}

namespace detail {

struct MethodRun {
  double e_1t = 0.0, e_rel = 0.0, wall_s = 0.0;
  int undefined_steps = 0;
  Vec curve;  // per-cycle relative error
};

inline std::string variant_for_method(const std::string& method) {
  if (method == "ae") return "ae";
  if (method == "dae") return "dae";
  if (method == "lae") return "lae";
  return "";
}

inline void write_summary_json(const std::filesystem::path& path, const Config& cfg,
                               const Dataset& ds, const std::string& method,
                               const std::vector<MethodRun>& runs, int n_members,
                               int latent_dim) {
  nlohmann::json j;
  j["format"] = "lenkf-summary-1";
  j["system"] = system_name(ds.spec.kind);
  j["method"] = method;
  j["latent_dim"] = latent_dim;
  j["n_members"] = n_members;
  j["n_seeds"] = static_cast<int>(runs.size());
  j["n_cycles"] = ds.n_steps;
  j["master_seed"] = cfg.get_u64("seed", 1);
  j["config_hash"] = cfg.hash();
  std::vector<double> e1t, erel, wall;
  int undef = 0;
  nlohmann::json per_seed = nlohmann::json::array();
  for (std::size_t r = 0; r < runs.size(); ++r) {
    e1t.push_back(runs[r].e_1t);
    erel.push_back(runs[r].e_rel);
    wall.push_back(runs[r].wall_s);
    undef += runs[r].undefined_steps;
    per_seed.push_back({{"seed_index", r},
                        {"e_1t", runs[r].e_1t},
                        {"e_rel", runs[r].e_rel},
                        {"undefined_steps", runs[r].undefined_steps}});
  }
  j["per_seed"] = per_seed;
  auto agg = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    return nlohmann::json{{"mean", mean}, {"median", median(v)}};
  };
  j["e_1t"] = agg(e1t);
  j["e_rel"] = agg(erel);
  j["undefined_steps_total"] = undef;
  double wall_mean = 0.0;
  for (double w : wall) wall_mean += w;
  wall_mean /= static_cast<double>(wall.size());
  j["wall_clock_s"] = {{"per_seed", wall}, {"mean", wall_mean}};

  std::ofstream os(path);
  require(os.good(), "cmd_assimilate: cannot open " + path.string());
  os << j.dump(2) << "\n";
  require(os.good(), "cmd_assimilate: write failed");
}

inline void write_ci_csv(const std::filesystem::path& path, const std::vector<MethodRun>& runs) {
  if (runs.size() < 2) return;
  std::vector<Vec> curves;
  for (const MethodRun& r : runs) curves.push_back(r.curve);
  const CiBand band = multirun_ci(curves);
  std::ofstream os(path);
  require(os.good(), "cmd_assimilate: cannot open " + path.string());
  os.precision(17);
  os << "cycle,mean,lo,hi\n";
  for (Eigen::Index k = 0; k < band.mean.size(); ++k)
    os << (k + 1) << "," << band.mean[k] << "," << band.lo[k] << "," << band.hi[k] << "\n";
  require(os.good(), "cmd_assimilate: write failed");
}

inline void write_tidy_csv(const std::filesystem::path& path, const Dataset& ds,
                           const std::string& method, int latent_dim,
                           const std::vector<MethodRun>& runs) {
  std::ofstream os(path);
  require(os.good(), "cmd_assimilate: cannot open " + path.string());
  os.precision(17);
  os << "method,system,latent_dim,seed,metric,value\n";
  const std::string prefix =
      method + "," + system_name(ds.spec.kind) + "," + std::to_string(latent_dim) + ",";
  for (std::size_t r = 0; r < runs.size(); ++r) {
    os << prefix << r << ",e_1t," << runs[r].e_1t << "\n";
    os << prefix << r << ",e_rel," << runs[r].e_rel << "\n";
    os << prefix << r << ",wall_clock_s," << runs[r].wall_s << "\n";
  }
  require(os.good(), "cmd_assimilate: write failed");
}

/// Run one filter method over all seeds of the multi-run protocol. Seed r
/// assimilates validation trajectory n_train + (r mod n_val) so methods
/// sharing a master seed see identical truths, observations, and initial
/// ensembles.
inline void run_filter_method(const Config& cfg, const Dataset& ds, const std::string& method) {
  const int n_seeds = cfg.get_int("n_seeds", 10);
  const int n_members = cfg.get_int("n_members", 50);
  const std::uint64_t master = cfg.get_u64("seed", 1);
  const bool physical = method == "enkf" || method == "enkf-loc" || method == "ae";
  const std::string variant = variant_for_method(method);
  const int latent_dim = variant.empty() ? 0 : cfg.get_int("latent_dim", 2);
  require(n_seeds >= 1, "cmd_assimilate: n_seeds must be >= 1");

  LatentModel model;
  if (!variant.empty()) {
    model = load_model(model_dir_for(cfg, variant));
    require(model.variant == variant_from_name(variant),
            "cmd_assimilate: bundle variant mismatch for method " + method);
    require(model.state_dim == ds.dim() && model.obs_dim == ds.dy(),
            "cmd_assimilate: bundle dimensions do not match dataset");
  }

  SystemModel* sys = nullptr;
  std::unique_ptr<SystemModel> sys_holder;
  if (physical) {
    sys_holder = std::make_unique<SystemModel>(ds.spec, ds.toy_w);
    sys = sys_holder.get();
  }

  PhysicalFilterOptions popt;
  popt.inflation = cfg.get_double("inflation", 1.0);
  popt.gamma_scale = cfg.get_double("gamma_scale", 1.0);
  popt.process_noise_std = cfg.get_double("process_noise_std", 0.0);
  Mat taper_xy, taper_yy;
  if (method == "enkf-loc") {
    require(ds.spec.kind == SystemKind::Lorenz96,
            "cmd_assimilate: localized EnKF is defined on the Lorenz-96 lattice only");
    const double radius = cfg.get_double("loc_radius", 4.0);
    taper_xy = gc_taper_xy(ds.dim(), ds.obs_op.indices, radius);
    taper_yy = gc_taper_yy(ds.dim(), ds.obs_op.indices, radius);
    popt.taper_xy = &taper_xy;
    popt.taper_yy = &taper_yy;
  }
  LatentFilterOptions lopt;
  lopt.inflation = cfg.get_double("inflation", 1.0);
  lopt.gamma_scale = cfg.get_double("gamma_scale", 1.0);
  InitEnsembleOptions iopt;
  iopt.spread = cfg.get_double("init_spread", 1.0);

  const auto dir = out_root(cfg) / method_dir_name(cfg, method);
  std::filesystem::create_directories(dir);

  std::vector<MethodRun> runs;
  for (int r = 0; r < n_seeds; ++r) {
    const int truth_idx = ds.n_train + (r % ds.n_val());
    const Mat& truth = ds.states[truth_idx];
    const Mat& obs = ds.observations[truth_idx];
    const Mat init =
        make_initial_ensemble(ds, n_members, derive_seed(master, "init-ensemble", r), iopt);
    const std::uint64_t seed_r = derive_seed(master, "filter-noise", r);

    AssimilationResult res;
    if (method == "enkf" || method == "enkf-loc") {
      res = run_enkf(*sys, init, obs, truth, ds.obs_op, seed_r, popt);
    } else if (method == "ae") {
      res = run_ae_enkf(model, *sys, init, obs, truth, ds.obs_op, seed_r, popt);
    } else if (method == "lae") {
      res = run_lae_enkf(model, init, obs, truth, seed_r, lopt);
    } else if (method == "dae") {
      res = run_dae_enkf(model, init, obs, truth, seed_r, lopt);
    } else {
      throw std::runtime_error("cmd_assimilate: unknown filter '" + method + "'");
    }
    save_result_csv(dir / ("seed" + std::to_string(r) + ".csv"), res, ds.spec.dt_obs);

    MethodRun run;
    const GlobalErrors ge = global_errors(res.estimates, truth.middleCols(1, ds.n_steps));
    run.e_1t = ge.e_1t;
    run.e_rel = ge.e_rel;
    run.wall_s = res.wall_clock_s;
    run.curve.resize(res.n_cycles());
    for (int k = 0; k < res.n_cycles(); ++k) {
      run.curve[k] = res.rel_errors[k].value;
      if (!res.rel_errors[k].defined) ++run.undefined_steps;
    }
    runs.push_back(std::move(run));
  }

  write_summary_json(dir / "summary.json", cfg, ds, method, runs, n_members, latent_dim);
  write_ci_csv(dir / "ci.csv", runs);
  write_tidy_csv(dir / "tidy.csv", ds, method, latent_dim, runs);
  std::vector<double> erel;
  for (const MethodRun& r : runs) erel.push_back(r.e_rel);
  std::cout << "[assimilate] " << method << ": median E_Rel " << median(erel) << " over "
            << n_seeds << " seed(s) -> " << dir.string() << "\n";
}

}  // namespace detail

inline void cmd_assimilate(const Config& cfg) {
  const Dataset ds = load_dataset(data_dir(cfg));
  const std::string filter = cfg.get_str("filter", "lae");
  if (filter == "compare") {
    require(!cfg.has("model"), "cmd_assimilate: explicit model path conflicts with compare mode");
    std::vector<std::string> methods = {"enkf", "ae", "dae", "lae"};
    if (ds.spec.kind == SystemKind::Lorenz96) methods.insert(methods.begin() + 1, "enkf-loc");
    for (const std::string& m : methods) detail::run_filter_method(cfg, ds, m);
  } else {
    detail::run_filter_method(cfg, ds, filter);
  }
}

inline void cmd_report(const std::vector<std::string>& inputs, std::ostream& os) {
  require(!inputs.empty(), "cmd_report: no summary files given");
  struct Row {
    std::string system, method, hash;
    int latent_dim = 0, n_seeds = 0;
    double e1t_median = 0.0, erel_median = 0.0, erel_mean = 0.0, wall_mean = 0.0;
    bool best = false;
  };
  std::vector<Row> rows;
  for (const std::string& path : inputs) {
    std::ifstream is(path);
    require(is.good(), "cmd_report: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    require(j.at("format") == "lenkf-summary-1", "cmd_report: not a summary file: " + path);
    Row row;
    row.system = j.at("system").get<std::string>();
    row.method = j.at("method").get<std::string>();
    row.hash = j.at("config_hash").get<std::string>();
    row.latent_dim = j.at("latent_dim").get<int>();
    row.n_seeds = j.at("n_seeds").get<int>();
    row.e1t_median = j.at("e_1t").at("median").get<double>();
    row.erel_median = j.at("e_rel").at("median").get<double>();
    row.erel_mean = j.at("e_rel").at("mean").get<double>();
    row.wall_mean = j.at("wall_clock_s").at("mean").get<double>();
    rows.push_back(row);
  }

  // One comparison group per system; mixing config hashes there means the
  // summaries came from incompatible experiments.
  std::map<std::string, std::vector<Row*>> groups;
  for (Row& r : rows) groups[r.system].push_back(&r);
  for (auto& [system, group] : groups) {
    for (const Row* r : group)
      require(r->hash == group.front()->hash,
              "cmd_report: conflicting config hashes in system group '" + system + "'");
    Row* best = group.front();
    for (Row* r : group)
      if (r->erel_median < best->erel_median) best = r;
    best->best = true;
  }

  os.precision(17);
  os << "system,method,latent_dim,n_seeds,e_1t_median,e_rel_median,e_rel_mean,"
        "wall_clock_mean_s,best,config_hash\n";
  for (const Row& r : rows)
    os << r.system << "," << r.method << "," << r.latent_dim << "," << r.n_seeds << ","
       << r.e1t_median << "," << r.erel_median << "," << r.erel_mean << "," << r.wall_mean << ","
       << (r.best ? 1 : 0) << "," << r.hash << "\n";
}

}  // namespace lenkf
