// kolmo: neural multi-state survival models driven by Kolmogorov equations.
//
// Verbs:
//   simulate         draw a synthetic dataset from a parametric hazard model
//   fit              train the point model
//   fit-variational  train the latent variational model
//   predict          occupation curves (bands and rates on request)
//   evaluate         censoring-aware metrics and nonparametric comparisons
//   latent           export latent means with k-means cluster labels
//   convert          ingest a flat duration/event CSV into the bundle format
//
// Every command is deterministic given (input files, flags, seed) at
// --threads 1. Precedence for each setting: flag > KOLMO_* env > --config
// file > built-in default. Exit codes: 0 ok, 2 validation, 3 numerical, 4 io.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kolmo/io.hpp"
#include "kolmo/kmeans.hpp"
#include "kolmo/metrics.hpp"
#include "kolmo/nonparam.hpp"
#include "kolmo/parallel.hpp"
#include "kolmo/simulate.hpp"
#include "kolmo/variational.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kolmo;

namespace {

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items())
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end())
      throw ValidationError(where + ": unknown key '" + key + "'");
}

json load_json(const std::string& path) {
  auto f = ioutil::open_in(path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  auto f = ioutil::open_out(path);
  f << j.dump(1) << '\n';
  if (!f) throw IoError("write failed: " + path);
}

// Config-file fallback: applies only when the flag was given neither on the
// command line nor through its environment variable.
template <class T>
void fallback(const json& sec, const char* key, const CLI::Option* opt, T& dst, const std::string& where) {
  if (!sec.contains(key) || (opt != nullptr && opt->count() > 0)) return;
  try {
    dst = sec.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + "." + key + ": wrong type");
  }
}

void require_valid(const Dataset& ds) {
  const auto violations = validate_dataset(ds);
  if (violations.empty()) return;
  for (const auto& v : violations) {
    if (v.subject >= 0)
      std::cerr << "subject " << ds.subjects[v.subject].id << ": " << v.rule << "\n";
    else
      std::cerr << "dataset: " << v.rule << "\n";
  }
  throw ValidationError("dataset failed validation with " + std::to_string(violations.size()) + " violation(s)");
}

void make_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
}

std::vector<double> uniform_grid(double hi, int points) {
  std::vector<double> g;
  for (int k = 0; k <= points; ++k) g.push_back(hi * k / points);
  return g;
}

std::vector<std::string> subject_ids(const Dataset& ds) {
  std::vector<std::string> ids;
  for (const auto& s : ds.subjects) ids.push_back(s.id);
  return ids;
}

VectorXd covariate_vector(const SubjectRecord& sub) {
  return Eigen::Map<const VectorXd>(sub.covariates.data(), sub.covariates.size());
}

// ---- hazard spec <-> JSON ---------------------------------------------------
// States and covariate indices are 1-indexed in files.

json spec_to_json(const TrueHazardSpec& spec) {
  json j;
  j["states"] = spec.topology.n_states;
  json edges = json::array();
  for (const auto& [a, b] : spec.topology.rate_index) edges.push_back({a + 1, b + 1});
  j["transitions"] = edges;
  json hazards = json::array();
  for (const auto& e : spec.edges) {
    json h{{"shape", e.shape}, {"scale", e.scale}, {"weight", e.weight}, {"beta", e.beta}};
    json tv = json::array();
    for (int ix : e.time_varying) tv.push_back(ix + 1);
    h["time_varying"] = tv;
    hazards.push_back(h);
  }
  j["hazards"] = hazards;
  json covs = json::array();
  for (const auto& c : spec.covariates) {
    if (c.kind == CovariateColumn::Kind::Bernoulli)
      covs.push_back({{"name", c.name}, {"kind", "bernoulli"}, {"p", c.a}});
    else
      covs.push_back({{"name", c.name}, {"kind", "uniform"}, {"lo", c.a}, {"hi", c.b}});
  }
  j["covariates"] = covs;
  j["t_max"] = spec.t_max;
  j["censor_rate"] = spec.censor_rate;
  j["saw_amplitude"] = spec.saw_amplitude;
  j["saw_period"] = spec.saw_period;
  return j;
}

TrueHazardSpec spec_from_json(const json& j, const std::string& where) {
  check_keys(j, where,
             {"states", "transitions", "hazards", "covariates", "t_max", "censor_rate", "saw_amplitude",
              "saw_period"});
  TrueHazardSpec spec;
  try {
    const int S = j.at("states").get<int>();
    std::vector<std::pair<int, int>> edges;
    for (const auto& e : j.at("transitions")) edges.push_back({e.at(0).get<int>() - 1, e.at(1).get<int>() - 1});
    spec.topology = TransitionTopology::make(S, edges);
    for (const auto& h : j.at("hazards")) {
      check_keys(h, where + ".hazards[]", {"shape", "scale", "weight", "beta", "time_varying"});
      EdgeHazard e;
      e.shape = h.at("shape").get<double>();
      e.scale = h.at("scale").get<double>();
      if (h.contains("weight")) e.weight = h.at("weight").get<double>();
      e.beta = h.value("beta", std::vector<double>{});
      for (int ix : h.value("time_varying", std::vector<int>{})) e.time_varying.push_back(ix - 1);
      spec.edges.push_back(e);
    }
    for (const auto& c : j.value("covariates", json::array())) {
      check_keys(c, where + ".covariates[]", {"name", "kind", "p", "lo", "hi"});
      CovariateColumn col;
      col.name = c.value("name", "");
      const std::string kind = c.at("kind").get<std::string>();
      if (kind == "bernoulli") {
        col.kind = CovariateColumn::Kind::Bernoulli;
        col.a = c.at("p").get<double>();
      } else if (kind == "uniform") {
        col.kind = CovariateColumn::Kind::Uniform;
        col.a = c.at("lo").get<double>();
        col.b = c.at("hi").get<double>();
      } else {
        throw ValidationError(where + ": covariate kind must be bernoulli or uniform");
      }
      spec.covariates.push_back(col);
    }
    spec.t_max = j.at("t_max").get<double>();
    spec.censor_rate = j.value("censor_rate", 0.0);
    spec.saw_amplitude = j.value("saw_amplitude", 1.0);
    spec.saw_period = j.value("saw_period", 0.0);
  } catch (const json::exception& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return spec;
}

// ---- simulate ----------------------------------------------------------------

struct SimulateArgs {
  std::string preset, spec_path, out;
  int n = 0;  // 0: use the preset's size
  std::uint64_t seed = 0;
  bool seed_given = false;
  int truth_points = 50;
  double train_frac = 0.64, valid_frac = 0.16;
};

int run_simulate(const SimulateArgs& a) {
  TrueHazardSpec spec;
  int n = a.n;
  std::uint64_t seed = a.seed;
  if (!a.preset.empty()) {
    SimPreset p = sim_preset(a.preset);
    spec = p.spec;
    if (n == 0) n = p.n_subjects;
    if (!a.seed_given) seed = p.seed;
  } else if (!a.spec_path.empty()) {
    spec = spec_from_json(load_json(a.spec_path), a.spec_path);
    if (n == 0) n = 1000;
    if (!a.seed_given) seed = 1;
  } else {
    throw ValidationError("simulate: pass --preset or --spec");
  }

  Dataset ds = sample_paths(spec, n, seed);
  make_out_dir(a.out);
  write_dataset(a.out, ds);

  const auto parts = split_dataset(ds, a.train_frac, a.valid_frac, seed);
  SplitManifest manifest{subject_ids(parts[0]), subject_ids(parts[1]), subject_ids(parts[2])};
  write_splits_json(a.out + "/splits.json", manifest);

  CurveTable truth;
  truth.ids = subject_ids(ds);
  truth.times = uniform_grid(spec.t_max, a.truth_points);
  for (const auto& sub : ds.subjects)
    truth.mean.push_back(true_occupation(spec, covariate_vector(sub), truth.times).occupation);
  write_curve_table(a.out + "/ground_truth.csv", truth);

  int censored = 0;
  for (const auto& sub : ds.subjects) censored += sub.event_observed ? 0 : 1;
  const double censor_frac = static_cast<double>(censored) / n;

  json echo;
  echo["spec"] = spec_to_json(spec);
  echo["n"] = n;
  echo["seed"] = seed;
  echo["truth_points"] = a.truth_points;
  echo["train_frac"] = a.train_frac;
  echo["valid_frac"] = a.valid_frac;
  echo["realized_censoring"] = censor_frac;
  echo["split_sizes"] = {manifest.train.size(), manifest.valid.size(), manifest.test.size()};
  write_json_file(a.out + "/config_echo.json", echo);

  std::cout << "simulated " << n << " subjects (" << censored << " censored, fraction "
            << ioutil::fmt(censor_frac) << ") into " << a.out << "\n"
            << "splits: " << manifest.train.size() << " train / " << manifest.valid.size() << " valid / "
            << manifest.test.size() << " test\n";
  return 0;
}

// ---- fit ----------------------------------------------------------------------

struct DataArgs {
  std::string events, covariates, topology, splits;
};

Dataset load_bundle(const DataArgs& d) {
  if (d.events.empty() || d.topology.empty())
    throw ValidationError("events and topology paths are required (flags or config)");
  Dataset ds = read_dataset(d.events, d.covariates, d.topology);
  require_valid(ds);
  return ds;
}

// Train/valid selection: an explicit manifest wins, otherwise a seeded
// 64/16/20 split (the test fifth is left alone for later evaluation).
std::pair<Dataset, Dataset> train_valid_split(const Dataset& ds, const std::string& splits_path,
                                              std::uint64_t seed) {
  if (!splits_path.empty()) {
    SplitManifest m = read_splits_json(splits_path);
    return {take_split(ds, m.train), take_split(ds, m.valid)};
  }
  auto parts = split_dataset(ds, 0.64, 0.16, seed);
  return {std::move(parts[0]), std::move(parts[1])};
}

struct FitArgs {
  std::string config;
  DataArgs data;
  std::string out, resume;
  int L_e = 2, N_e = 800, L_Q = 3, N_Q = 1000, M = 20;
  double p_e = 0.0, mu = 1e-4, S = 1.0, l = 1e-4, w = 1e-7;
  int L_p = 2, N_p = 400, L_q = 2, N_q = 1000;
  double p_p = 0.0, beta = 1.0;
  int batch_size = 512, max_epochs = 200, patience = 10, threads = 1;
  double steps_per_unit = 64.0;
  std::uint64_t seed = 1;
  bool variational = false;
  std::map<std::string, CLI::Option*> opt;
};

void apply_fit_config(FitArgs& a) {
  if (a.config.empty()) return;
  json cfg = load_json(a.config);
  check_keys(cfg, a.config, {"data", "model", "train", "seed", "threads", "out"});
  auto o = [&](const char* k) -> const CLI::Option* {
    const auto it = a.opt.find(k);
    return it == a.opt.end() ? nullptr : it->second;
  };
  if (cfg.contains("data")) {
    const json& d = cfg["data"];
    check_keys(d, "data", {"events", "covariates", "topology", "splits"});
    fallback(d, "events", o("events"), a.data.events, "data");
    fallback(d, "covariates", o("covariates"), a.data.covariates, "data");
    fallback(d, "topology", o("topology"), a.data.topology, "data");
    fallback(d, "splits", o("splits"), a.data.splits, "data");
  }
  if (cfg.contains("model")) {
    const json& m = cfg["model"];
    if (a.variational)
      check_keys(m, "model", {"L_p", "N_p", "p_p", "L_q", "N_q", "L_Q", "N_Q", "M", "mu", "beta", "S", "l", "w"});
    else
      check_keys(m, "model", {"L_e", "N_e", "p_e", "L_Q", "N_Q", "M", "mu", "S", "l", "w"});
    fallback(m, "L_e", o("L_e"), a.L_e, "model");
    fallback(m, "N_e", o("N_e"), a.N_e, "model");
    fallback(m, "p_e", o("p_e"), a.p_e, "model");
    fallback(m, "L_p", o("L_p"), a.L_p, "model");
    fallback(m, "N_p", o("N_p"), a.N_p, "model");
    fallback(m, "p_p", o("p_p"), a.p_p, "model");
    fallback(m, "L_q", o("L_q"), a.L_q, "model");
    fallback(m, "N_q", o("N_q"), a.N_q, "model");
    fallback(m, "L_Q", o("L_Q"), a.L_Q, "model");
    fallback(m, "N_Q", o("N_Q"), a.N_Q, "model");
    fallback(m, "M", o("M"), a.M, "model");
    fallback(m, "mu", o("mu"), a.mu, "model");
    fallback(m, "beta", o("beta"), a.beta, "model");
    fallback(m, "S", o("S"), a.S, "model");
    fallback(m, "l", o("l"), a.l, "model");
    fallback(m, "w", o("w"), a.w, "model");
  }
  if (cfg.contains("train")) {
    const json& t = cfg["train"];
    check_keys(t, "train", {"batch_size", "max_epochs", "patience", "steps_per_unit"});
    fallback(t, "batch_size", o("batch_size"), a.batch_size, "train");
    fallback(t, "max_epochs", o("max_epochs"), a.max_epochs, "train");
    fallback(t, "patience", o("patience"), a.patience, "train");
    fallback(t, "steps_per_unit", o("steps_per_unit"), a.steps_per_unit, "train");
  }
  fallback(cfg, "seed", o("seed"), a.seed, a.config);
  fallback(cfg, "threads", o("threads"), a.threads, a.config);
  fallback(cfg, "out", o("out"), a.out, a.config);
}

json fit_config_echo(const FitArgs& a) {
  json model;
  if (a.variational) {
    model = {{"L_p", a.L_p}, {"N_p", a.N_p}, {"p_p", a.p_p}, {"L_q", a.L_q}, {"N_q", a.N_q},
             {"L_Q", a.L_Q}, {"N_Q", a.N_Q}, {"M", a.M},     {"mu", a.mu},   {"beta", a.beta},
             {"S", a.S},     {"l", a.l},     {"w", a.w}};
  } else {
    model = {{"L_e", a.L_e}, {"N_e", a.N_e}, {"p_e", a.p_e}, {"L_Q", a.L_Q}, {"N_Q", a.N_Q},
             {"M", a.M},     {"mu", a.mu},   {"S", a.S},     {"l", a.l},     {"w", a.w}};
  }
  json data{{"events", a.data.events}, {"topology", a.data.topology}};
  if (!a.data.covariates.empty()) data["covariates"] = a.data.covariates;
  if (!a.data.splits.empty()) data["splits"] = a.data.splits;
  return json{{"data", data},
              {"model", model},
              {"train",
               {{"batch_size", a.batch_size},
                {"max_epochs", a.max_epochs},
                {"patience", a.patience},
                {"steps_per_unit", a.steps_per_unit}}},
              {"seed", a.seed},
              {"threads", a.threads},
              {"out", a.out}};
}

TrainConfig base_train_config(const FitArgs& a) {
  TrainConfig cfg;
  cfg.enc_layers = a.L_e;
  cfg.enc_width = a.N_e;
  cfg.enc_dropout = a.p_e;
  cfg.dyn_layers = a.L_Q;
  cfg.dyn_width = a.N_Q;
  cfg.memory_dim = a.M;
  cfg.mu = a.mu;
  cfg.time_scale = a.S;
  cfg.lr = a.l;
  cfg.weight_decay = a.w;
  cfg.batch_size = a.batch_size;
  cfg.max_epochs = a.max_epochs;
  cfg.patience = a.patience;
  cfg.rk4_steps_per_unit = a.steps_per_unit;
  cfg.seed = a.seed;
  cfg.threads = a.threads;
  return cfg;
}

// Appends new history rows after any existing ones so a resumed run keeps one
// monotone epoch counter.
void write_history_resumed(const std::string& path, bool resumed, std::vector<EpochRow> rows) {
  std::vector<EpochRow> all;
  if (resumed && fs::exists(path)) all = read_history_csv(path);
  const int offset = all.empty() ? 0 : all.back().epoch + 1;
  for (auto& r : rows) {
    r.epoch += offset;
    all.push_back(r);
  }
  write_history_csv(path, all);
}

int run_fit(FitArgs& a) {
  apply_fit_config(a);
  if (a.out.empty()) throw ValidationError("fit: --out is required (flag, env, or config)");
  Dataset ds = load_bundle(a.data);
  auto [train, valid] = train_valid_split(ds, a.data.splits, a.seed);
  std::cout << "training on " << train.n_subjects() << " subjects, validating on " << valid.n_subjects()
            << "\n";

  make_out_dir(a.out);
  FitResult res;
  if (a.variational) {
    VariationalTrainConfig cfg;
    static_cast<TrainConfig&>(cfg) = base_train_config(a);
    cfg.beta = a.beta;
    VariationalModel model;
    if (!a.resume.empty()) {
      Checkpoint ck = load_checkpoint(a.resume);
      if (ck.kind != 1) throw ValidationError("resume: checkpoint is not a latent model");
      model = std::move(ck.latent);
    } else {
      model = VariationalModel::create(ds.topology, ds.n_covariates(), a.M, a.L_p, a.N_p, a.L_q, a.N_q, a.p_p,
                                       a.L_Q, a.N_Q, a.S, a.beta, a.seed);
    }
    res = fit_variational(model, train, valid, cfg);
    save_checkpoint(a.out + "/checkpoint.bin", model);
  } else {
    TrainConfig cfg = base_train_config(a);
    KfeModel model;
    if (!a.resume.empty()) {
      Checkpoint ck = load_checkpoint(a.resume);
      if (ck.kind != 0) throw ValidationError("resume: checkpoint is not a point model");
      model = std::move(ck.point);
    } else {
      model = KfeModel::create(ds.topology, ds.n_covariates(), a.M, a.L_e, a.N_e, a.p_e, a.L_Q, a.N_Q, a.S,
                               a.seed);
    }
    res = fit(model, train, valid, cfg);
    save_checkpoint(a.out + "/checkpoint.bin", model);
  }
  write_history_resumed(a.out + "/history.csv", !a.resume.empty(), res.history);
  write_json_file(a.out + "/config_echo.json", fit_config_echo(a));
  std::cout << "best epoch " << res.best_epoch << ", validation objective " << ioutil::fmt(res.best_valid_nll)
            << "; wrote " << a.out << "/checkpoint.bin\n";
  return 0;
}

// ---- predict -------------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  DataArgs data;
  std::string split, out;
  int grid_points = 50;
  double grid_max = 0.0;  // 0: maximum observed final time
  bool rates = false;
  int draws = 200;
  double level = 0.95;
  std::uint64_t seed = 1;
  int threads = 1;
};

Dataset select_split(const Dataset& ds, const std::string& splits_path, const std::string& which) {
  if (which.empty()) return ds;
  if (splits_path.empty()) throw ValidationError("--split needs --splits");
  SplitManifest m = read_splits_json(splits_path);
  if (which == "train") return take_split(ds, m.train);
  if (which == "valid") return take_split(ds, m.valid);
  if (which == "test") return take_split(ds, m.test);
  throw ValidationError("--split must be train, valid, or test");
}

int run_predict(const PredictArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  Dataset all = load_bundle(a.data);
  if (!(all.topology.n_states == ck.core().n_states() && all.topology.rate_index == ck.core().topo.rate_index))
    throw ValidationError("topology mismatch between checkpoint and data");
  if (all.n_covariates() != ck.core().n_cov)
    throw ValidationError("covariate count mismatch between checkpoint and data");
  Dataset ds = select_split(all, a.data.splits, a.split);
  if (ds.subjects.empty()) throw ValidationError("no subjects selected");

  double tmax = a.grid_max;
  if (tmax <= 0.0)
    for (const auto& s : ds.subjects) tmax = std::max(tmax, s.final_time());
  const std::vector<double> grid = uniform_grid(tmax, a.grid_points);

  const int n = ds.n_subjects();
  CurveTable table;
  table.ids = subject_ids(ds);
  table.times = grid;
  table.mean.resize(n);
  make_out_dir(a.out);

  if (ck.kind == 0) {
    const KfeModel& model = ck.point;
    std::vector<MatrixXd> rates(n);
    parallel_for(n, a.threads, [&](int i) {
      const auto& sub = ds.subjects[i];
      table.mean[i] = model.occupation_curve(covariate_vector(sub), sub.observations.front().state, grid);
      if (a.rates) {
        const auto Qs = model.hazard_rates(covariate_vector(sub), grid);
        MatrixXd r(grid.size(), model.q_count());
        for (std::size_t k = 0; k < grid.size(); ++k)
          for (int e = 0; e < model.q_count(); ++e) {
            const auto [fi, fj] = model.topo.rate_index[e];
            r(k, e) = Qs[k](fi, fj);
          }
        rates[i] = std::move(r);
      }
    });
    if (a.rates) write_rates_csv(a.out + "/rates.csv", model.topo, table.ids, grid, rates);
  } else {
    const VariationalModel& model = ck.latent;
    table.lower.resize(n);
    table.upper.resize(n);
    parallel_for(n, a.threads, [&](int i) {
      const auto& sub = ds.subjects[i];
      IntervalPrediction p = predict_interval(model, covariate_vector(sub), sub.observations.front().state,
                                              grid, a.draws, a.level, a.seed + i);
      table.mean[i] = std::move(p.mean);
      table.lower[i] = std::move(p.lower);
      table.upper[i] = std::move(p.upper);
    });
    if (a.rates) std::cerr << "note: rate output is only available for point-model checkpoints\n";
  }
  write_curve_table(a.out + "/predictions.csv", table);
  std::cout << "wrote " << a.out << "/predictions.csv (" << n << " subjects, " << grid.size()
            << " times)\n";
  return 0;
}

// ---- evaluate --------------------------------------------------------------------

struct EvaluateArgs {
  std::string predictions;
  DataArgs data;
  std::string split, truth, out;
  int grid_points = 100;
};

int run_evaluate(const EvaluateArgs& a) {
  CurveTable pred = read_curve_table(a.predictions);
  Dataset all = load_bundle(a.data);
  Dataset ds = select_split(all, a.data.splits, a.split);

  std::unordered_map<std::string, const SubjectRecord*> by_id;
  for (const auto& s : ds.subjects) by_id[s.id] = &s;
  Dataset sel;
  sel.topology = ds.topology;
  sel.covariate_names = ds.covariate_names;
  for (const auto& id : pred.ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("predictions name subject " + id + " absent from the data");
    sel.subjects.push_back(*it->second);
  }
  const int n = sel.n_subjects();
  const int S = sel.topology.n_states;
  if (pred.n_states() != S) throw ValidationError("prediction columns do not match the topology");

  std::vector<double> times(n), event_times;
  std::vector<int> events(n);
  for (int i = 0; i < n; ++i) {
    times[i] = sel.subjects[i].final_time();
    events[i] = sel.subjects[i].event_observed ? 1 : 0;
    if (events[i]) event_times.push_back(times[i]);
  }
  if (event_times.empty()) throw ValidationError("evaluate: no observed events in the selected subjects");
  StepFunction G = censoring_km(times, events);
  EvalGrid grid = EvalGrid::quantiles(event_times, a.grid_points);

  std::vector<CurveSet> state_curves(S);
  for (int j = 0; j < S; ++j) {
    state_curves[j].times = pred.times;
    state_curves[j].values.resize(n, pred.times.size());
    for (int i = 0; i < n; ++i) state_curves[j].values.row(i) = pred.mean[i].col(j).transpose();
  }

  make_out_dir(a.out);
  json report;
  report["n_subjects"] = n;
  report["states"] = S;

  if (S == 2) {
    const CurveSet& surv = state_curves[0];
    report["c"] = concordance_td(surv, times, events);
    ScoreCurve bs = brier_ipcw(surv, times, events, G, grid.times);
    ScoreCurve ll = ibll(surv, times, events, G, grid.times);
    report["ibs"] = bs.integrated;
    report["ibll"] = ll.integrated;
    report["capped_weights"] = bs.capped_weights;
  }

  const auto ms = multistate_brier(state_curves, sel, G, grid.times);
  {
    json per_state = json::array();
    for (const auto& sc : ms) per_state.push_back(sc.integrated);
    report["multistate_brier"] = per_state;
  }

  // Population calibration: covariate-averaged prediction vs the
  // product-integral estimate on the same subjects.
  OccupationEstimate aj = aalen_johansen(sel, pred.times);
  MatrixXd mean_pred = MatrixXd::Zero(pred.times.size(), S);
  for (int i = 0; i < n; ++i) mean_pred += pred.mean[i];
  mean_pred /= n;
  {
    auto f = ioutil::open_out(a.out + "/aj_comparison.csv");
    f << "time";
    for (int j = 1; j <= S; ++j) f << ",aj_" << j;
    for (int j = 1; j <= S; ++j) f << ",pred_" << j;
    f << '\n';
    for (std::size_t k = 0; k < pred.times.size(); ++k) {
      f << ioutil::fmt(pred.times[k]);
      for (int j = 0; j < S; ++j) f << ',' << ioutil::fmt(aj.occupation(k, j));
      for (int j = 0; j < S; ++j) f << ',' << ioutil::fmt(mean_pred(k, j));
      f << '\n';
    }
  }
  {
    json sup = json::array();
    for (int j = 0; j < S; ++j)
      sup.push_back((aj.occupation.col(j) - mean_pred.col(j)).cwiseAbs().maxCoeff());
    report["aj_sup_deviation"] = sup;
  }

  if (!a.truth.empty()) {
    CurveTable truth = read_curve_table(a.truth);
    std::unordered_map<std::string, std::size_t> truth_ix;
    for (std::size_t i = 0; i < truth.ids.size(); ++i) truth_ix[truth.ids[i]] = i;
    std::vector<CurveSet> truth_curves(S);
    for (int j = 0; j < S; ++j) {
      truth_curves[j].times = truth.times;
      truth_curves[j].values.resize(n, truth.times.size());
    }
    std::vector<MatrixXd> truth_on_pred_grid(n);
    for (int i = 0; i < n; ++i) {
      const auto it = truth_ix.find(pred.ids[i]);
      if (it == truth_ix.end()) throw ValidationError("ground truth lacks subject " + pred.ids[i]);
      for (int j = 0; j < S; ++j)
        truth_curves[j].values.row(i) = truth.mean[it->second].col(j).transpose();
    }
    TruthBrier tb = brier_vs_truth(state_curves, truth_curves, grid.times);
    report["brier_vs_truth_time_avg"] = std::vector<double>(
        tb.time_averaged.data(), tb.time_averaged.data() + tb.time_averaged.size());

    if (pred.has_bands()) {
      for (int i = 0; i < n; ++i) {
        MatrixXd t(pred.times.size(), S);
        for (int j = 0; j < S; ++j) {
          CurveSet one;
          one.times = truth.times;
          one.values = truth_curves[j].values.row(i);
          for (std::size_t k = 0; k < pred.times.size(); ++k) t(k, j) = one.eval(0, pred.times[k]);
        }
        truth_on_pred_grid[i] = std::move(t);
      }
      report["coverage"] = interval_coverage(pred.lower, pred.upper, truth_on_pred_grid);
    }
  }

  {
    auto f = ioutil::open_out(a.out + "/brier_curves.csv");
    f << "time";
    for (int j = 1; j <= S; ++j) f << ",bs_" << j;
    f << '\n';
    for (std::size_t k = 0; k < grid.times.size(); ++k) {
      f << ioutil::fmt(grid.times[k]);
      for (int j = 0; j < S; ++j) f << ',' << ioutil::fmt(ms[j].values[k]);
      f << '\n';
    }
  }
  write_json_file(a.out + "/metrics.json", report);
  std::cout << report.dump(1) << "\n";
  return 0;
}

// ---- latent ---------------------------------------------------------------------

struct LatentArgs {
  std::string checkpoint;
  DataArgs data;
  std::string out;
  int k = 2;
  std::uint64_t seed = 0;
};

int run_latent(const LatentArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  if (ck.kind != 1) throw ValidationError("latent export requires a variational checkpoint");
  Dataset ds = load_bundle(a.data);
  if (ds.n_covariates() != ck.core().n_cov)
    throw ValidationError("covariate count mismatch between checkpoint and data");
  LatentExport ex = export_latent(ck.latent, ds, a.k, a.seed);
  make_out_dir(a.out);
  {
    auto f = ioutil::open_out(a.out + "/latent.csv");
    f << "subject_id";
    for (int m = 1; m <= ex.means.cols(); ++m) f << ",z_" << m;
    f << ",cluster\n";
    for (int i = 0; i < ds.n_subjects(); ++i) {
      f << ds.subjects[i].id;
      for (Eigen::Index m = 0; m < ex.means.cols(); ++m) f << ',' << ioutil::fmt(ex.means(i, m));
      f << ',' << ex.labels[i] << '\n';
    }
  }
  {
    auto f = ioutil::open_out(a.out + "/centroids.csv");
    f << "cluster";
    for (int m = 1; m <= ex.centroids.cols(); ++m) f << ",z_" << m;
    f << '\n';
    for (Eigen::Index c = 0; c < ex.centroids.rows(); ++c) {
      f << c;
      for (Eigen::Index m = 0; m < ex.centroids.cols(); ++m) f << ',' << ioutil::fmt(ex.centroids(c, m));
      f << '\n';
    }
  }
  write_json_file(a.out + "/latent_summary.json",
                  json{{"k", a.k}, {"inertia", ex.inertia}, {"n_subjects", ds.n_subjects()}});
  std::cout << "wrote latent means for " << ds.n_subjects() << " subjects, k=" << a.k
            << ", inertia " << ioutil::fmt(ex.inertia) << "\n";
  return 0;
}

// ---- convert --------------------------------------------------------------------

struct ConvertArgs {
  std::string input, out;
  std::string duration_col = "duration", event_col = "event", id_col;
};

int run_convert(const ConvertArgs& a) {
  Dataset ds = read_flat_survival_csv(a.input, a.duration_col, a.event_col, a.id_col);
  require_valid(ds);
  make_out_dir(a.out);
  write_dataset(a.out, ds);
  std::cout << "converted " << ds.n_subjects() << " subjects with " << ds.n_covariates()
            << " covariates into " << a.out << "\n";
  return 0;
}

void add_data_options(CLI::App* cmd, DataArgs& d, std::map<std::string, CLI::Option*>* opt = nullptr) {
  auto* e = cmd->add_option("--events", d.events, "events CSV path");
  auto* c = cmd->add_option("--covariates", d.covariates, "covariates CSV path");
  auto* t = cmd->add_option("--topology", d.topology, "topology JSON path");
  auto* s = cmd->add_option("--splits", d.splits, "split manifest JSON path");
  if (opt) {
    (*opt)["events"] = e;
    (*opt)["covariates"] = c;
    (*opt)["topology"] = t;
    (*opt)["splits"] = s;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-state survival models with neural Kolmogorov dynamics"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* csim = app.add_subcommand("simulate", "draw a synthetic dataset from a parametric hazard model");
  csim->add_option("--preset", sim.preset,
                   "one of: two-state-smoke, illness-death-5000, competing-risks-5000, survival-3cov");
  csim->add_option("--spec", sim.spec_path, "hazard spec JSON path (alternative to --preset)");
  csim->add_option("--n", sim.n, "subject count (default: preset size)");
  auto* sim_seed = csim->add_option("--seed", sim.seed, "RNG seed")->envname("KOLMO_SEED");
  csim->add_option("--out", sim.out, "output directory")->required()->envname("KOLMO_OUT");
  csim->add_option("--truth-points", sim.truth_points, "ground-truth grid resolution");
  csim->add_option("--train-frac", sim.train_frac, "training fraction");
  csim->add_option("--valid-frac", sim.valid_frac, "validation fraction");

  FitArgs fit_a, var_a;
  var_a.variational = true;
  auto* cfit = app.add_subcommand("fit", "train the point model");
  auto* cvar = app.add_subcommand("fit-variational", "train the latent variational model");
  for (auto [cmd, a] : {std::pair{cfit, &fit_a}, {cvar, &var_a}}) {
    cmd->add_option("--config", a->config, "run config JSON");
    add_data_options(cmd, a->data, &a->opt);
    a->opt["out"] = cmd->add_option("--out", a->out, "output directory")->envname("KOLMO_OUT");
    cmd->add_option("--resume", a->resume, "checkpoint to continue training from");
    if (a->variational) {
      a->opt["L_p"] = cmd->add_option("--L_p", a->L_p, "prior net layers");
      a->opt["N_p"] = cmd->add_option("--N_p", a->N_p, "prior net width");
      a->opt["p_p"] = cmd->add_option("--p_p", a->p_p, "prior/posterior dropout");
      a->opt["L_q"] = cmd->add_option("--L_q", a->L_q, "posterior net layers");
      a->opt["N_q"] = cmd->add_option("--N_q", a->N_q, "posterior net width");
      a->opt["beta"] = cmd->add_option("--beta", a->beta, "KL weight");
    } else {
      a->opt["L_e"] = cmd->add_option("--L_e", a->L_e, "encoder layers");
      a->opt["N_e"] = cmd->add_option("--N_e", a->N_e, "encoder width");
      a->opt["p_e"] = cmd->add_option("--p_e", a->p_e, "encoder dropout");
    }
    a->opt["L_Q"] = cmd->add_option("--L_Q", a->L_Q, "dynamics net layers");
    a->opt["N_Q"] = cmd->add_option("--N_Q", a->N_Q, "dynamics net width");
    a->opt["M"] = cmd->add_option("--M", a->M, a->variational ? "latent dimension" : "memory dimension");
    a->opt["mu"] = cmd->add_option("--mu", a->mu, "memory regularizer weight");
    a->opt["S"] = cmd->add_option("--S", a->S, "scaled time span");
    a->opt["l"] = cmd->add_option("--l", a->l, "learning rate");
    a->opt["w"] = cmd->add_option("--w", a->w, "weight decay");
    a->opt["batch_size"] = cmd->add_option("--batch-size", a->batch_size, "minibatch size");
    a->opt["max_epochs"] = cmd->add_option("--max-epochs", a->max_epochs, "epoch budget");
    a->opt["patience"] = cmd->add_option("--patience", a->patience, "early stopping patience");
    a->opt["steps_per_unit"] =
        cmd->add_option("--steps-per-unit", a->steps_per_unit, "fixed-grid steps per scaled time unit");
    a->opt["seed"] = cmd->add_option("--seed", a->seed, "RNG seed")->envname("KOLMO_SEED");
    a->opt["threads"] = cmd->add_option("--threads", a->threads, "worker threads")->envname("KOLMO_THREADS");
  }

  PredictArgs pre;
  auto* cpre = app.add_subcommand("predict", "occupation curves from a checkpoint");
  cpre->add_option("--checkpoint", pre.checkpoint, "model checkpoint")->required();
  add_data_options(cpre, pre.data);
  cpre->add_option("--split", pre.split, "restrict to a manifest split: train, valid, or test");
  cpre->add_option("--out", pre.out, "output directory")->required()->envname("KOLMO_OUT");
  cpre->add_option("--grid-points", pre.grid_points, "number of grid intervals");
  cpre->add_option("--grid-max", pre.grid_max, "largest grid time (default: last observed time)");
  cpre->add_flag("--rates", pre.rates, "also write hazard-rate trajectories (point models)");
  cpre->add_option("--draws", pre.draws, "prior draws per subject (latent models)");
  cpre->add_option("--level", pre.level, "credible band level (latent models)");
  cpre->add_option("--seed", pre.seed, "RNG seed for band draws")->envname("KOLMO_SEED");
  cpre->add_option("--threads", pre.threads, "worker threads")->envname("KOLMO_THREADS");

  EvaluateArgs eva;
  auto* ceva = app.add_subcommand("evaluate", "metrics report for emitted predictions");
  ceva->add_option("--predictions", eva.predictions, "predictions CSV from `predict`")->required();
  add_data_options(ceva, eva.data);
  ceva->add_option("--split", eva.split, "restrict to a manifest split");
  ceva->add_option("--truth", eva.truth, "ground-truth curve table (simulated data)");
  ceva->add_option("--out", eva.out, "output directory")->required()->envname("KOLMO_OUT");
  ceva->add_option("--grid-points", eva.grid_points, "evaluation grid size");

  LatentArgs lat;
  auto* clat = app.add_subcommand("latent", "export latent means and k-means labels");
  clat->add_option("--checkpoint", lat.checkpoint, "variational checkpoint")->required();
  add_data_options(clat, lat.data);
  clat->add_option("--out", lat.out, "output directory")->required()->envname("KOLMO_OUT");
  clat->add_option("--k", lat.k, "cluster count");
  clat->add_option("--seed", lat.seed, "k-means seed")->envname("KOLMO_SEED");

  ConvertArgs con;
  auto* ccon = app.add_subcommand("convert", "flat duration/event CSV into the bundle format");
  ccon->add_option("--input", con.input, "source CSV")->required();
  ccon->add_option("--out", con.out, "output directory")->required()->envname("KOLMO_OUT");
  ccon->add_option("--duration-col", con.duration_col, "duration column name");
  ccon->add_option("--event-col", con.event_col, "event flag column name");
  ccon->add_option("--id-col", con.id_col, "subject id column name (default: row number)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (csim->parsed()) {
      sim.seed_given = sim_seed->count() > 0;
      return run_simulate(sim);
    }
    if (cfit->parsed()) return run_fit(fit_a);
    if (cvar->parsed()) return run_fit(var_a);
    if (cpre->parsed()) return run_predict(pre);
    if (ceva->parsed()) return run_evaluate(eva);
    if (clat->parsed()) return run_latent(lat);
    if (ccon->parsed()) return run_convert(con);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const IntegrationFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
