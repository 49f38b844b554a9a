#pragma once

// On-disk formats: event and covariate CSVs, topology matrices, split
// manifests, probability-curve tables, training history, and binary model
// checkpoints.
//
// Text files are UTF-8 with LF line ends and '.' decimals. States are
// 1-indexed in files and 0-indexed in memory. Doubles are written in the
// shortest form that round-trips, so rewriting a file never perturbs values.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kolmo/model.hpp"
#include "kolmo/statespace.hpp"
#include "kolmo/variational.hpp"

namespace kolmo {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian doubles");

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace ioutil {

inline std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const char* where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError(std::string(where) + ": bad number '" + s + "'");
  return v;
}

inline long parse_long(const std::string& s, const char* where) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError(std::string(where) + ": bad integer '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return f;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  return f;
}

inline ObsKind kind_from_string(const std::string& s, const char* where) {
  if (s == "start") return ObsKind::Start;
  if (s == "transition") return ObsKind::Exact;
  if (s == "interval_transition") return ObsKind::Interval;
  if (s == "censor") return ObsKind::Censor;
  throw IoError(std::string(where) + ": unknown observation kind '" + s + "'");
}

}  // namespace ioutil

// ---- events ----------------------------------------------------------------

inline void write_events_csv(const std::string& path, const Dataset& ds) {
  auto f = ioutil::open_out(path);
  f << "subject_id,time,state,kind\n";
  for (const auto& sub : ds.subjects)
    for (const auto& o : sub.observations)
      f << sub.id << ',' << ioutil::fmt(o.time) << ',' << o.state + 1 << ',' << to_string(o.kind) << '\n';
  if (!f) throw IoError("write failed: " + path);
}

// Rows may interleave subjects; per subject they must be in file order.
// The event flag is implied by the kind of the final row.
inline std::vector<SubjectRecord> read_events_csv(const std::string& path) {
  auto f = ioutil::open_in(path);
  std::string line;
  if (!std::getline(f, line) || ioutil::split_csv(line) != std::vector<std::string>{"subject_id", "time", "state", "kind"})
    throw IoError(path + ": expected header subject_id,time,state,kind");
  std::vector<SubjectRecord> subjects;
  std::unordered_map<std::string, std::size_t> index;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cols = ioutil::split_csv(line);
    if (cols.size() != 4) throw IoError(path + ": expected 4 columns, got " + std::to_string(cols.size()));
    const auto [it, fresh] = index.try_emplace(cols[0], subjects.size());
    if (fresh) {
      subjects.emplace_back();
      subjects.back().id = cols[0];
    }
    Observation o;
    o.time = ioutil::parse_double(cols[1], "events");
    o.state = static_cast<int>(ioutil::parse_long(cols[2], "events")) - 1;
    o.kind = ioutil::kind_from_string(cols[3], "events");
    subjects[it->second].observations.push_back(o);
  }
  for (auto& s : subjects) {
    if (s.observations.empty()) continue;
    s.entry_time = s.observations.front().time;
    const ObsKind last = s.observations.back().kind;
    s.event_observed = last == ObsKind::Exact || last == ObsKind::Interval;
  }
  return subjects;
}

// ---- covariates ------------------------------------------------------------

inline void write_covariates_csv(const std::string& path, const Dataset& ds) {
  auto f = ioutil::open_out(path);
  f << "subject_id";
  for (const auto& n : ds.covariate_names) f << ',' << n;
  f << '\n';
  for (const auto& sub : ds.subjects) {
    f << sub.id;
    for (double v : sub.covariates) f << ',' << ioutil::fmt(v);
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

struct CovariateTable {
  std::vector<std::string> names;
  std::unordered_map<std::string, std::vector<double>> rows;
};

inline CovariateTable read_covariates_csv(const std::string& path) {
  auto f = ioutil::open_in(path);
  std::string line;
  if (!std::getline(f, line)) throw IoError(path + ": empty covariates file");
  auto header = ioutil::split_csv(line);
  if (header.empty() || header[0] != "subject_id") throw IoError(path + ": first column must be subject_id");
  CovariateTable t;
  t.names.assign(header.begin() + 1, header.end());
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cols = ioutil::split_csv(line);
    if (cols.size() != header.size()) throw IoError(path + ": ragged row for subject " + cols[0]);
    std::vector<double> v;
    for (std::size_t k = 1; k < cols.size(); ++k) v.push_back(ioutil::parse_double(cols[k], "covariates"));
    if (!t.rows.emplace(cols[0], std::move(v)).second) throw IoError(path + ": duplicate subject " + cols[0]);
  }
  return t;
}

// ---- topology --------------------------------------------------------------

// S x S matrix with 1 for an allowed transition, 0 for a forbidden one, and
// null on the diagonal.
inline void write_topology_json(const std::string& path, const TransitionTopology& topo) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < topo.n_states; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < topo.n_states; ++j) {
      if (i == j)
        row.push_back(nullptr);
      else
        row.push_back(topo.is_allowed(i, j) ? 1 : 0);
    }
    rows.push_back(row);
  }
  auto f = ioutil::open_out(path);
  f << rows.dump(1) << '\n';
}

inline TransitionTopology read_topology_json(const std::string& path) {
  auto f = ioutil::open_in(path);
  nlohmann::json rows;
  try {
    f >> rows;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  if (!rows.is_array() || rows.empty()) throw IoError(path + ": topology must be a square matrix");
  const int S = static_cast<int>(rows.size());
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < S; ++i) {
    if (!rows[i].is_array() || static_cast<int>(rows[i].size()) != S)
      throw IoError(path + ": topology must be a square matrix");
    for (int j = 0; j < S; ++j) {
      const auto& cell = rows[i][j];
      if (i == j) {
        if (!cell.is_null()) throw IoError(path + ": diagonal entries must be null");
      } else if (cell.is_number_integer() && cell.get<int>() == 1) {
        edges.push_back({i, j});
      } else if (!(cell.is_number_integer() && cell.get<int>() == 0)) {
        throw IoError(path + ": off-diagonal entries must be 0 or 1");
      }
    }
  }
  return TransitionTopology::make(S, edges);
}

// ---- dataset bundles -------------------------------------------------------

inline Dataset read_dataset(const std::string& events_path, const std::string& covariates_path,
                            const std::string& topology_path) {
  Dataset ds;
  ds.topology = read_topology_json(topology_path);
  ds.subjects = read_events_csv(events_path);
  if (!covariates_path.empty()) {
    CovariateTable t = read_covariates_csv(covariates_path);
    ds.covariate_names = t.names;
    for (auto& sub : ds.subjects) {
      const auto it = t.rows.find(sub.id);
      if (it == t.rows.end()) throw IoError(covariates_path + ": no covariates for subject " + sub.id);
      sub.covariates = it->second;
    }
  }
  return ds;
}

inline void write_dataset(const std::string& dir, const Dataset& ds) {
  write_events_csv(dir + "/events.csv", ds);
  write_covariates_csv(dir + "/covariates.csv", ds);
  write_topology_json(dir + "/topology.json", ds.topology);
}

// Flat survival CSV: one row per subject, feature columns plus a duration and
// a 0/1 event flag. Ingested as a two-state alive -> dead dataset. Column
// order is free; every column that is not duration, event, or id is a
// feature. An empty id_col numbers subjects by row.
inline Dataset read_flat_survival_csv(const std::string& path, const std::string& duration_col = "duration",
                                      const std::string& event_col = "event",
                                      const std::string& id_col = "") {
  auto f = ioutil::open_in(path);
  std::string line;
  if (!std::getline(f, line)) throw IoError(path + ": empty file");
  const auto header = ioutil::split_csv(line);
  int dur_ix = -1, ev_ix = -1, id_ix = -1;
  std::vector<int> feature_ix;
  std::vector<std::string> feature_names;
  for (int k = 0; k < static_cast<int>(header.size()); ++k) {
    if (header[k] == duration_col)
      dur_ix = k;
    else if (header[k] == event_col)
      ev_ix = k;
    else if (!id_col.empty() && header[k] == id_col)
      id_ix = k;
    else {
      feature_ix.push_back(k);
      feature_names.push_back(header[k]);
    }
  }
  if (dur_ix < 0) throw IoError(path + ": duration column '" + duration_col + "' not found");
  if (ev_ix < 0) throw IoError(path + ": event column '" + event_col + "' not found");

  Dataset ds;
  ds.topology = TransitionTopology::make(2, {{0, 1}});
  ds.covariate_names = feature_names;
  long row_no = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cols = ioutil::split_csv(line);
    if (cols.size() != header.size()) throw IoError(path + ": ragged row " + std::to_string(row_no));
    SubjectRecord s;
    s.id = id_ix >= 0 ? cols[id_ix] : std::to_string(row_no);
    const double t = ioutil::parse_double(cols[dur_ix], "duration");
    const long ev = ioutil::parse_long(cols[ev_ix], "event");
    if (t < 0.0) throw std::invalid_argument(path + ": negative duration for subject " + s.id);
    if (ev != 0 && ev != 1)
      throw std::invalid_argument(path + ": event flag must be 0 or 1 for subject " + s.id);
    for (int k : feature_ix) s.covariates.push_back(ioutil::parse_double(cols[k], "feature"));
    s.observations = {{0.0, 0, ObsKind::Start}, {t, ev ? 1 : 0, ev ? ObsKind::Exact : ObsKind::Censor}};
    s.event_observed = ev == 1;
    ds.subjects.push_back(std::move(s));
    ++row_no;
  }
  return ds;
}

// ---- split manifest --------------------------------------------------------

struct SplitManifest {
  std::vector<std::string> train, valid, test;
};

inline void write_splits_json(const std::string& path, const SplitManifest& m) {
  nlohmann::json j{{"train", m.train}, {"valid", m.valid}, {"test", m.test}};
  auto f = ioutil::open_out(path);
  f << j.dump(1) << '\n';
}

inline SplitManifest read_splits_json(const std::string& path) {
  auto f = ioutil::open_in(path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  SplitManifest m;
  for (const auto& [key, dst] : {std::pair{"train", &m.train}, {"valid", &m.valid}, {"test", &m.test}}) {
    if (!j.contains(key)) throw IoError(path + ": missing key '" + key + "'");
    *dst = j[key].get<std::vector<std::string>>();
  }
  return m;
}

// Subset of a dataset in manifest order.
inline Dataset take_split(const Dataset& ds, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, const SubjectRecord*> by_id;
  for (const auto& s : ds.subjects) by_id[s.id] = &s;
  Dataset out;
  out.topology = ds.topology;
  out.covariate_names = ds.covariate_names;
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw IoError("split manifest names unknown subject " + id);
    out.subjects.push_back(*it->second);
  }
  return out;
}

// ---- probability curve tables ----------------------------------------------

// Per-subject state-probability curves on one shared grid, optionally with
// lower/upper band columns. Used for ground truth, point predictions, and
// credible-band predictions alike.
struct CurveTable {
  std::vector<std::string> ids;
  std::vector<double> times;
  std::vector<MatrixXd> mean;   // per subject: times x states
  std::vector<MatrixXd> lower;  // empty unless bands are present
  std::vector<MatrixXd> upper;

  bool has_bands() const { return !lower.empty(); }
  int n_states() const { return mean.empty() ? 0 : static_cast<int>(mean[0].cols()); }
};

inline void write_curve_table(const std::string& path, const CurveTable& t) {
  auto f = ioutil::open_out(path);
  const int S = t.n_states();
  f << "subject_id,time";
  for (int j = 1; j <= S; ++j) f << ",p_" << j;
  if (t.has_bands()) {
    for (int j = 1; j <= S; ++j) f << ",lo_" << j;
    for (int j = 1; j <= S; ++j) f << ",hi_" << j;
  }
  f << '\n';
  for (std::size_t i = 0; i < t.ids.size(); ++i)
    for (std::size_t k = 0; k < t.times.size(); ++k) {
      f << t.ids[i] << ',' << ioutil::fmt(t.times[k]);
      for (int j = 0; j < S; ++j) f << ',' << ioutil::fmt(t.mean[i](k, j));
      if (t.has_bands()) {
        for (int j = 0; j < S; ++j) f << ',' << ioutil::fmt(t.lower[i](k, j));
        for (int j = 0; j < S; ++j) f << ',' << ioutil::fmt(t.upper[i](k, j));
      }
      f << '\n';
    }
  if (!f) throw IoError("write failed: " + path);
}

inline CurveTable read_curve_table(const std::string& path) {
  auto f = ioutil::open_in(path);
  std::string line;
  if (!std::getline(f, line)) throw IoError(path + ": empty curve table");
  const auto header = ioutil::split_csv(line);
  if (header.size() < 3 || header[0] != "subject_id" || header[1] != "time")
    throw IoError(path + ": expected header subject_id,time,p_1,...");
  int S = 0;
  while (2 + S < static_cast<int>(header.size()) && header[2 + S] == "p_" + std::to_string(S + 1)) ++S;
  if (S == 0) throw IoError(path + ": no probability columns");
  const bool bands = header.size() == static_cast<std::size_t>(2 + 3 * S);
  if (!bands && header.size() != static_cast<std::size_t>(2 + S))
    throw IoError(path + ": unexpected column count");

  CurveTable t;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<double>> sub_times;
  std::vector<std::vector<std::vector<double>>> rows;  // subject -> row -> columns
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cols = ioutil::split_csv(line);
    if (cols.size() != header.size()) throw IoError(path + ": ragged row");
    const auto [it, fresh] = index.try_emplace(cols[0], t.ids.size());
    if (fresh) {
      t.ids.push_back(cols[0]);
      sub_times.emplace_back();
      rows.emplace_back();
    }
    sub_times[it->second].push_back(ioutil::parse_double(cols[1], "curves"));
    std::vector<double> vals;
    for (std::size_t k = 2; k < cols.size(); ++k) vals.push_back(ioutil::parse_double(cols[k], "curves"));
    rows[it->second].push_back(std::move(vals));
  }
  if (t.ids.empty()) throw IoError(path + ": no rows");
  t.times = sub_times[0];
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    if (sub_times[i] != t.times) throw IoError(path + ": subjects disagree on the time grid");
    MatrixXd m(t.times.size(), S), lo(t.times.size(), S), hi(t.times.size(), S);
    for (std::size_t k = 0; k < t.times.size(); ++k)
      for (int j = 0; j < S; ++j) {
        m(k, j) = rows[i][k][j];
        if (bands) {
          lo(k, j) = rows[i][k][S + j];
          hi(k, j) = rows[i][k][2 * S + j];
        }
      }
    t.mean.push_back(std::move(m));
    if (bands) {
      t.lower.push_back(std::move(lo));
      t.upper.push_back(std::move(hi));
    }
  }
  return t;
}

// ---- hazard-rate table -----------------------------------------------------

inline void write_rates_csv(const std::string& path, const TransitionTopology& topo,
                            const std::vector<std::string>& ids, const std::vector<double>& times,
                            const std::vector<MatrixXd>& rates /* per subject: times x q */) {
  auto f = ioutil::open_out(path);
  f << "subject_id,time";
  for (const auto& [i, j] : topo.rate_index) f << ",rate_" << i + 1 << "_" << j + 1;
  f << '\n';
  for (std::size_t s = 0; s < ids.size(); ++s)
    for (std::size_t k = 0; k < times.size(); ++k) {
      f << ids[s] << ',' << ioutil::fmt(times[k]);
      for (int e = 0; e < topo.q_count(); ++e) f << ',' << ioutil::fmt(rates[s](k, e));
      f << '\n';
    }
  if (!f) throw IoError("write failed: " + path);
}

// ---- training history ------------------------------------------------------

inline void write_history_csv(const std::string& path, const std::vector<EpochRow>& rows) {
  auto f = ioutil::open_out(path);
  f << "epoch,train_nll,valid_nll,lyapunov,kl,total,clamp_count,seconds\n";
  for (const auto& r : rows)
    f << r.epoch << ',' << ioutil::fmt(r.train_nll) << ',' << ioutil::fmt(r.valid_nll) << ','
      << ioutil::fmt(r.lyapunov) << ',' << ioutil::fmt(r.kl) << ',' << ioutil::fmt(r.total) << ','
      << r.clamp_count << ',' << ioutil::fmt(r.seconds) << '\n';
  if (!f) throw IoError("write failed: " + path);
}

inline std::vector<EpochRow> read_history_csv(const std::string& path) {
  auto f = ioutil::open_in(path);
  std::string line;
  if (!std::getline(f, line)) throw IoError(path + ": empty history");
  std::vector<EpochRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cols = ioutil::split_csv(line);
    if (cols.size() != 8) throw IoError(path + ": expected 8 history columns");
    EpochRow r;
    r.epoch = static_cast<int>(ioutil::parse_long(cols[0], "history"));
    r.train_nll = ioutil::parse_double(cols[1], "history");
    r.valid_nll = ioutil::parse_double(cols[2], "history");
    r.lyapunov = ioutil::parse_double(cols[3], "history");
    r.kl = ioutil::parse_double(cols[4], "history");
    r.total = ioutil::parse_double(cols[5], "history");
    r.clamp_count = ioutil::parse_long(cols[6], "history");
    r.seconds = ioutil::parse_double(cols[7], "history");
    rows.push_back(r);
  }
  return rows;
}

// ---- checkpoints -----------------------------------------------------------

// Binary layout, little-endian throughout:
//   magic "KOLMOCK1"
//   u32 kind (0 point model, 1 latent model)
//   u32 states, u32 memory_dim, u32 n_cov, u32 n_transitions
//   f64 time_scale, f64 time_factor, f64 beta
//   per transition: u32 from, u32 to
//   per covariate: f64 mean, f64 sd, u8 constant_flag
//   u32 n_nets, per net: u32 role, f64 dropout, u32 depth, per entry u32 width
//     (roles: 0 encoder, 1 dynamics, 2 prior, 3 posterior; file order is
//      allocation order in the parameter store)
//   u8 has_optimizer
//   u64 n_params, f64 values...
//   if has_optimizer: i64 adam_step, f64 first moments..., f64 second moments...
inline constexpr char kCheckpointMagic[8] = {'K', 'O', 'L', 'M', 'O', 'C', 'K', '1'};

namespace ioutil {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError(std::string("truncated checkpoint while reading ") + what);
  return v;
}

inline void put_net(std::ostream& os, std::uint32_t role, const Mlp& net) {
  put<std::uint32_t>(os, role);
  put<double>(os, net.dropout);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(net.sizes.size()));
  for (int w : net.sizes) put<std::uint32_t>(os, static_cast<std::uint32_t>(w));
}

inline void write_checkpoint_common(std::ostream& os, std::uint32_t kind, const KfeModel& core, double beta,
                                    const std::vector<std::pair<std::uint32_t, const Mlp*>>& nets,
                                    bool with_optimizer) {
  if (core.injected_rates) throw IoError("checkpoints store network models, not injected rates");
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(os, kind);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(core.n_states()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(core.memory_dim));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(core.n_cov));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(core.q_count()));
  put<double>(os, core.time_scale);
  put<double>(os, core.time_factor);
  put<double>(os, beta);
  for (const auto& [i, j] : core.topo.rate_index) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(i));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(j));
  }
  for (int c = 0; c < core.n_cov; ++c) {
    put<double>(os, core.norm.mean[c]);
    put<double>(os, core.norm.sd[c]);
    put<std::uint8_t>(os, core.norm.constant[c]);
  }
  put<std::uint32_t>(os, static_cast<std::uint32_t>(nets.size()));
  for (const auto& [role, net] : nets) put_net(os, role, *net);
  put<std::uint8_t>(os, with_optimizer ? 1 : 0);
  const auto& ps = core.params;
  put<std::uint64_t>(os, static_cast<std::uint64_t>(ps.size()));
  os.write(reinterpret_cast<const char*>(ps.value.data()), ps.size() * sizeof(double));
  if (with_optimizer) {
    put<std::int64_t>(os, ps.adam_t);
    os.write(reinterpret_cast<const char*>(ps.m.data()), ps.size() * sizeof(double));
    os.write(reinterpret_cast<const char*>(ps.v.data()), ps.size() * sizeof(double));
  }
}

}  // namespace ioutil

inline void save_checkpoint(const std::string& path, const KfeModel& model, bool with_optimizer = true) {
  auto f = ioutil::open_out(path);
  std::vector<std::pair<std::uint32_t, const Mlp*>> nets;
  if (model.encoder) nets.push_back({0u, &*model.encoder});
  nets.push_back({1u, &model.dynamics});
  ioutil::write_checkpoint_common(f, 0u, model, 0.0, nets, with_optimizer);
  if (!f) throw IoError("write failed: " + path);
}

inline void save_checkpoint(const std::string& path, const VariationalModel& model, bool with_optimizer = true) {
  auto f = ioutil::open_out(path);
  std::vector<std::pair<std::uint32_t, const Mlp*>> nets{
      {1u, &model.core.dynamics}, {2u, &model.prior}, {3u, &model.posterior}};
  ioutil::write_checkpoint_common(f, 1u, model.core, model.beta, nets, with_optimizer);
  if (!f) throw IoError("write failed: " + path);
}

struct Checkpoint {
  int kind = 0;  // 0 point model, 1 latent model
  KfeModel point;
  VariationalModel latent;

  KfeModel& core() { return kind == 0 ? point : latent.core; }
  const KfeModel& core() const { return kind == 0 ? point : latent.core; }
};

inline Checkpoint load_checkpoint(const std::string& path) {
  auto f = ioutil::open_in(path);
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw IoError(path + ": not a model checkpoint");
  using ioutil::get;
  Checkpoint ck;
  ck.kind = static_cast<int>(get<std::uint32_t>(f, "kind"));
  if (ck.kind != 0 && ck.kind != 1) throw IoError(path + ": unknown checkpoint kind");
  const int S = static_cast<int>(get<std::uint32_t>(f, "states"));
  const int M = static_cast<int>(get<std::uint32_t>(f, "memory_dim"));
  const int d = static_cast<int>(get<std::uint32_t>(f, "n_cov"));
  const int q = static_cast<int>(get<std::uint32_t>(f, "n_transitions"));
  const double time_scale = get<double>(f, "time_scale");
  const double time_factor = get<double>(f, "time_factor");
  const double beta = get<double>(f, "beta");
  std::vector<std::pair<int, int>> edges;
  for (int e = 0; e < q; ++e) {
    const int i = static_cast<int>(get<std::uint32_t>(f, "edge"));
    const int j = static_cast<int>(get<std::uint32_t>(f, "edge"));
    edges.push_back({i, j});
  }
  NormalizationStats norm;
  for (int c = 0; c < d; ++c) {
    norm.mean.push_back(get<double>(f, "norm mean"));
    norm.sd.push_back(get<double>(f, "norm sd"));
    norm.constant.push_back(get<std::uint8_t>(f, "norm flag"));
  }

  KfeModel& core = ck.kind == 0 ? ck.point : ck.latent.core;
  core.topo = TransitionTopology::make(S, edges);
  core.memory_dim = M;
  core.n_cov = d;
  core.time_scale = time_scale;
  core.time_factor = time_factor;
  core.norm = norm;
  ck.latent.beta = beta;

  const int n_nets = static_cast<int>(get<std::uint32_t>(f, "net count"));
  bool have_dynamics = false;
  for (int k = 0; k < n_nets; ++k) {
    const auto role = get<std::uint32_t>(f, "net role");
    Mlp net;
    net.dropout = get<double>(f, "net dropout");
    const int depth = static_cast<int>(get<std::uint32_t>(f, "net depth"));
    for (int l = 0; l < depth; ++l) net.sizes.push_back(static_cast<int>(get<std::uint32_t>(f, "net width")));
    int total = 0;
    for (std::size_t l = 0; l + 1 < net.sizes.size(); ++l)
      total += net.sizes[l] * net.sizes[l + 1] + net.sizes[l + 1];
    net.offset = core.params.alloc(total);
    net.count = total;
    switch (role) {
      case 0u: core.encoder = net; break;
      case 1u: core.dynamics = net; have_dynamics = true; break;
      case 2u: ck.latent.prior = net; break;
      case 3u: ck.latent.posterior = net; break;
      default: throw IoError(path + ": unknown network role");
    }
  }
  if (!have_dynamics) throw IoError(path + ": checkpoint lacks a dynamics network");
  if (ck.kind == 1 && (ck.latent.prior.offset < 0 || ck.latent.posterior.offset < 0))
    throw IoError(path + ": latent checkpoint lacks prior/posterior networks");

  const bool has_optimizer = get<std::uint8_t>(f, "optimizer flag") != 0;
  const auto n_params = get<std::uint64_t>(f, "parameter count");
  if (n_params != static_cast<std::uint64_t>(core.params.size()))
    throw IoError(path + ": parameter count does not match the declared networks");
  f.read(reinterpret_cast<char*>(core.params.value.data()), core.params.size() * sizeof(double));
  if (!f) throw IoError(path + ": truncated parameter block");
  if (has_optimizer) {
    core.params.adam_t = get<std::int64_t>(f, "adam step");
    f.read(reinterpret_cast<char*>(core.params.m.data()), core.params.size() * sizeof(double));
    f.read(reinterpret_cast<char*>(core.params.v.data()), core.params.size() * sizeof(double));
    if (!f) throw IoError(path + ": truncated optimizer block");
  }
  return ck;
}

}  // namespace kolmo
