#pragma once

// State space and panel data model for multi-state event histories.
//
// A subject is a sequence of timestamped state observations. The first row is
// the entry observation; interior rows are transitions observed either exactly
// (the jump happened at that instant) or as interval censored (the subject was
// last seen in the previous state and is now seen in the new one, with the
// jump time unknown); the final row is either an observed transition or a
// censoring row that repeats the previous state. States are 0-indexed in
// memory, 1-indexed in files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kolmo {

struct TransitionTopology {
  int n_states = 0;
  std::vector<std::uint8_t> allowed;          // n_states * n_states, row-major, diagonal always 0
  std::vector<std::pair<int, int>> rate_index;  // allowed (from,to) pairs in row-major order
  std::vector<std::uint8_t> absorbing;          // per state: no outgoing edges

  static TransitionTopology make(int n_states, const std::vector<std::pair<int, int>>& edges) {
    if (n_states < 2) throw std::invalid_argument("topology: need at least 2 states");
    TransitionTopology t;
    t.n_states = n_states;
    t.allowed.assign(static_cast<std::size_t>(n_states) * n_states, 0);
    for (auto [i, j] : edges) {
      if (i < 0 || i >= n_states || j < 0 || j >= n_states)
        throw std::invalid_argument("topology: edge state out of range");
      if (i == j) throw std::invalid_argument("topology: self edge not allowed");
      t.allowed[static_cast<std::size_t>(i) * n_states + j] = 1;
    }
    t.finalize();
    return t;
  }

  void finalize() {
    const int S = n_states;
    rate_index.clear();
    absorbing.assign(S, 1);
    for (int i = 0; i < S; ++i) {
      allowed[static_cast<std::size_t>(i) * S + i] = 0;
      for (int j = 0; j < S; ++j) {
        if (allowed[static_cast<std::size_t>(i) * S + j]) {
          rate_index.emplace_back(i, j);
          absorbing[i] = 0;
        }
      }
    }
  }

  bool is_allowed(int i, int j) const {
    return allowed[static_cast<std::size_t>(i) * n_states + j] != 0;
  }

  int q_count() const { return static_cast<int>(rate_index.size()); }

  // Index of edge (i,j) in rate_index, or -1.
  int edge_id(int i, int j) const {
    for (int k = 0; k < q_count(); ++k)
      if (rate_index[k].first == i && rate_index[k].second == j) return k;
    return -1;
  }

  // True if j can be reached from i through zero or more allowed transitions.
  bool reachable(int i, int j) const {
    if (i == j) return true;
    std::vector<std::uint8_t> seen(n_states, 0);
    std::vector<int> stack{i};
    seen[i] = 1;
    while (!stack.empty()) {
      const int s = stack.back();
      stack.pop_back();
      for (int k = 0; k < n_states; ++k) {
        if (is_allowed(s, k) && !seen[k]) {
          if (k == j) return true;
          seen[k] = 1;
          stack.push_back(k);
        }
      }
    }
    return false;
  }
};

enum class ObsKind { Start, Exact, Interval, Censor };

inline const char* to_string(ObsKind k) {
  switch (k) {
    case ObsKind::Start: return "start";
    case ObsKind::Exact: return "transition";
    case ObsKind::Interval: return "interval_transition";
    case ObsKind::Censor: return "censor";
  }
  return "?";
}

struct Observation {
  double time = 0.0;
  int state = 0;
  ObsKind kind = ObsKind::Start;
};

struct SubjectRecord {
  std::string id;
  std::vector<double> covariates;
  double entry_time = 0.0;  // left truncation time; equals the first observation time
  std::vector<Observation> observations;
  bool event_observed = false;  // delta: final row is an observed transition

  int n_obs() const { return static_cast<int>(observations.size()); }
  double final_time() const { return observations.back().time; }
  int final_state() const { return observations.back().state; }
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<std::uint8_t> constant;  // flagged columns whose sd was 0 (left unscaled)

  int dim() const { return static_cast<int>(mean.size()); }
};

struct Dataset {
  TransitionTopology topology;
  std::vector<std::string> covariate_names;
  std::vector<SubjectRecord> subjects;

  int n_covariates() const { return static_cast<int>(covariate_names.size()); }
  int n_subjects() const { return static_cast<int>(subjects.size()); }
};

struct Violation {
  int subject = -1;  // index into subjects, -1 for dataset-level problems
  std::string rule;
};

// Structural validation. Returns every violation found rather than stopping at
// the first so callers can report them all.
inline std::vector<Violation> validate_dataset(const Dataset& ds) {
  std::vector<Violation> out;
  const auto& topo = ds.topology;
  const int S = topo.n_states;
  const int d = ds.n_covariates();
  for (int si = 0; si < ds.n_subjects(); ++si) {
    const auto& sub = ds.subjects[si];
    auto flag = [&](const std::string& rule) { out.push_back({si, rule}); };
    if (static_cast<int>(sub.covariates.size()) != d) {
      flag("covariate dimension mismatch");
      continue;
    }
    if (sub.observations.empty()) {
      flag("subject has no observations");
      continue;
    }
    bool times_ok = true;
    for (int k = 0; k < sub.n_obs(); ++k) {
      const auto& o = sub.observations[k];
      if (o.state < 0 || o.state >= S) {
        flag("state out of range");
        times_ok = false;
        break;
      }
      if (!std::isfinite(o.time)) {
        flag("non-finite observation time");
        times_ok = false;
        break;
      }
      if (k > 0 && !(o.time > sub.observations[k - 1].time)) {
        flag("non-increasing observation times");
        times_ok = false;
        break;
      }
    }
    if (!times_ok) continue;
    if (sub.observations.front().kind != ObsKind::Start) flag("first observation must be the entry row");
    if (sub.entry_time != sub.observations.front().time) flag("entry time differs from first observation time");
    for (int k = 1; k < sub.n_obs(); ++k) {
      const auto& prev = sub.observations[k - 1];
      const auto& cur = sub.observations[k];
      const bool is_final = (k == sub.n_obs() - 1);
      switch (cur.kind) {
        case ObsKind::Start:
          flag("entry row after the first observation");
          break;
        case ObsKind::Exact:
          if (cur.state == prev.state) {
            flag("observed transition repeats the state");
          } else if (!topo.is_allowed(prev.state, cur.state)) {
            flag("transition not allowed by the topology");
          }
          break;
        case ObsKind::Interval:
          if (!topo.reachable(prev.state, cur.state)) flag("interval transition between unreachable states");
          break;
        case ObsKind::Censor:
          if (!is_final) flag("censoring row before the final observation");
          if (cur.state != prev.state) flag("censoring row changes the state");
          break;
      }
      if (!is_final && topo.absorbing[prev.state] && cur.state != prev.state)
        flag("transition out of an absorbing state");
    }
    const auto& last = sub.observations.back();
    if (sub.n_obs() == 1) {
      if (sub.event_observed) flag("event flag set on an entry-only record");
    } else if (sub.event_observed) {
      if (last.kind == ObsKind::Censor) flag("event flag set on a censoring row");
    } else {
      if (last.kind == ObsKind::Exact || last.kind == ObsKind::Interval)
        if (!topo.absorbing[last.state]) flag("censor flag unset on a non-absorbing observed final row");
    }
  }
  return out;
}

// Z-score normalization of covariate columns (population standard deviation).
// Constant columns are flagged and left unscaled. When `given` is supplied its
// statistics are applied instead of being estimated, so validation/test splits
// reuse the training-set transform.
inline NormalizationStats normalize_covariates(Dataset& ds, const std::optional<NormalizationStats>& given = {}) {
  const int d = ds.n_covariates();
  const int n = ds.n_subjects();
  NormalizationStats st;
  if (given) {
    if (given->dim() != d) throw std::invalid_argument("normalize_covariates: stats dimension mismatch");
    st = *given;
  } else {
    st.mean.assign(d, 0.0);
    st.sd.assign(d, 1.0);
    st.constant.assign(d, 0);
    if (n > 0) {
      for (int j = 0; j < d; ++j) {
        double m = 0.0;
        for (const auto& s : ds.subjects) m += s.covariates[j];
        m /= n;
        double v = 0.0;
        for (const auto& s : ds.subjects) {
          const double c = s.covariates[j] - m;
          v += c * c;
        }
        v /= n;
        st.mean[j] = m;
        if (v > 0.0) {
          st.sd[j] = std::sqrt(v);
        } else {
          st.sd[j] = 1.0;
          st.constant[j] = 1;
        }
      }
    }
  }
  for (auto& s : ds.subjects)
    for (int j = 0; j < d; ++j) s.covariates[j] = (s.covariates[j] - st.mean[j]) / st.sd[j];
  return st;
}

}  // namespace kolmo
