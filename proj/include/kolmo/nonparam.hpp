#pragma once

// Nonparametric reference estimators: Kaplan-Meier product-limit curves, the
// Aalen-Johansen product-integral for multi-state occupation, and the
// censoring-distribution KM used for inverse-probability weights.
//
// Tie convention everywhere: events precede censorings at equal times, so a
// subject censored at t is still in the risk set for an event at t.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "kolmo/statespace.hpp"

namespace kolmo {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Empirical quantile with linear interpolation between order statistics.
inline double empirical_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (static_cast<double>(v.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= v.size()) return v.back();
  const double w = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - w) + v[lo + 1] * w;
}

// Right-continuous step function: value(t) is `initial` before the first
// jump time and values[k] on [times[k], times[k+1]).
struct StepFunction {
  double initial = 1.0;
  std::vector<double> times;
  std::vector<double> values;

  double operator()(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return initial;
    return values[static_cast<std::size_t>(it - times.begin()) - 1];
  }

  // Left limit: the value just before t.
  double left(double t) const {
    const auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return initial;
    return values[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

// Product-limit survival estimator S(t) = prod_{t_i <= t} (1 - d_i / n_i).
inline StepFunction kaplan_meier(const std::vector<double>& times, const std::vector<int>& events) {
  if (times.empty()) throw std::invalid_argument("kaplan_meier: empty input");
  if (times.size() != events.size())
    throw std::invalid_argument("kaplan_meier: times and event flags must have equal length");
  for (double t : times)
    if (t < 0.0 || !std::isfinite(t)) throw std::invalid_argument("kaplan_meier: times must be finite and nonnegative");

  std::map<double, std::pair<int, int>> counts;  // time -> (events, total leaving)
  for (std::size_t i = 0; i < times.size(); ++i) {
    auto& c = counts[times[i]];
    if (events[i]) ++c.first;
    ++c.second;
  }
  StepFunction s;
  double surv = 1.0;
  long at_risk = static_cast<long>(times.size());
  for (const auto& [t, c] : counts) {
    if (c.first > 0) {
      surv *= 1.0 - static_cast<double>(c.first) / static_cast<double>(at_risk);
      s.times.push_back(t);
      s.values.push_back(surv);
    }
    at_risk -= c.second;
  }
  return s;
}

// KM of the censoring distribution: the event indicator is flipped.
inline StepFunction censoring_km(const std::vector<double>& times, const std::vector<int>& events) {
  std::vector<int> flipped(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) flipped[i] = events[i] ? 0 : 1;
  return kaplan_meier(times, flipped);
}

struct OccupationEstimate {
  std::vector<double> times;
  MatrixXd occupation;  // grid x states
  bool extended_beyond_data = false;
};

// Aalen-Johansen occupation probabilities on a grid: the empirical product
// integral prod (I + dA(s)) applied to the empirical initial distribution,
// with Nelson-Aalen increments dA_ij = d_ij(s)/n_i(s). Requires exact
// transition times; interval-censored records are rejected.
inline OccupationEstimate aalen_johansen(const Dataset& ds, const std::vector<double>& grid) {
  if (ds.subjects.empty()) throw std::invalid_argument("aalen_johansen: empty dataset");
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (grid[k] < grid[k - 1]) throw std::invalid_argument("aalen_johansen: grid must be nondecreasing");
  const int S = ds.topology.n_states;

  struct Episode {
    int state;
    double enter, exit;
  };
  struct Jump {
    double time;
    int from, to;
  };
  std::vector<Episode> episodes;
  std::vector<Jump> jumps;
  VectorXd init = VectorXd::Zero(S);
  double last_time = 0.0;
  for (const auto& sub : ds.subjects) {
    if (sub.n_obs() == 0) throw std::invalid_argument("aalen_johansen: subject without observations");
    init[sub.observations.front().state] += 1.0;
    for (int k = 1; k < sub.n_obs(); ++k) {
      const auto& prev = sub.observations[k - 1];
      const auto& cur = sub.observations[k];
      if (cur.kind == ObsKind::Interval)
        throw std::invalid_argument("aalen_johansen: interval-censored record for subject " + sub.id +
                                    "; exact transition times are required");
      episodes.push_back({prev.state, prev.time, cur.time});
      if (cur.kind == ObsKind::Exact) jumps.push_back({cur.time, prev.state, cur.state});
    }
    last_time = std::max(last_time, sub.final_time());
  }
  init /= init.sum();

  std::vector<double> event_times;
  for (const auto& j : jumps) event_times.push_back(j.time);
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

  OccupationEstimate out;
  out.times = grid;
  out.occupation.resize(grid.size(), S);
  VectorXd occ = init;
  MatrixXd d(S, S);
  VectorXd n(S);
  std::size_t e = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (; e < event_times.size() && event_times[e] <= grid[g]; ++e) {
      const double t = event_times[e];
      d.setZero();
      for (const auto& j : jumps)
        if (j.time == t) d(j.from, j.to) += 1.0;
      n.setZero();
      for (const auto& ep : episodes)
        if (ep.enter < t && t <= ep.exit) n[ep.state] += 1.0;
      VectorXd next = occ;
      for (int i = 0; i < S; ++i) {
        if (n[i] == 0.0) continue;
        for (int j = 0; j < S; ++j)
          if (j != i && d(i, j) > 0.0) {
            const double flow = occ[i] * d(i, j) / n[i];
            next[i] -= flow;
            next[j] += flow;
          }
      }
      occ = next / next.sum();
    }
    if (grid[g] > last_time) out.extended_beyond_data = true;
    out.occupation.row(g) = occ.transpose();
  }
  return out;
}

}  // namespace kolmo
