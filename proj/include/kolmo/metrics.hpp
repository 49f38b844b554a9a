#pragma once

// Censoring-aware evaluation: time-dependent concordance, inverse-probability
// weighted Brier score and binomial log-likelihood with their time integrals,
// the multi-state Brier score, squared error against simulated ground truth,
// and credible-band coverage.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "kolmo/nonparam.hpp"
#include "kolmo/statespace.hpp"

namespace kolmo {

inline constexpr double kWeightCap = 100.0;
inline constexpr double kCensorFloor = 1e-3;
inline constexpr double kProbClamp = 1e-7;

// Evaluation times, either at equally spaced quantiles of the observed event
// times or uniform between the 1% and 99% quantiles. The extreme tails are
// excluded in both cases so late-time weights stay bounded.
struct EvalGrid {
  enum class Rule { Quantile, Uniform };
  Rule rule = Rule::Quantile;
  std::vector<double> times;

  static EvalGrid quantiles(const std::vector<double>& event_times, int count = 100) {
    if (event_times.empty()) throw std::invalid_argument("EvalGrid: no event times");
    if (count < 1) throw std::invalid_argument("EvalGrid: count must be positive");
    EvalGrid g;
    g.rule = Rule::Quantile;
    for (int k = 0; k < count; ++k) {
      const double q = count == 1 ? 0.5 : 0.01 + 0.98 * k / (count - 1.0);
      const double t = empirical_quantile(event_times, q);
      if (g.times.empty() || t > g.times.back()) g.times.push_back(t);
    }
    return g;
  }

  static EvalGrid uniform(const std::vector<double>& event_times, int count = 100) {
    if (event_times.empty()) throw std::invalid_argument("EvalGrid: no event times");
    if (count < 2) throw std::invalid_argument("EvalGrid: uniform rule needs at least 2 points");
    EvalGrid g;
    g.rule = Rule::Uniform;
    const double lo = empirical_quantile(event_times, 0.01);
    const double hi = empirical_quantile(event_times, 0.99);
    for (int k = 0; k < count; ++k) g.times.push_back(lo + (hi - lo) * k / (count - 1.0));
    g.times.erase(std::unique(g.times.begin(), g.times.end()), g.times.end());
    return g;
  }
};

// Per-subject prediction curves on a shared time axis, evaluated by linear
// interpolation and held flat outside the stored range.
struct CurveSet {
  std::vector<double> times;
  MatrixXd values;  // subjects x times

  int n_subjects() const { return static_cast<int>(values.rows()); }

  double eval(int subject, double t) const {
    if (times.empty()) throw std::invalid_argument("CurveSet: empty time axis");
    if (t <= times.front()) return values(subject, 0);
    if (t >= times.back()) return values(subject, values.cols() - 1);
    const auto hi = std::upper_bound(times.begin(), times.end(), t) - times.begin();
    const double w = (t - times[hi - 1]) / (times[hi] - times[hi - 1]);
    return values(subject, hi - 1) * (1.0 - w) + values(subject, hi) * w;
  }
};

namespace detail {

inline double ipcw_weight(double g, long& capped) {
  const double w = 1.0 / std::max(g, kCensorFloor);
  if (w > kWeightCap) {
    ++capped;
    return kWeightCap;
  }
  return w;
}

inline double trapezoid_mean(const std::vector<double>& t, const VectorXd& v) {
  if (t.size() < 2) return v[0];
  double area = 0.0;
  for (std::size_t k = 1; k < t.size(); ++k) area += 0.5 * (v[k] + v[k - 1]) * (t[k] - t[k - 1]);
  return area / (t.back() - t.front());
}

}  // namespace detail

// Time-dependent concordance: over pairs where subject i has an observed
// event at t_i and subject j survives past t_i, the pair is concordant when
// the model assigns i the lower survival at t_i. Prediction ties count half.
inline double concordance_td(const CurveSet& pred, const std::vector<double>& times,
                             const std::vector<int>& events) {
  const int n = static_cast<int>(times.size());
  if (pred.n_subjects() != n || static_cast<int>(events.size()) != n)
    throw std::invalid_argument("concordance_td: size mismatch");
  double concordant = 0.0;
  long comparable = 0;
  std::vector<double> at_event(n);
  for (int i = 0; i < n; ++i) {
    if (!events[i]) continue;
    for (int j = 0; j < n; ++j) at_event[j] = pred.eval(j, times[i]);
    for (int j = 0; j < n; ++j) {
      if (times[j] <= times[i]) continue;
      ++comparable;
      if (at_event[i] < at_event[j])
        concordant += 1.0;
      else if (at_event[i] == at_event[j])
        concordant += 0.5;
    }
  }
  if (comparable == 0) throw std::invalid_argument("concordance_td: no comparable pairs");
  return concordant / static_cast<double>(comparable);
}

struct ScoreCurve {
  std::vector<double> times;
  VectorXd values;
  double integrated = 0.0;
  long capped_weights = 0;
};

// IPCW Brier score: subjects with an event by t contribute Shat(t)^2 weighted
// by 1/G(T-), subjects still at risk contribute (1-Shat(t))^2 weighted by
// 1/G(t), and subjects censored by t drop out.
inline ScoreCurve brier_ipcw(const CurveSet& pred, const std::vector<double>& times,
                             const std::vector<int>& events, const StepFunction& G,
                             const std::vector<double>& grid) {
  const int n = static_cast<int>(times.size());
  if (pred.n_subjects() != n || static_cast<int>(events.size()) != n)
    throw std::invalid_argument("brier_ipcw: size mismatch");
  ScoreCurve out;
  out.times = grid;
  out.values.resize(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double t = grid[g];
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double s = pred.eval(i, t);
      if (times[i] <= t && events[i])
        acc += detail::ipcw_weight(G.left(times[i]), out.capped_weights) * s * s;
      else if (times[i] > t)
        acc += detail::ipcw_weight(G(t), out.capped_weights) * (1.0 - s) * (1.0 - s);
    }
    out.values[g] = acc / n;
  }
  out.integrated = detail::trapezoid_mean(grid, out.values);
  return out;
}

// IPCW binomial log-likelihood, higher is better: log Shat(t) for subjects
// still at risk, log(1-Shat(t)) for prior events, probabilities clamped away
// from 0 and 1.
inline ScoreCurve ibll(const CurveSet& pred, const std::vector<double>& times,
                       const std::vector<int>& events, const StepFunction& G,
                       const std::vector<double>& grid) {
  const int n = static_cast<int>(times.size());
  if (pred.n_subjects() != n || static_cast<int>(events.size()) != n)
    throw std::invalid_argument("ibll: size mismatch");
  ScoreCurve out;
  out.times = grid;
  out.values.resize(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double t = grid[g];
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double s = std::clamp(pred.eval(i, t), kProbClamp, 1.0 - kProbClamp);
      if (times[i] <= t && events[i])
        acc += detail::ipcw_weight(G.left(times[i]), out.capped_weights) * std::log(1.0 - s);
      else if (times[i] > t)
        acc += detail::ipcw_weight(G(t), out.capped_weights) * std::log(s);
    }
    out.values[g] = acc / n;
  }
  out.integrated = detail::trapezoid_mean(grid, out.values);
  return out;
}

// Multi-state Brier score per state: (1{Y(t)=j} - Phat_j(t))^2 with the Graf
// weighting generalized to multi-state paths. The observed state at t is read
// off the recorded trajectory; subjects already absorbed stay observable.
inline std::vector<ScoreCurve> multistate_brier(const std::vector<CurveSet>& state_pred,
                                                const Dataset& ds, const StepFunction& G,
                                                const std::vector<double>& grid) {
  const int S = ds.topology.n_states;
  if (static_cast<int>(state_pred.size()) != S)
    throw std::invalid_argument("multistate_brier: one curve set per state required");
  const int n = static_cast<int>(ds.subjects.size());
  for (const auto& cs : state_pred)
    if (cs.n_subjects() != n) throw std::invalid_argument("multistate_brier: size mismatch");

  std::vector<ScoreCurve> out(S);
  for (int j = 0; j < S; ++j) {
    out[j].times = grid;
    out[j].values = VectorXd::Zero(grid.size());
  }
  long capped = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double t = grid[g];
    for (int i = 0; i < n; ++i) {
      const auto& sub = ds.subjects[i];
      const double final_t = sub.final_time();
      double w;
      int y;
      if (sub.event_observed && final_t <= t) {
        w = detail::ipcw_weight(G.left(final_t), capped);
        y = sub.observations.back().state;
      } else if (final_t > t) {
        w = detail::ipcw_weight(G(t), capped);
        y = sub.observations.front().state;
        for (const auto& o : sub.observations)
          if (o.time <= t) y = o.state;
      } else {
        continue;
      }
      for (int j = 0; j < S; ++j) {
        const double d = (y == j ? 1.0 : 0.0) - state_pred[j].eval(i, t);
        out[j].values[g] += w * d * d;
      }
    }
    for (int j = 0; j < S; ++j) out[j].values[g] /= n;
  }
  for (int j = 0; j < S; ++j) {
    out[j].integrated = detail::trapezoid_mean(grid, out[j].values);
    out[j].capped_weights = capped;
  }
  return out;
}

struct TruthBrier {
  std::vector<double> times;
  MatrixXd values;          // grid x states
  VectorXd time_averaged;   // per state, trapezoid over the grid
};

// Squared difference between predicted and true occupation probabilities,
// averaged over subjects. Only available on simulated data.
inline TruthBrier brier_vs_truth(const std::vector<CurveSet>& state_pred,
                                 const std::vector<CurveSet>& state_truth,
                                 const std::vector<double>& grid) {
  if (state_pred.size() != state_truth.size())
    throw std::invalid_argument("brier_vs_truth: state count mismatch");
  const int S = static_cast<int>(state_pred.size());
  const int n = S > 0 ? state_pred[0].n_subjects() : 0;
  for (int j = 0; j < S; ++j)
    if (state_pred[j].n_subjects() != n || state_truth[j].n_subjects() != n)
      throw std::invalid_argument("brier_vs_truth: subject mismatch");
  TruthBrier out;
  out.times = grid;
  out.values = MatrixXd::Zero(grid.size(), S);
  for (std::size_t g = 0; g < grid.size(); ++g)
    for (int j = 0; j < S; ++j) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        const double d = state_pred[j].eval(i, grid[g]) - state_truth[j].eval(i, grid[g]);
        acc += d * d;
      }
      out.values(g, j) = acc / n;
    }
  out.time_averaged.resize(S);
  for (int j = 0; j < S; ++j) out.time_averaged[j] = detail::trapezoid_mean(grid, out.values.col(j));
  return out;
}

// Fraction of (subject, grid time, state) triples where the true probability
// lies inside the credible band, boundaries included.
inline double interval_coverage(const std::vector<MatrixXd>& lower,
                                const std::vector<MatrixXd>& upper,
                                const std::vector<MatrixXd>& truth) {
  if (lower.size() != upper.size() || lower.size() != truth.size() || lower.empty())
    throw std::invalid_argument("interval_coverage: subject count mismatch");
  double hits = 0.0;
  long total = 0;
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (lower[i].rows() != truth[i].rows() || lower[i].cols() != truth[i].cols() ||
        upper[i].rows() != truth[i].rows() || upper[i].cols() != truth[i].cols())
      throw std::invalid_argument("interval_coverage: grid mismatch");
    for (Eigen::Index r = 0; r < truth[i].rows(); ++r)
      for (Eigen::Index c = 0; c < truth[i].cols(); ++c) {
        ++total;
        if (lower[i](r, c) <= truth[i](r, c) && truth[i](r, c) <= upper[i](r, c)) hits += 1.0;
      }
  }
  return hits / static_cast<double>(total);
}

}  // namespace kolmo
