#pragma once

// Ground-truth data generation.
//
// Subjects follow an inhomogeneous Markov jump process with per-transition
// Weibull baseline hazards, proportional covariate effects, and optional
// saw-tooth time-varying coefficients:
//   lambda_e(t | x) = w_e (k_e/s_e)(t/s_e)^(k_e-1) exp(sum_j beta_ej(t) x_j)
// where a flagged coefficient is modulated as beta_ej(t) = beta_ej * saw(t)
// with saw rising linearly from -amplitude to +amplitude over each period.
// Paths are sampled by thinning: within a sojourn the total exit rate is
// bounded by its supremum over the remaining follow-up, which is available
// in closed form because shapes are restricted to k >= 1 (nondecreasing
// baselines) and the saw modulation is bounded by the amplitude. Proposals
// from the bounding exponential are accepted with probability rate/bound.
// An exact occupation oracle integrates the same rates with fixed-step RK4.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "kolmo/rng.hpp"
#include "kolmo/statespace.hpp"

namespace kolmo {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct CovariateColumn {
  enum class Kind { Bernoulli, Uniform };
  Kind kind = Kind::Bernoulli;
  double a = 0.5;  // Bernoulli p, or uniform lower bound
  double b = 1.0;  // uniform upper bound
  std::string name;
};

struct EdgeHazard {
  double shape = 1.0;   // Weibull k, must be >= 1 so the baseline is nondecreasing
  double scale = 1.0;   // Weibull scale
  double weight = 1.0;  // multiplier; 0 switches the transition off
  std::vector<double> beta;       // one coefficient per covariate column
  std::vector<int> time_varying;  // covariate indices with saw-tooth modulation
};

struct TrueHazardSpec {
  TransitionTopology topology;
  std::vector<EdgeHazard> edges;  // rate_index order
  std::vector<CovariateColumn> covariates;
  double t_max = 1.0;        // administrative censoring time
  double censor_rate = 0.0;  // independent exponential censoring rate
  double saw_amplitude = 1.0;
  double saw_period = 0.0;  // <= 0 means t_max / 4

  int n_cov() const { return static_cast<int>(covariates.size()); }
  double period() const { return saw_period > 0.0 ? saw_period : t_max / 4.0; }

  void validate() const {
    if (topology.n_states < 2) throw std::invalid_argument("hazard spec: need at least two states");
    if (static_cast<int>(edges.size()) != topology.q_count())
      throw std::invalid_argument("hazard spec: one edge hazard per allowed transition required");
    for (const auto& e : edges) {
      if (e.shape < 1.0) throw std::invalid_argument("hazard spec: Weibull shape must be >= 1");
      if (e.scale <= 0.0) throw std::invalid_argument("hazard spec: Weibull scale must be positive");
      if (e.weight < 0.0) throw std::invalid_argument("hazard spec: edge weight must be nonnegative");
      if (static_cast<int>(e.beta.size()) != n_cov())
        throw std::invalid_argument("hazard spec: coefficient length must match the covariate count");
      for (int j : e.time_varying)
        if (j < 0 || j >= n_cov()) throw std::invalid_argument("hazard spec: time-varying index out of range");
    }
    if (t_max <= 0.0) throw std::invalid_argument("hazard spec: administrative censoring time must be positive");
    if (censor_rate < 0.0) throw std::invalid_argument("hazard spec: censoring rate must be nonnegative");
    if (saw_amplitude < 0.0) throw std::invalid_argument("hazard spec: saw amplitude must be nonnegative");
    if (saw_period < 0.0) throw std::invalid_argument("hazard spec: saw period must be nonnegative");
  }

  double saw(double t) const {
    const double p = period();
    const double frac = t / p - std::floor(t / p);
    return saw_amplitude * (2.0 * frac - 1.0);
  }

  // lambda_e(t | x)
  double rate(int e, double t, const VectorXd& x) const {
    const EdgeHazard& h = edges[e];
    if (h.weight == 0.0) return 0.0;
    double lin = 0.0;
    for (int j = 0; j < n_cov(); ++j) lin += h.beta[j] * x[j];
    for (int j : h.time_varying) lin += h.beta[j] * x[j] * (saw(t) - 1.0);
    const double base = (h.shape / h.scale) * std::pow(t / h.scale, h.shape - 1.0);
    return h.weight * base * std::exp(lin);
  }

  VectorXd rates(double t, const VectorXd& x) const {
    VectorXd r(topology.q_count());
    for (int e = 0; e < topology.q_count(); ++e) r[e] = rate(e, t, x);
    return r;
  }

  // sup of lambda_e over [0, b] for fixed x, in closed form.
  double rate_bound(int e, double b, const VectorXd& x) const {
    const EdgeHazard& h = edges[e];
    if (h.weight == 0.0) return 0.0;
    double lin = 0.0;
    for (int j = 0; j < n_cov(); ++j) lin += h.beta[j] * x[j];
    for (int j : h.time_varying) lin += std::abs(h.beta[j] * x[j]) * saw_amplitude - h.beta[j] * x[j];
    const double base = (h.shape / h.scale) * std::pow(b / h.scale, h.shape - 1.0);
    return h.weight * base * std::exp(lin);
  }
};

namespace detail {

inline VectorXd draw_covariates(const TrueHazardSpec& spec, Rng& rng) {
  VectorXd x(spec.n_cov());
  for (int j = 0; j < spec.n_cov(); ++j) {
    const auto& c = spec.covariates[j];
    x[j] = c.kind == CovariateColumn::Kind::Bernoulli ? (rng.bernoulli(c.a) ? 1.0 : 0.0)
                                                      : rng.uniform(c.a, c.b);
  }
  return x;
}

}  // namespace detail

// Sample n independent trajectories by thinning. Subjects are seeded
// independently, so the result is identical regardless of evaluation order.
inline Dataset sample_paths(const TrueHazardSpec& spec, int n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("sample_paths: need at least one subject");
  const int q = spec.topology.q_count();

  Dataset ds;
  ds.topology = spec.topology;
  for (int j = 0; j < spec.n_cov(); ++j) {
    const auto& c = spec.covariates[j];
    ds.covariate_names.push_back(c.name.empty() ? "x" + std::to_string(j) : c.name);
  }
  ds.subjects.resize(n);

  Rng base(splitmix64(seed ^ 0x73696dULL));
  for (int i = 0; i < n; ++i) {
    Rng rng = base.split(i);
    VectorXd x = detail::draw_covariates(spec, rng);
    const double censor =
        spec.censor_rate > 0.0 ? std::min(spec.t_max, rng.exponential(spec.censor_rate)) : spec.t_max;

    SubjectRecord& s = ds.subjects[i];
    s.id = std::to_string(i);
    s.covariates.assign(x.data(), x.data() + x.size());
    s.entry_time = 0.0;
    s.observations = {{0.0, 0, ObsKind::Start}};
    s.event_observed = false;

    int state = 0;
    double t = 0.0;
    long proposals = 0;
    while (!spec.topology.absorbing[state]) {
      std::vector<int> out_edges;
      double bound = 0.0;
      for (int e = 0; e < q; ++e)
        if (spec.topology.rate_index[e].first == state) {
          out_edges.push_back(e);
          bound += spec.rate_bound(e, censor, x);
        }
      if (out_edges.empty() || bound <= 0.0) break;

      bool moved = false;
      while (t < censor) {
        if (++proposals > 2000000)
          throw std::runtime_error("sample_paths: thinning stalled, bound far above realized rates");
        t += rng.exponential(bound);
        if (t >= censor) break;
        double total = 0.0;
        VectorXd lam(out_edges.size());
        for (std::size_t k = 0; k < out_edges.size(); ++k) {
          lam[k] = spec.rate(out_edges[k], t, x);
          if (lam[k] > spec.rate_bound(out_edges[k], censor, x) + 1e-9)
            throw std::runtime_error("sample_paths: rate exceeds thinning bound for transition " +
                                     std::to_string(spec.topology.rate_index[out_edges[k]].first + 1) + "->" +
                                     std::to_string(spec.topology.rate_index[out_edges[k]].second + 1) +
                                     " at t=" + std::to_string(t));
          total += lam[k];
        }
        if (rng.uniform01() * bound <= total) {
          double u = rng.uniform01() * total;
          int e = out_edges.back();
          for (std::size_t k = 0; k < out_edges.size(); ++k) {
            u -= lam[k];
            if (u <= 0.0) {
              e = out_edges[k];
              break;
            }
          }
          state = spec.topology.rate_index[e].second;
          s.observations.push_back({t, state, ObsKind::Exact});
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }

    if (spec.topology.absorbing[state]) {
      s.event_observed = true;
    } else {
      s.observations.push_back({censor, state, ObsKind::Censor});
      s.event_observed = false;
    }
  }
  return ds;
}

struct GroundTruthSlice {
  std::vector<double> times;
  MatrixXd occupation;  // times x states, from the initial state
  MatrixXd rates;       // times x transitions
};

// Exact state-occupation probabilities for covariates x: integrates the
// forward equation with the analytic generator by fixed-step RK4 (max step
// 1e-3), landing exactly on the grid points.
inline GroundTruthSlice true_occupation(const TrueHazardSpec& spec, const VectorXd& x,
                                        const std::vector<double>& grid, int initial_state = 0) {
  spec.validate();
  const int S = spec.topology.n_states;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (grid[k] < 0.0 || grid[k] > spec.t_max) throw std::invalid_argument("true_occupation: grid point outside [0, T]");
    if (k > 0 && grid[k] < grid[k - 1]) throw std::invalid_argument("true_occupation: grid must be nondecreasing");
  }

  auto generator = [&](double t, MatrixXd& Q) {
    Q.setZero(S, S);
    for (int e = 0; e < spec.topology.q_count(); ++e) {
      const auto [i, j] = spec.topology.rate_index[e];
      const double v = spec.rate(e, t, x);
      Q(i, j) = v;
      Q(i, i) -= v;
    }
  };

  GroundTruthSlice out;
  out.times = grid;
  out.occupation.resize(grid.size(), S);
  out.rates.resize(grid.size(), spec.topology.q_count());
  MatrixXd P = MatrixXd::Identity(S, S);
  MatrixXd Q(S, S), k1, k2, k3, k4;
  double t = 0.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double target = grid[g];
    if (target > t) {
      const int steps = std::max(1, static_cast<int>(std::ceil((target - t) / 1e-3)));
      const double h = (target - t) / steps;
      for (int s = 0; s < steps; ++s) {
        generator(t, Q);
        k1 = P * Q;
        generator(t + 0.5 * h, Q);
        k2 = (P + 0.5 * h * k1) * Q;
        k3 = (P + 0.5 * h * k2) * Q;
        generator(t + h, Q);
        k4 = (P + h * k3) * Q;
        P += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
      }
      t = target;
    }
    out.occupation.row(g) = P.row(initial_state);
    out.rates.row(g) = spec.rates(target, x).transpose();
  }
  return out;
}

struct SimPreset {
  TrueHazardSpec spec;
  int n_subjects = 0;
  std::uint64_t seed = 0;
};

inline SimPreset sim_preset(const std::string& name) {
  SimPreset p;
  auto bern = [](double prob, std::string nm) {
    CovariateColumn c;
    c.kind = CovariateColumn::Kind::Bernoulli;
    c.a = prob;
    c.name = std::move(nm);
    return c;
  };
  auto unif = [](double lo, double hi, std::string nm) {
    CovariateColumn c;
    c.kind = CovariateColumn::Kind::Uniform;
    c.a = lo;
    c.b = hi;
    c.name = std::move(nm);
    return c;
  };
  auto twelve_covariates = [&]() {
    std::vector<CovariateColumn> cols;
    for (int j = 0; j < 6; ++j) cols.push_back(bern(0.5, "x" + std::to_string(j)));
    for (int j = 6; j < 12; ++j) cols.push_back(unif(0.0, 1.0, "x" + std::to_string(j)));
    return cols;
  };

  if (name == "two-state-smoke") {
    p.spec.topology = TransitionTopology::make(2, {{0, 1}});
    EdgeHazard e;
    e.shape = 1.0;
    e.scale = 1.0;
    p.spec.edges = {e};
    p.spec.t_max = 6.0;
    p.spec.censor_rate = 0.0;
    p.n_subjects = 500;
    p.seed = 101;
    return p;
  }
  if (name == "illness-death-5000") {
    p.spec.topology = TransitionTopology::make(3, {{0, 1}, {0, 2}, {1, 2}});
    p.spec.covariates = twelve_covariates();
    EdgeHazard ill, death, post;
    ill.shape = 1.3;
    ill.scale = 2.4;
    ill.beta = {0.8, -0.6, 0.5, -0.4, 0.3, 0.0, 0.7, -0.5, 0.4, 0.0, -0.3, 0.2};
    ill.time_varying = {0, 1};
    death.shape = 1.1;
    death.scale = 3.2;
    death.beta = {0.6, 0.4, -0.3, 0.2, 0.0, -0.5, 0.3, 0.6, -0.4, 0.2, 0.0, -0.2};
    death.time_varying = {0, 1};
    post.shape = 1.5;
    post.scale = 2.0;
    post.beta = {-0.4, 0.7, 0.3, 0.0, -0.2, 0.4, -0.6, 0.3, 0.2, -0.3, 0.4, 0.0};
    post.time_varying = {0, 1};
    p.spec.edges = {ill, death, post};
    p.spec.t_max = 5.0;
    p.spec.censor_rate = 0.2;
    p.n_subjects = 5000;
    p.seed = 202;
    return p;
  }
  if (name == "competing-risks-5000") {
    p.spec.topology = TransitionTopology::make(3, {{0, 1}, {0, 2}});
    p.spec.covariates = twelve_covariates();
    EdgeHazard a, b;
    a.shape = 1.4;
    a.scale = 2.9;
    a.beta = {0.7, -0.5, 0.4, 0.0, 0.3, -0.2, 0.5, 0.0, -0.4, 0.3, 0.2, -0.3};
    a.time_varying = {0, 1};
    b.shape = 1.2;
    b.scale = 3.6;
    b.beta = {-0.5, 0.6, 0.0, 0.4, -0.3, 0.2, 0.0, 0.5, 0.3, -0.2, -0.4, 0.2};
    b.time_varying = {0, 1};
    p.spec.edges = {a, b};
    p.spec.t_max = 5.0;
    p.spec.censor_rate = 0.3;
    p.n_subjects = 5000;
    p.seed = 303;
    return p;
  }
  if (name == "survival-3cov") {
    p.spec.topology = TransitionTopology::make(2, {{0, 1}});
    p.spec.covariates = {bern(0.5, "group"), unif(-1.0, 1.0, "score"), bern(0.3, "flag")};
    EdgeHazard e;
    e.shape = 1.4;
    e.scale = 2.0;
    e.beta = {1.2, 0.5, -0.4};
    p.spec.edges = {e};
    p.spec.t_max = 6.0;
    p.spec.censor_rate = 0.3;
    p.n_subjects = 5000;
    p.seed = 404;
    return p;
  }
  throw std::invalid_argument("unknown simulation preset: " + name);
}

// Deterministic shuffled split into train/validation/test fractions.
inline std::array<Dataset, 3> split_dataset(const Dataset& ds, double f_train, double f_valid,
                                            std::uint64_t seed) {
  if (f_train < 0.0 || f_valid < 0.0 || f_train + f_valid > 1.0)
    throw std::invalid_argument("split_dataset: fractions must be nonnegative and sum to at most 1");
  std::vector<int> order(ds.n_subjects());
  for (int i = 0; i < ds.n_subjects(); ++i) order[i] = i;
  Rng rng(splitmix64(seed ^ 0x73706c6974ULL));
  rng.shuffle(order);
  const int n = ds.n_subjects();
  const int n_train = static_cast<int>(std::lround(f_train * n));
  const int n_valid = static_cast<int>(std::lround(f_valid * n));
  std::array<Dataset, 3> out;
  for (auto& part : out) {
    part.topology = ds.topology;
    part.covariate_names = ds.covariate_names;
  }
  for (int i = 0; i < n; ++i) {
    const int which = i < n_train ? 0 : (i < n_train + n_valid ? 1 : 2);
    out[which].subjects.push_back(ds.subjects[order[i]]);
  }
  return out;
}

}  // namespace kolmo
