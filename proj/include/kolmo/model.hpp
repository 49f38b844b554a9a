#pragma once

// Neural parameterization of a time-inhomogeneous Markov jump process.
//
// The model couples three blocks per subject into one ODE state:
//   P(0,t)  forward transition-probability matrix   (S x S, row-major flat)
//   U(t) = P(t,0)  backward block, the inverse of P(0,t)  (S x S, flat)
//   m(t)    hidden memory coordinates                (M)
// with dynamics dP/dt = P Q(t), dU/dt = -Q(t) U, dm/dt given by the network.
// The generator Q(t) has softplus-positive off-diagonal entries on the
// topology's allowed transitions, diagonal minus the row sum. The dynamics
// network sees (t, P(0,t), m(t), x); an encoder network maps covariates to
// the initial memory m(0). P(s,t) for s > 0 is the composition U(s) P(0,t).
//
// Internally all times are scaled by time_factor so the training span maps
// to [0, time_scale]; covariates are z-scored with the stored statistics.
// Rates can be injected as constants, bypassing the networks, which gives
// closed-form oracles for tests.

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <vector>

#include "kolmo/autodiff.hpp"
#include "kolmo/mlp.hpp"
#include "kolmo/odeint.hpp"
#include "kolmo/rng.hpp"
#include "kolmo/statespace.hpp"

namespace kolmo {

struct KfeModel {
  TransitionTopology topo;
  int memory_dim = 0;
  int n_cov = 0;
  double time_scale = 1.0;   // scaled span target (hyperparameter S)
  double time_factor = 1.0;  // scaled time = raw time * time_factor
  NormalizationStats norm;
  ParamStore params;
  std::optional<Mlp> encoder;  // absent for injected-rate and latent models
  Mlp dynamics;
  std::optional<VectorXd> injected_rates;  // constant post-softplus rates, scaled time

  int n_states() const { return topo.n_states; }
  int q_count() const { return topo.q_count(); }
  int state_dim() const { return 2 * n_states() * n_states() + memory_dim; }
  int dyn_in() const { return 1 + n_states() * n_states() + memory_dim + n_cov; }
  int dyn_out() const { return q_count() + memory_dim; }

  static KfeModel create(const TransitionTopology& topo, int n_cov, int memory_dim, int enc_layers,
                         int enc_width, double enc_dropout, int dyn_layers, int dyn_width,
                         double time_scale, std::uint64_t seed) {
    KfeModel m;
    m.topo = topo;
    m.memory_dim = memory_dim;
    m.n_cov = n_cov;
    m.time_scale = time_scale;
    m.norm.mean.assign(n_cov, 0.0);
    m.norm.sd.assign(n_cov, 1.0);
    m.norm.constant.assign(n_cov, 0);
    Rng init(splitmix64(seed ^ 0x6b6f6c6d6fULL));
    if (memory_dim > 0 && enc_width > 0)
      m.encoder = Mlp::create(m.params, mlp_sizes(n_cov, enc_layers, enc_width, memory_dim), enc_dropout, init);
    m.dynamics = Mlp::create(m.params, mlp_sizes(m.dyn_in(), dyn_layers, dyn_width, m.dyn_out()), 0.0, init);
    return m;
  }

  // Constant-rate model: the generator is fixed, no networks are evaluated.
  static KfeModel with_constant_rates(const TransitionTopology& topo, VectorXd rates) {
    if (rates.size() != topo.q_count())
      throw std::invalid_argument("with_constant_rates: one rate per allowed transition required");
    if ((rates.array() < 0.0).any()) throw std::invalid_argument("with_constant_rates: rates must be nonnegative");
    KfeModel m;
    m.topo = topo;
    m.injected_rates = std::move(rates);
    return m;
  }

  VectorXd normalize(const VectorXd& raw_x) const {
    if (raw_x.size() != n_cov) throw std::invalid_argument("covariate dimension mismatch");
    VectorXd x(n_cov);
    for (int j = 0; j < n_cov; ++j) x[j] = (raw_x[j] - norm.mean[j]) / norm.sd[j];
    return x;
  }

  // Post-softplus transition rates (scaled time) at one point. pf is the
  // row-major flattened P(0,t); xn is already normalized.
  VectorXd rates_at(double t_scaled, const VectorXd& pf, const VectorXd& m, const VectorXd& xn) const {
    if (injected_rates) return *injected_rates;
    MatrixXd in(1, dyn_in());
    in(0, 0) = t_scaled;
    in.block(0, 1, 1, pf.size()) = pf.transpose();
    if (memory_dim > 0) in.block(0, 1 + pf.size(), 1, memory_dim) = m.transpose();
    if (n_cov > 0) in.block(0, 1 + pf.size() + memory_dim, 1, n_cov) = xn.transpose();
    MatrixXd out = dynamics.forward_plain(params, in);
    VectorXd r(q_count());
    for (int k = 0; k < q_count(); ++k) r[k] = stable_softplus(out(0, k));
    return r;
  }

  // Initial ODE state (P(0,0)=I, U(0)=I, m(0)). m0 overrides the encoder
  // output (latent models supply a sample here).
  VectorXd initial_state(const VectorXd& xn, const std::optional<VectorXd>& m0 = {}) const {
    const int S = n_states();
    VectorXd y = VectorXd::Zero(state_dim());
    for (int i = 0; i < S; ++i) {
      y[i * S + i] = 1.0;
      y[S * S + i * S + i] = 1.0;
    }
    if (memory_dim > 0) {
      VectorXd m;
      if (m0) {
        m = *m0;
      } else if (encoder) {
        m = encoder->forward_plain(params, xn.transpose()).row(0).transpose();
      } else {
        m = VectorXd::Zero(memory_dim);
      }
      y.segment(2 * S * S, memory_dim) = m;
    }
    return y;
  }

  // Right-hand side of the coupled forward/backward/memory system for one
  // subject, in scaled time. xn captured by value.
  OdeSystem ode_system(VectorXd xn, std::optional<VectorXd> /*unused*/ = {}) const {
    const int S = n_states();
    const int M = memory_dim;
    const KfeModel* self = this;
    OdeSystem sys;
    sys.dim = state_dim();
    sys.rhs = [self, S, M, xn = std::move(xn)](double t, const VectorXd& y, VectorXd& dy) {
      dy.resize(2 * S * S + M);
      MatrixXd Pf(S, S), U(S, S), Q(S, S);
      for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j) {
          Pf(i, j) = y[i * S + j];
          U(i, j) = y[S * S + i * S + j];
        }
      VectorXd rates;
      VectorXd dm = VectorXd::Zero(M);
      if (self->injected_rates) {
        rates = *self->injected_rates;
      } else {
        MatrixXd in(1, self->dyn_in());
        in(0, 0) = t;
        for (int k = 0; k < S * S; ++k) in(0, 1 + k) = y[k];
        for (int k = 0; k < M; ++k) in(0, 1 + S * S + k) = y[2 * S * S + k];
        for (int k = 0; k < self->n_cov; ++k) in(0, 1 + S * S + M + k) = xn[k];
        MatrixXd out = self->dynamics.forward_plain(self->params, in);
        rates.resize(self->q_count());
        for (int k = 0; k < self->q_count(); ++k) rates[k] = stable_softplus(out(0, k));
        for (int k = 0; k < M; ++k) dm[k] = out(0, self->q_count() + k);
      }
      Q.setZero();
      for (int k = 0; k < self->q_count(); ++k) {
        const auto [i, j] = self->topo.rate_index[k];
        Q(i, j) = rates[k];
        Q(i, i) -= rates[k];
      }
      MatrixXd dPf = Pf * Q;
      MatrixXd dU = -(Q * U);
      for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j) {
          dy[i * S + j] = dPf(i, j);
          dy[S * S + i * S + j] = dU(i, j);
        }
      dy.segment(2 * S * S, M) = dm;
    };
    return sys;
  }

  // P(s, t) for raw times 0 <= s, t. P(s,t) = U(s) P(0,t); P(0,t) comes from
  // one adaptive solve of the coupled system.
  MatrixXd transition_matrix(const VectorXd& raw_x, double s_raw, double t_raw,
                             const SolveConfig& cfg = {}) const {
    if (s_raw < 0.0 || t_raw < 0.0) throw std::invalid_argument("transition_matrix: negative time");
    const int S = n_states();
    const double ss = s_raw * time_factor, ts = t_raw * time_factor;
    const VectorXd xn = n_cov > 0 ? normalize(raw_x) : VectorXd();
    const double tmax = std::max(ss, ts);
    std::vector<double> save{std::min(ss, ts), tmax};
    SolveResult res = solve(ode_system(xn), initial_state(xn), 0.0, tmax, save, cfg);
    const VectorXd& ys = ss <= ts ? res.states[0] : res.states[1];
    const VectorXd& yt = ss <= ts ? res.states[1] : res.states[0];
    MatrixXd U(S, S), Pf(S, S);
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) {
        U(i, j) = ys[S * S + i * S + j];
        Pf(i, j) = yt[i * S + j];
      }
    return U * Pf;
  }

  // Occupation probabilities from a point-mass initial state: rows of P(0,t)
  // at the requested raw times.
  MatrixXd occupation_curve(const VectorXd& raw_x, int initial_state_ix, const std::vector<double>& times_raw,
                            const SolveConfig& cfg = {}) const {
    const int S = n_states();
    const VectorXd xn = n_cov > 0 ? normalize(raw_x) : VectorXd();
    std::vector<double> save;
    save.reserve(times_raw.size());
    for (double t : times_raw) save.push_back(t * time_factor);
    const double tmax = save.empty() ? 0.0 : save.back();
    SolveResult res = solve(ode_system(xn), initial_state(xn), 0.0, tmax, save, cfg);
    MatrixXd out(times_raw.size(), S);
    for (std::size_t k = 0; k < times_raw.size(); ++k)
      out.row(k) = res.states[k].segment(initial_state_ix * S, S).transpose();
    return out;
  }

  // Generator matrices (raw-time intensities) at the requested raw times.
  std::vector<MatrixXd> hazard_rates(const VectorXd& raw_x, const std::vector<double>& times_raw,
                                     const SolveConfig& cfg = {}) const {
    const int S = n_states();
    const VectorXd xn = n_cov > 0 ? normalize(raw_x) : VectorXd();
    std::vector<double> save;
    for (double t : times_raw) save.push_back(t * time_factor);
    const double tmax = save.empty() ? 0.0 : *std::max_element(save.begin(), save.end());
    for (std::size_t k = 1; k < save.size(); ++k)
      if (save[k] < save[k - 1]) throw std::invalid_argument("hazard_rates: times must be nondecreasing");
    SolveResult res = solve(ode_system(xn), initial_state(xn), 0.0, tmax, save, cfg);
    std::vector<MatrixXd> out;
    for (std::size_t k = 0; k < save.size(); ++k) {
      const VectorXd& y = res.states[k];
      VectorXd pf = y.head(S * S);
      VectorXd m = y.segment(2 * S * S, memory_dim);
      VectorXd r = rates_at(save[k], pf, m, xn);
      MatrixXd Q = MatrixXd::Zero(S, S);
      for (int e = 0; e < q_count(); ++e) {
        const auto [i, j] = topo.rate_index[e];
        Q(i, j) = r[e] * time_factor;
        Q(i, i) -= r[e] * time_factor;
      }
      out.push_back(std::move(Q));
    }
    return out;
  }
};

// Lockstep batch plan: all subjects in a batch advance together on a shared
// sequence of step indices. The j-th observation of every subject lands at
// the same global step (rows with fewer observations repeat their final time,
// giving zero-length padding steps), segment step budgets come from the
// batch-average segment length, and every row additionally integrates to the
// batch-maximum final time for the memory regularizer.
struct BatchPlan {
  int n = 0;
  int J = 0;  // max observation count in the batch
  double t_tail = 0.0;
  int total_steps = 0;
  std::vector<int> slot_step;  // global step index where observation slot j lands
  MatrixXd node_t;             // n x (total_steps + 1), per-row node times (scaled)

  struct PairIdx {
    std::vector<int> pcol;     // flat S*S column of the stay/jump probability
    std::vector<double> pmask;
    std::vector<int> lcol;     // rate column (edge index)
    std::vector<double> lmask;
  };
  std::vector<PairIdx> pairs;  // J-1 entries; pairs[p-1] covers slot p-1 -> slot p

  double h(int row, int step) const { return node_t(row, step + 1) - node_t(row, step); }
};

inline BatchPlan make_batch_plan(const TransitionTopology& topo, const std::vector<const SubjectRecord*>& subs,
                                 double time_factor, double steps_per_unit) {
  BatchPlan plan;
  const int n = static_cast<int>(subs.size());
  plan.n = n;
  for (const auto* s : subs) plan.J = std::max(plan.J, s->n_obs());
  const int J = plan.J;
  MatrixXd slot_t(n, J);
  for (int b = 0; b < n; ++b) {
    const auto& obs = subs[b]->observations;
    for (int j = 0; j < J; ++j) {
      const int jj = std::min<int>(j, subs[b]->n_obs() - 1);
      slot_t(b, j) = obs[jj].time * time_factor;
    }
    plan.t_tail = std::max(plan.t_tail, slot_t(b, J - 1));
  }

  // Segment g spans slot g-1 -> slot g, with g = 0 the span 0 -> slot 0 and
  // g = J the span slot J-1 -> batch tail.
  std::vector<double> avg_len(J + 1, 0.0);
  for (int b = 0; b < n; ++b) {
    avg_len[0] += slot_t(b, 0);
    for (int g = 1; g < J; ++g) avg_len[g] += slot_t(b, g) - slot_t(b, g - 1);
    avg_len[J] += plan.t_tail - slot_t(b, J - 1);
  }
  std::vector<int> seg_steps(J + 1);
  int total = 0;
  for (int g = 0; g <= J; ++g) {
    avg_len[g] /= n;
    seg_steps[g] = avg_len[g] <= 0.0 ? 0 : std::max(1, static_cast<int>(std::lround(avg_len[g] * steps_per_unit)));
    total += seg_steps[g];
  }
  plan.total_steps = total;
  plan.slot_step.resize(J);
  int at = 0;
  for (int g = 0; g < J; ++g) {
    at += seg_steps[g];
    plan.slot_step[g] = at;
  }

  // Node times: per row, each segment is split uniformly into its step
  // budget; the segment endpoint is written exactly so observation slots are
  // exact grid nodes. Rows whose segment is shorter than the batch average
  // get smaller (possibly zero) step sizes, never skipped nodes.
  plan.node_t.resize(n, total + 1);
  for (int b = 0; b < n; ++b) {
    plan.node_t(b, 0) = 0.0;
    int col = 0;
    double start = 0.0;
    for (int g = 0; g <= J; ++g) {
      const double end = g < J ? slot_t(b, g) : plan.t_tail;
      const int ns = seg_steps[g];
      for (int k = 1; k <= ns; ++k)
        plan.node_t(b, col + k) = k == ns ? end : start + (end - start) * (static_cast<double>(k) / ns);
      col += ns;
      start = end;
    }
  }

  // Likelihood assembly indices.
  const int S = topo.n_states;
  plan.pairs.resize(std::max(0, J - 1));
  for (int p = 1; p < J; ++p) {
    auto& pi = plan.pairs[p - 1];
    pi.pcol.assign(n, 0);
    pi.pmask.assign(n, 0.0);
    pi.lcol.assign(n, 0);
    pi.lmask.assign(n, 0.0);
    for (int b = 0; b < n; ++b) {
      const auto* s = subs[b];
      if (p >= s->n_obs()) continue;  // padded slot
      const auto& prev = s->observations[p - 1];
      const auto& cur = s->observations[p];
      pi.pmask[b] = 1.0;
      const int target = cur.kind == ObsKind::Interval ? cur.state : prev.state;
      pi.pcol[b] = prev.state * S + target;
      const bool is_final = (p == s->n_obs() - 1);
      if (cur.kind == ObsKind::Exact && (!is_final || s->event_observed)) {
        const int e = topo.edge_id(prev.state, cur.state);
        if (e < 0) throw std::invalid_argument("batch plan: transition not allowed by topology");
        pi.lcol[b] = e;
        pi.lmask[b] = 1.0;
      }
    }
  }
  return plan;
}

// Batched fixed-grid RK4 over a plan without a tape. Returns the full ODE
// state of every row at each observation slot plus the batch tail.
struct BatchStates {
  std::vector<MatrixXd> slot;  // J entries, each n x state_dim
  MatrixXd tail;               // n x state_dim
};

namespace detail {

// One batched right-hand-side evaluation. Y is n x state_dim; t varies per
// row. Returns dY and optionally the post-softplus rates (n x q).
inline void batch_rhs(const KfeModel& model, const MatrixXd& Xn, const VectorXd& t, const MatrixXd& Y,
                      MatrixXd& dY, MatrixXd* rates_out = nullptr) {
  const int S = model.n_states();
  const int M = model.memory_dim;
  const int q = model.q_count();
  const int n = static_cast<int>(Y.rows());
  MatrixXd rates(n, q);
  dY.setZero(n, Y.cols());
  if (model.injected_rates) {
    rates = model.injected_rates->transpose().replicate(n, 1);
  } else {
    MatrixXd in(n, model.dyn_in());
    in.col(0) = t;
    in.middleCols(1, S * S) = Y.leftCols(S * S);
    if (M > 0) in.middleCols(1 + S * S, M) = Y.middleCols(2 * S * S, M);
    if (model.n_cov > 0) in.middleCols(1 + S * S + M, model.n_cov) = Xn;
    MatrixXd out = model.dynamics.forward_plain(model.params, in);
    rates = out.leftCols(q).unaryExpr([](double v) { return stable_softplus(v); });
    if (M > 0) dY.middleCols(2 * S * S, M) = out.middleCols(q, M);
  }
  MatrixXd Pf(S, S), U(S, S), Q(S, S), T(S, S);
  for (int b = 0; b < n; ++b) {
    Tape::row_to_mat(Y, b, S, Pf);
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) U(i, j) = Y(b, S * S + i * S + j);
    Tape::build_generator(model.topo, rates, b, Q);
    T.noalias() = Pf * Q;
    Tape::mat_to_row(T, b, S, dY);
    T.noalias() = -(Q * U);
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) dY(b, S * S + i * S + j) = T(i, j);
  }
  if (rates_out) *rates_out = std::move(rates);
}

}  // namespace detail

inline BatchStates batch_solve_plain(const KfeModel& model, const MatrixXd& Xn, const BatchPlan& plan,
                                     const std::optional<MatrixXd>& m0 = {}) {
  const int n = plan.n;
  const int dim = model.state_dim();
  const int S = model.n_states();
  MatrixXd Y(n, dim);
  Y.setZero();
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < S; ++i) {
      Y(b, i * S + i) = 1.0;
      Y(b, S * S + i * S + i) = 1.0;
    }
  if (model.memory_dim > 0) {
    if (m0) {
      Y.middleCols(2 * S * S, model.memory_dim) = *m0;
    } else if (model.encoder) {
      Y.middleCols(2 * S * S, model.memory_dim) = model.encoder->forward_plain(model.params, Xn);
    }
  }
  BatchStates out;
  out.slot.resize(plan.J);
  MatrixXd k1, k2, k3, k4, tmp, dY;
  auto record = [&](int step) {
    for (int j = 0; j < plan.J; ++j)
      if (plan.slot_step[j] == step) out.slot[j] = Y;
  };
  record(0);
  for (int step = 0; step < plan.total_steps; ++step) {
    const VectorXd t0 = plan.node_t.col(step);
    const VectorXd h = plan.node_t.col(step + 1) - plan.node_t.col(step);
    detail::batch_rhs(model, Xn, t0, Y, k1);
    tmp = Y + 0.5 * (h.asDiagonal() * k1);
    detail::batch_rhs(model, Xn, t0 + 0.5 * h, tmp, k2);
    tmp = Y + 0.5 * (h.asDiagonal() * k2);
    detail::batch_rhs(model, Xn, t0 + 0.5 * h, tmp, k3);
    tmp = Y + h.asDiagonal() * k3;
    detail::batch_rhs(model, Xn, t0 + h, tmp, k4);
    Y += (1.0 / 6.0) * (h.asDiagonal() * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    record(step + 1);
  }
  out.tail = Y;
  return out;
}

// Occupation curves for many subjects on one shared raw-time grid, solved as
// a single batched fixed-grid pass. Rows of raw_X are unnormalized covariate
// vectors. Returns one times x states matrix per subject.
inline std::vector<MatrixXd> batch_occupation(const KfeModel& model, const MatrixXd& raw_X,
                                              const std::vector<int>& initial_state,
                                              const std::vector<double>& times_raw,
                                              double steps_per_unit = 64.0,
                                              const std::optional<MatrixXd>& m0 = {}) {
  const int n = static_cast<int>(raw_X.rows());
  const int S = model.n_states();
  const int T = static_cast<int>(times_raw.size());
  if (static_cast<int>(initial_state.size()) != n)
    throw std::invalid_argument("batch_occupation: one initial state per subject");
  for (int k = 1; k < T; ++k)
    if (times_raw[k] < times_raw[k - 1]) throw std::invalid_argument("batch_occupation: times must ascend");
  if (T > 0 && times_raw[0] < 0.0) throw std::invalid_argument("batch_occupation: negative time");

  MatrixXd Xn(n, model.n_cov);
  for (int b = 0; b < n; ++b)
    if (model.n_cov > 0) Xn.row(b) = model.normalize(raw_X.row(b).transpose()).transpose();

  MatrixXd Y = MatrixXd::Zero(n, model.state_dim());
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < S; ++i) {
      Y(b, i * S + i) = 1.0;
      Y(b, S * S + i * S + i) = 1.0;
    }
  if (model.memory_dim > 0) {
    if (m0) {
      Y.middleCols(2 * S * S, model.memory_dim) = *m0;
    } else if (model.encoder) {
      Y.middleCols(2 * S * S, model.memory_dim) = model.encoder->forward_plain(model.params, Xn);
    }
  }

  std::vector<MatrixXd> out(n, MatrixXd(T, S));
  MatrixXd k1, k2, k3, k4, tmp;
  double t = 0.0;
  auto record = [&](int slot) {
    for (int b = 0; b < n; ++b)
      for (int j = 0; j < S; ++j) out[b](slot, j) = Y(b, initial_state[b] * S + j);
  };
  for (int slot = 0; slot < T; ++slot) {
    const double target = times_raw[slot] * model.time_factor;
    const int steps = std::max(1, static_cast<int>(std::ceil((target - t) * steps_per_unit)));
    if (target > t) {
      const double h = (target - t) / steps;
      for (int s = 0; s < steps; ++s) {
        const VectorXd t0 = VectorXd::Constant(n, t);
        const VectorXd th = VectorXd::Constant(n, t + 0.5 * h);
        const VectorXd t1 = VectorXd::Constant(n, t + h);
        detail::batch_rhs(model, Xn, t0, Y, k1);
        tmp = Y + 0.5 * h * k1;
        detail::batch_rhs(model, Xn, th, tmp, k2);
        tmp = Y + 0.5 * h * k2;
        detail::batch_rhs(model, Xn, th, tmp, k3);
        tmp = Y + h * k3;
        detail::batch_rhs(model, Xn, t1, tmp, k4);
        Y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
      }
      t = target;
    }
    record(slot);
  }
  return out;
}

// Public batched solve: states of each subject at its own observation times.
// Matches a per-subject fixed-grid solve on the same plan grid exactly.
inline std::vector<std::vector<VectorXd>> batch_solve(const KfeModel& model,
                                                      const std::vector<const SubjectRecord*>& subs,
                                                      double steps_per_unit = 64.0) {
  BatchPlan plan = make_batch_plan(model.topo, subs, model.time_factor, steps_per_unit);
  MatrixXd Xn(plan.n, model.n_cov);
  for (int b = 0; b < plan.n; ++b)
    if (model.n_cov > 0)
      Xn.row(b) = model.normalize(Eigen::Map<const VectorXd>(subs[b]->covariates.data(), model.n_cov)).transpose();
  BatchStates st = batch_solve_plain(model, Xn, plan);
  std::vector<std::vector<VectorXd>> out(plan.n);
  for (int b = 0; b < plan.n; ++b)
    for (int j = 0; j < subs[b]->n_obs(); ++j) out[b].push_back(st.slot[j].row(b).transpose());
  return out;
}

}  // namespace kolmo
