#pragma once

// Censoring-aware likelihood for multi-state event histories and the
// training loop.
//
// A subject observed in states y_1..y_m at times t_1..t_m contributes, per
// interval (t_{j-1}, t_j]:
//   exact transition    log P_{y y}(t_{j-1}, t_j) + log lambda_{y y'}(t_j)
//   interval censored   log P_{y y'}(t_{j-1}, t_j)
//   final interval      log P_{y y}(t_{m-1}, t_m) + delta log lambda(t_m)
// where P(s,t) = U(s) P(0,t). The first observation only conditions the
// process (left truncation), so a record with a single observation has zero
// negative log likelihood. The total training loss is the batch NLL sum plus
// mu times the memory regularizer (squared memory at the batch-maximum time,
// averaged over coordinates and subjects).
//
// All likelihood arithmetic runs in scaled time; this shifts each observed
// transition's hazard factor by the constant log(time_factor) relative to a
// raw-time density, which no comparison made here depends on. Probabilities
// entering a log are floored at 1e-12 and the floor activations are counted.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "kolmo/adam.hpp"
#include "kolmo/autodiff.hpp"
#include "kolmo/model.hpp"
#include "kolmo/odeint.hpp"
#include "kolmo/rng.hpp"
#include "kolmo/statespace.hpp"

namespace kolmo {

constexpr double kLogFloor = 1e-12;

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossBreakdown {
  double nll = 0.0;       // sum over the batch
  double lyapunov = 0.0;  // per-subject mean of the memory penalty
  double kl = 0.0;        // latent models only
  double total = 0.0;
  VectorXd per_subject;
  long clamp_count = 0;
};

// Memory regularizer from end-of-span memory rows: mean over subjects of
// (1/M) * ||m_b||^2.
inline double lyapunov_loss(const MatrixXd& m_tail) {
  if (m_tail.size() == 0) return 0.0;
  return m_tail.array().square().sum() / (static_cast<double>(m_tail.rows()) * m_tail.cols());
}

namespace detail {

// Post-softplus rates for a batch of slot states.
inline MatrixXd batch_rates(const KfeModel& model, const MatrixXd& Xn, const VectorXd& t, const MatrixXd& Pf,
                            const MatrixXd& m) {
  const int n = static_cast<int>(Pf.rows());
  if (model.injected_rates) return model.injected_rates->transpose().replicate(n, 1);
  MatrixXd in(n, model.dyn_in());
  in.col(0) = t;
  in.middleCols(1, Pf.cols()) = Pf;
  if (model.memory_dim > 0) in.middleCols(1 + Pf.cols(), model.memory_dim) = m;
  if (model.n_cov > 0) in.middleCols(1 + Pf.cols() + model.memory_dim, model.n_cov) = Xn;
  MatrixXd out = model.dynamics.forward_plain(model.params, in);
  return out.leftCols(model.q_count()).unaryExpr([](double v) { return stable_softplus(v); });
}

inline double log_floor(double v, long& clamps) {
  if (v < kLogFloor) {
    ++clamps;
    return std::log(kLogFloor);
  }
  return std::log(v);
}

}  // namespace detail

// Negative log likelihood of one subject from an adaptive solve of the
// coupled system at the subject's observation times.
inline double subject_nll(const KfeModel& model, const SubjectRecord& sub, const SolveConfig& cfg = {},
                          long* clamp_count = nullptr, const std::optional<VectorXd>& m0 = {}) {
  long clamps = 0;
  const int m = sub.n_obs();
  if (m <= 1) {
    if (clamp_count) *clamp_count = 0;
    return 0.0;
  }
  const int S = model.n_states();
  const VectorXd xn = model.n_cov > 0
                          ? model.normalize(Eigen::Map<const VectorXd>(sub.covariates.data(), model.n_cov))
                          : VectorXd();
  std::vector<double> save;
  for (const auto& o : sub.observations) save.push_back(o.time * model.time_factor);
  SolveResult res = solve(model.ode_system(xn), model.initial_state(xn, m0), 0.0, save.back(), save, cfg);
  double nll = 0.0;
  MatrixXd U(S, S), Pf(S, S);
  for (int k = 1; k < m; ++k) {
    const auto& prev = sub.observations[k - 1];
    const auto& cur = sub.observations[k];
    const VectorXd& ys = res.states[k - 1];
    const VectorXd& yt = res.states[k];
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) {
        U(i, j) = ys[S * S + i * S + j];
        Pf(i, j) = yt[i * S + j];
      }
    const int target = cur.kind == ObsKind::Interval ? cur.state : prev.state;
    const double p = U.row(prev.state) * Pf.col(target);
    nll -= detail::log_floor(p, clamps);
    const bool is_final = (k == m - 1);
    if (cur.kind == ObsKind::Exact && (!is_final || sub.event_observed)) {
      VectorXd pf_flat = yt.head(S * S);
      VectorXd mem = model.memory_dim > 0 ? VectorXd(yt.segment(2 * S * S, model.memory_dim)) : VectorXd();
      VectorXd rates = model.rates_at(save[k], pf_flat, mem, xn);
      const int e = model.topo.edge_id(prev.state, cur.state);
      if (e < 0) throw std::invalid_argument("subject_nll: transition not allowed by topology");
      nll -= detail::log_floor(rates[e], clamps);
    }
  }
  if (clamp_count) *clamp_count = clamps;
  return nll;
}

// Per-subject NLL of a batch from plan slot states (no tape). Used for
// validation scoring and finite-difference oracles.
inline VectorXd assemble_nll_plain(const KfeModel& model, const MatrixXd& Xn, const BatchPlan& plan,
                                   const BatchStates& st, long* clamp_count = nullptr) {
  const int S = model.n_states();
  const int n = plan.n;
  long clamps = 0;
  VectorXd nll = VectorXd::Zero(n);
  MatrixXd U(S, S), Pf(S, S);
  for (int p = 1; p < plan.J; ++p) {
    const auto& pi = plan.pairs[p - 1];
    const MatrixXd& prev_state = st.slot[p - 1];
    const MatrixXd& cur_state = st.slot[p];
    const bool any_rate = std::any_of(pi.lmask.begin(), pi.lmask.end(), [](double v) { return v > 0.0; });
    MatrixXd rates;
    if (any_rate) {
      rates = detail::batch_rates(model, Xn, plan.node_t.col(plan.slot_step[p]), cur_state.leftCols(S * S),
                                  model.memory_dim > 0 ? MatrixXd(cur_state.middleCols(2 * S * S, model.memory_dim))
                                                       : MatrixXd(n, 0));
    }
    for (int b = 0; b < n; ++b) {
      if (pi.pmask[b] == 0.0) continue;
      Tape::row_to_mat(cur_state, b, S, Pf);
      for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j) U(i, j) = prev_state(b, S * S + i * S + j);
      const int from = pi.pcol[b] / S, to = pi.pcol[b] % S;
      const double pr = U.row(from) * Pf.col(to);
      nll[b] -= detail::log_floor(pr, clamps);
      if (pi.lmask[b] > 0.0) nll[b] -= detail::log_floor(rates(b, pi.lcol[b]), clamps);
    }
  }
  if (clamp_count) *clamp_count += clamps;
  return nll;
}

// Taped training loss over one batch. m0_var, when given, replaces the
// encoder output as the initial memory (latent models build their sample on
// the same tape first). Returns the scalar loss Var; the breakdown carries
// values only.
struct TapedLoss {
  Var loss;
  LossBreakdown breakdown;
};

inline TapedLoss build_batch_loss(Tape& tape, const KfeModel& model, const MatrixXd& Xn, const BatchPlan& plan,
                                  double mu, Rng* dropout_rng, std::optional<Var> m0_var = {}) {
  const int S = model.n_states();
  const int M = model.memory_dim;
  const int q = model.q_count();
  const int n = plan.n;

  Mlp::Bound dyn_bd = model.dynamics.bind(tape);
  Var xn_var = tape.input(Xn);

  MatrixXd eye_rows(n, S * S);
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) eye_rows(b, i * S + j) = i == j ? 1.0 : 0.0;
  Var Pf = tape.input(eye_rows);
  Var U = tape.input(eye_rows);
  Var m{-1};
  if (M > 0) {
    if (m0_var) {
      m = *m0_var;
    } else if (model.encoder) {
      Mlp::Bound enc_bd = model.encoder->bind(tape);
      m = model.encoder->forward(tape, enc_bd, xn_var, dropout_rng);
    } else {
      m = tape.input(MatrixXd::Zero(n, M));
    }
  }

  struct Blocks {
    Var pf, u, m;
  };
  auto rhs = [&](const VectorXd& t, const Blocks& y) -> Blocks {
    std::vector<Var> parts;
    parts.push_back(tape.input(t));
    parts.push_back(y.pf);
    if (M > 0) parts.push_back(y.m);
    if (model.n_cov > 0) parts.push_back(xn_var);
    Var out = model.dynamics.forward(tape, dyn_bd, tape.concat_cols(parts));
    Var rates = tape.softplus(tape.slice_cols(out, 0, q));
    Blocks d;
    d.pf = tape.bmm_q_right(y.pf, rates, model.topo);
    d.u = tape.bmm_q_left(y.u, rates, model.topo);
    if (M > 0) d.m = tape.slice_cols(out, q, M);
    return d;
  };
  auto axpy = [&](Var y, Var k, const VectorXd& coef) { return tape.add(y, tape.row_scale(k, coef)); };
  auto combine = [&](const Blocks& y, const Blocks& k, const VectorXd& coef) {
    Blocks r;
    r.pf = axpy(y.pf, k.pf, coef);
    r.u = axpy(y.u, k.u, coef);
    if (M > 0) r.m = axpy(y.m, k.m, coef);
    return r;
  };

  std::vector<Blocks> slot_state(plan.J);
  Blocks Y{Pf, U, m};
  auto record = [&](int step) {
    for (int j = 0; j < plan.J; ++j)
      if (plan.slot_step[j] == step) slot_state[j] = Y;
  };
  record(0);
  for (int step = 0; step < plan.total_steps; ++step) {
    const VectorXd t0 = plan.node_t.col(step);
    const VectorXd h = plan.node_t.col(step + 1) - plan.node_t.col(step);
    const VectorXd h2 = 0.5 * h, h6 = h / 6.0, h3 = h / 3.0;
    Blocks k1 = rhs(t0, Y);
    Blocks k2 = rhs(t0 + h2, combine(Y, k1, h2));
    Blocks k3 = rhs(t0 + h2, combine(Y, k2, h2));
    Blocks k4 = rhs(t0 + h, combine(Y, k3, h));
    Blocks Yn = combine(Y, k1, h6);
    Yn = combine(Yn, k2, h3);
    Yn = combine(Yn, k3, h3);
    Yn = combine(Yn, k4, h6);
    Y = Yn;
    record(step + 1);
  }

  VectorXd per_subject = VectorXd::Zero(n);
  Var nll_sum{-1};
  const long clamps_before = tape.clamp_count;
  for (int p = 1; p < plan.J; ++p) {
    const auto& pi = plan.pairs[p - 1];
    Var pair = tape.bmm_pair(slot_state[p - 1].u, slot_state[p].pf, model.topo);
    Var logp = tape.log_clamp(tape.gather_cols(pair, pi.pcol), kLogFloor);
    Var masked = tape.cmul_const(logp, Eigen::Map<const VectorXd>(pi.pmask.data(), n));
    per_subject -= tape.val(masked).col(0);
    nll_sum = nll_sum.valid() ? tape.add(nll_sum, tape.sum_all(masked)) : tape.sum_all(masked);
    if (std::any_of(pi.lmask.begin(), pi.lmask.end(), [](double v) { return v > 0.0; })) {
      std::vector<Var> parts;
      parts.push_back(tape.input(plan.node_t.col(plan.slot_step[p])));
      parts.push_back(slot_state[p].pf);
      if (M > 0) parts.push_back(slot_state[p].m);
      if (model.n_cov > 0) parts.push_back(xn_var);
      Var out = model.dynamics.forward(tape, dyn_bd, tape.concat_cols(parts));
      Var rates = tape.softplus(tape.slice_cols(out, 0, q));
      Var logl = tape.log_clamp(tape.gather_cols(rates, pi.lcol), kLogFloor);
      Var lmasked = tape.cmul_const(logl, Eigen::Map<const VectorXd>(pi.lmask.data(), n));
      per_subject -= tape.val(lmasked).col(0);
      nll_sum = tape.add(nll_sum, tape.sum_all(lmasked));
    }
  }

  TapedLoss out;
  out.breakdown.clamp_count = tape.clamp_count - clamps_before;
  Var nll = nll_sum.valid() ? tape.scale(nll_sum, -1.0) : tape.input(MatrixXd::Zero(1, 1));
  out.breakdown.per_subject = per_subject;
  out.breakdown.nll = tape.val(nll)(0, 0);
  Var loss = nll;
  if (M > 0) {
    Var lyap = tape.scale(tape.sum_all(tape.square(Y.m)), 1.0 / (static_cast<double>(M) * n));
    out.breakdown.lyapunov = tape.val(lyap)(0, 0);
    if (mu != 0.0) loss = tape.add(loss, tape.scale(lyap, mu));
  }
  out.breakdown.total = out.breakdown.nll + mu * out.breakdown.lyapunov;
  out.loss = loss;
  return out;
}

struct TrainConfig {
  int enc_layers = 2;
  int enc_width = 800;
  double enc_dropout = 0.0;
  int dyn_layers = 3;
  int dyn_width = 1000;
  int memory_dim = 20;
  double mu = 1e-4;
  double time_scale = 1.0;
  double lr = 1e-4;
  double weight_decay = 1e-7;
  int batch_size = 512;
  int max_epochs = 200;
  int patience = 10;
  double rk4_steps_per_unit = 64.0;
  std::uint64_t seed = 1;
  int threads = 1;
};

struct EpochRow {
  int epoch = 0;
  double train_nll = 0.0;  // per-subject mean of the training objective
  double valid_nll = 0.0;
  double lyapunov = 0.0;
  double kl = 0.0;  // latent models only
  double total = 0.0;
  long clamp_count = 0;
  double seconds = 0.0;
};

struct FitResult {
  std::vector<EpochRow> history;
  int best_epoch = -1;
  double best_valid_nll = 0.0;
};

namespace detail {

inline MatrixXd normalized_matrix(const KfeModel& model, const Dataset& ds, const std::vector<int>& rows) {
  MatrixXd Xn(rows.size(), model.n_cov);
  for (std::size_t b = 0; b < rows.size(); ++b)
    if (model.n_cov > 0)
      Xn.row(b) =
          model.normalize(Eigen::Map<const VectorXd>(ds.subjects[rows[b]].covariates.data(), model.n_cov))
              .transpose();
  return Xn;
}

inline double dataset_mean_nll(const KfeModel& model, const Dataset& ds, int batch_size, double steps_per_unit,
                               long* clamps = nullptr) {
  if (ds.subjects.empty()) return 0.0;
  double total = 0.0;
  const int n = ds.n_subjects();
  for (int at = 0; at < n; at += batch_size) {
    const int bn = std::min(batch_size, n - at);
    std::vector<const SubjectRecord*> ptrs(bn);
    std::vector<int> rows(bn);
    for (int b = 0; b < bn; ++b) {
      ptrs[b] = &ds.subjects[at + b];
      rows[b] = at + b;
    }
    BatchPlan plan = make_batch_plan(model.topo, ptrs, model.time_factor, steps_per_unit);
    MatrixXd Xn = normalized_matrix(model, ds, rows);
    BatchStates st = batch_solve_plain(model, Xn, plan);
    total += assemble_nll_plain(model, Xn, plan, st, clamps).sum();
  }
  return total / n;
}

}  // namespace detail

// Mini-batch Adam training with early stopping on validation NLL. The model's
// normalization statistics and time factor are fitted on the training split.
// Throws NumericalFailure if more than half the batches of an epoch produce a
// non-finite gradient.
inline FitResult fit(KfeModel& model, const Dataset& train_raw, const Dataset& valid_raw,
                     const TrainConfig& cfg) {
  Dataset train = train_raw;
  Dataset valid = valid_raw;
  model.norm = normalize_covariates(train);
  normalize_covariates(valid, model.norm);
  // Covariates are now pre-normalized; neutralize the model-side transform
  // while building matrices below by passing them through unchanged.
  double tmax = 0.0;
  for (const auto& s : train.subjects) tmax = std::max(tmax, s.final_time());
  model.time_factor = tmax > 0.0 ? model.time_scale / tmax : 1.0;

  NormalizationStats identity;
  identity.mean.assign(model.n_cov, 0.0);
  identity.sd.assign(model.n_cov, 1.0);
  identity.constant.assign(model.n_cov, 0);
  NormalizationStats fitted = model.norm;
  model.norm = identity;

  Rng rng(splitmix64(cfg.seed ^ 0x747261696eULL));
  AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};

  FitResult res;
  std::vector<double> best_params;
  double best_valid = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<int> order(train.n_subjects());
  for (int i = 0; i < train.n_subjects(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    Rng erng = rng.split(epoch);
    erng.shuffle(order);
    double epoch_nll = 0.0, epoch_lyap = 0.0;
    long epoch_clamps = 0;
    int n_batches = 0, n_failed = 0, lyap_batches = 0;
    for (int at = 0; at < train.n_subjects(); at += cfg.batch_size) {
      const int bn = std::min(cfg.batch_size, train.n_subjects() - at);
      std::vector<const SubjectRecord*> ptrs(bn);
      std::vector<int> rows(bn);
      for (int b = 0; b < bn; ++b) {
        rows[b] = order[at + b];
        ptrs[b] = &train.subjects[rows[b]];
      }
      BatchPlan plan = make_batch_plan(model.topo, ptrs, model.time_factor, cfg.rk4_steps_per_unit);
      MatrixXd Xn = detail::normalized_matrix(model, train, rows);
      Tape tape(&model.params);
      Rng drng = erng.split(0x64726f70ULL + n_batches);
      TapedLoss tl = build_batch_loss(tape, model, Xn, plan, cfg.mu,
                                      model.encoder && model.encoder->dropout > 0.0 ? &drng : nullptr);
      ++n_batches;
      if (!std::isfinite(tl.breakdown.total)) {
        ++n_failed;
        continue;
      }
      model.params.zero_grad();
      tape.backward(tl.loss, 1.0);
      if (!adam_step(model.params, adam)) ++n_failed;
      epoch_nll += tl.breakdown.nll;
      epoch_lyap += tl.breakdown.lyapunov;
      ++lyap_batches;
      epoch_clamps += tl.breakdown.clamp_count;
    }
    if (n_failed * 2 > n_batches)
      throw NumericalFailure("training aborted: most batches produced non-finite losses or gradients");

    EpochRow row;
    row.epoch = epoch;
    row.train_nll = epoch_nll / train.n_subjects();
    row.lyapunov = lyap_batches > 0 ? epoch_lyap / lyap_batches : 0.0;
    row.total = row.train_nll + cfg.mu * row.lyapunov;
    row.clamp_count = epoch_clamps;
    row.valid_nll = valid.n_subjects() > 0
                        ? detail::dataset_mean_nll(model, valid, cfg.batch_size, cfg.rk4_steps_per_unit)
                        : row.train_nll;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    res.history.push_back(row);

    if (std::isfinite(row.valid_nll) && row.valid_nll < best_valid - 1e-12) {
      best_valid = row.valid_nll;
      best_params = model.params.value;
      res.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= cfg.patience) break;
    }
  }
  if (!best_params.empty()) model.params.value = best_params;
  res.best_valid_nll = best_valid;
  model.norm = fitted;
  return res;
}

}  // namespace kolmo
