#pragma once

// Variational latent extension.
//
// The deterministic encoder is replaced by a latent variable z that seeds the
// memory coordinates: a prior network maps covariates to p(z|x) and a
// posterior network maps (covariates, scaled final time) to q(z|t,x), both
// diagonal Gaussians with log-variances clamped to [-10, 10]. Training
// maximizes the single-sample ELBO
//   E_q[log likelihood(z)] - beta * KL(q || p)
// via the reparameterization z = mean + exp(log_var / 2) * eps. Prediction
// samples z from the prior and summarizes the resulting occupation curves by
// their pointwise mean and empirical quantile bands.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "kolmo/kmeans.hpp"
#include "kolmo/likelihood.hpp"
#include "kolmo/model.hpp"
#include "kolmo/nonparam.hpp"
#include "kolmo/parallel.hpp"
#include "kolmo/rng.hpp"

namespace kolmo {

constexpr double kLogVarClamp = 10.0;

struct LatentGaussian {
  VectorXd mean;
  VectorXd log_var;
};

// KL(q || p) between diagonal Gaussians.
inline double kl_diag_gauss(const LatentGaussian& q, const LatentGaussian& p) {
  if (q.mean.size() != p.mean.size()) throw std::invalid_argument("kl_diag_gauss: dimension mismatch");
  double kl = 0.0;
  for (int i = 0; i < q.mean.size(); ++i) {
    const double d = q.mean[i] - p.mean[i];
    kl += std::exp(q.log_var[i] - p.log_var[i]) + d * d * std::exp(-p.log_var[i]) - 1.0 + p.log_var[i] -
          q.log_var[i];
  }
  return 0.5 * kl;
}

struct VariationalModel {
  KfeModel core;  // encoder unset; the memory block carries the latent state
  Mlp prior;      // covariates -> (mean, log_var)
  Mlp posterior;  // (covariates, scaled final time) -> (mean, log_var)
  double beta = 1.0;

  int latent_dim() const { return core.memory_dim; }

  static VariationalModel create(const TransitionTopology& topo, int n_cov, int latent_dim, int enc_layers,
                                 int enc_width, double enc_dropout, int dyn_layers, int dyn_width,
                                 double time_scale, double beta, std::uint64_t seed) {
    return create(topo, n_cov, latent_dim, enc_layers, enc_width, enc_layers, enc_width, enc_dropout,
                  dyn_layers, dyn_width, time_scale, beta, seed);
  }

  // Prior and posterior networks sized independently.
  static VariationalModel create(const TransitionTopology& topo, int n_cov, int latent_dim, int prior_layers,
                                 int prior_width, int post_layers, int post_width, double net_dropout,
                                 int dyn_layers, int dyn_width, double time_scale, double beta,
                                 std::uint64_t seed) {
    VariationalModel m;
    m.core = KfeModel::create(topo, n_cov, latent_dim, 0, 0, 0.0, dyn_layers, dyn_width, time_scale, seed);
    m.beta = beta;
    Rng init(splitmix64(seed ^ 0x766172ULL));
    m.prior =
        Mlp::create(m.core.params, mlp_sizes(n_cov, prior_layers, prior_width, 2 * latent_dim), net_dropout, init);
    m.posterior = Mlp::create(m.core.params, mlp_sizes(n_cov + 1, post_layers, post_width, 2 * latent_dim),
                              net_dropout, init);
    return m;
  }

  LatentGaussian gaussian_from(const MatrixXd& net_out, int row) const {
    const int M = latent_dim();
    LatentGaussian g;
    g.mean = net_out.row(row).head(M).transpose();
    g.log_var = net_out.row(row).tail(M).transpose().cwiseMax(-kLogVarClamp).cwiseMin(kLogVarClamp);
    return g;
  }

  LatentGaussian prior_of(const VectorXd& raw_x) const {
    MatrixXd in(1, core.n_cov);
    if (core.n_cov > 0) in.row(0) = core.normalize(raw_x).transpose();
    return gaussian_from(prior.forward_plain(core.params, in), 0);
  }

  LatentGaussian posterior_of(const VectorXd& raw_x, double final_time_raw) const {
    MatrixXd in(1, core.n_cov + 1);
    if (core.n_cov > 0) in.row(0).head(core.n_cov) = core.normalize(raw_x).transpose();
    in(0, core.n_cov) = final_time_raw * core.time_factor;
    return gaussian_from(posterior.forward_plain(core.params, in), 0);
  }
};

// Single-draw ELBO with a caller-supplied standard normal vector, so tests
// can pin the draw.
inline double elbo_draw(const VariationalModel& m, const SubjectRecord& sub, const VectorXd& eps,
                        const SolveConfig& cfg = {}) {
  const VectorXd x =
      m.core.n_cov > 0 ? VectorXd(Eigen::Map<const VectorXd>(sub.covariates.data(), m.core.n_cov)) : VectorXd();
  LatentGaussian q = m.posterior_of(x, sub.final_time());
  LatentGaussian p = m.prior_of(x);
  VectorXd z = q.mean + VectorXd((0.5 * q.log_var).array().exp()).cwiseProduct(eps);
  const double loglik = -subject_nll(m.core, sub, cfg, nullptr, z);
  return loglik - m.beta * kl_diag_gauss(q, p);
}

// Monte Carlo ELBO estimate over n draws.
inline double elbo(const VariationalModel& m, const SubjectRecord& sub, int n_draws, Rng& rng,
                   const SolveConfig& cfg = {}) {
  double acc = 0.0;
  VectorXd eps(m.latent_dim());
  for (int k = 0; k < n_draws; ++k) {
    for (int i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
    acc += elbo_draw(m, sub, eps, cfg);
  }
  return acc / n_draws;
}

struct VariationalTrainConfig : TrainConfig {
  double beta = 1.0;
  // Epochs over which the KL weight ramps linearly from 0 to beta. Keeps the
  // posterior from being pinned to the prior before it has learned to use
  // the latent; validation always scores at the full beta.
  int kl_warmup_epochs = 0;
};

// Mini-batch training of the latent model. Reuses the deterministic trainer's
// batching and fixed-grid solver; the reparameterized initial memory and the
// KL term are built on the same tape as the likelihood.
inline FitResult fit_variational(VariationalModel& model, const Dataset& train_raw, const Dataset& valid_raw,
                                 const VariationalTrainConfig& cfg) {
  KfeModel& core = model.core;
  Dataset train = train_raw;
  Dataset valid = valid_raw;
  core.norm = normalize_covariates(train);
  normalize_covariates(valid, core.norm);
  double tmax = 0.0;
  for (const auto& s : train.subjects) tmax = std::max(tmax, s.final_time());
  core.time_factor = tmax > 0.0 ? core.time_scale / tmax : 1.0;

  NormalizationStats fitted = core.norm;
  NormalizationStats identity;
  identity.mean.assign(core.n_cov, 0.0);
  identity.sd.assign(core.n_cov, 1.0);
  identity.constant.assign(core.n_cov, 0);
  core.norm = identity;

  Rng rng(splitmix64(cfg.seed ^ 0x76666974ULL));
  AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
  const int M = model.latent_dim();

  auto posterior_inputs = [&](const Dataset& ds, const std::vector<int>& rows, const MatrixXd& Xn) {
    MatrixXd in(rows.size(), core.n_cov + 1);
    if (core.n_cov > 0) in.leftCols(core.n_cov) = Xn;
    for (std::size_t b = 0; b < rows.size(); ++b)
      in(b, core.n_cov) = ds.subjects[rows[b]].final_time() * core.time_factor;
    return in;
  };

  // Deterministic validation objective: NLL at the posterior mean plus the
  // weighted KL, averaged per subject.
  auto valid_score = [&]() {
    double total = 0.0;
    for (int at = 0; at < valid.n_subjects(); at += cfg.batch_size) {
      const int bn = std::min(cfg.batch_size, valid.n_subjects() - at);
      std::vector<const SubjectRecord*> ptrs(bn);
      std::vector<int> rows(bn);
      for (int b = 0; b < bn; ++b) {
        ptrs[b] = &valid.subjects[at + b];
        rows[b] = at + b;
      }
      BatchPlan plan = make_batch_plan(core.topo, ptrs, core.time_factor, cfg.rk4_steps_per_unit);
      MatrixXd Xn = detail::normalized_matrix(core, valid, rows);
      MatrixXd post = model.posterior.forward_plain(core.params, posterior_inputs(valid, rows, Xn));
      MatrixXd pri = model.prior.forward_plain(core.params, Xn);
      MatrixXd m0 = post.leftCols(M);
      BatchStates st = batch_solve_plain(core, Xn, plan, m0);
      total += assemble_nll_plain(core, Xn, plan, st).sum();
      for (int b = 0; b < bn; ++b)
        total += cfg.beta * kl_diag_gauss(model.gaussian_from(post, b), model.gaussian_from(pri, b));
    }
    return total / valid.n_subjects();
  };

  FitResult res;
  std::vector<double> best_params;
  double best_valid = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<int> order(train.n_subjects());
  for (int i = 0; i < train.n_subjects(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    const double beta_t =
        cfg.kl_warmup_epochs > 0 ? cfg.beta * std::min(1.0, (epoch + 1.0) / cfg.kl_warmup_epochs) : cfg.beta;
    Rng erng = rng.split(epoch);
    erng.shuffle(order);
    double epoch_nll = 0.0, epoch_lyap = 0.0, epoch_kl = 0.0;
    long epoch_clamps = 0;
    int n_batches = 0, n_failed = 0;
    for (int at = 0; at < train.n_subjects(); at += cfg.batch_size) {
      const int bn = std::min(cfg.batch_size, train.n_subjects() - at);
      std::vector<const SubjectRecord*> ptrs(bn);
      std::vector<int> rows(bn);
      for (int b = 0; b < bn; ++b) {
        rows[b] = order[at + b];
        ptrs[b] = &train.subjects[rows[b]];
      }
      BatchPlan plan = make_batch_plan(core.topo, ptrs, core.time_factor, cfg.rk4_steps_per_unit);
      MatrixXd Xn = detail::normalized_matrix(core, train, rows);
      MatrixXd pin = posterior_inputs(train, rows, Xn);
      Rng drng = erng.split(0x64726f70ULL + n_batches);
      MatrixXd eps(bn, M);
      for (int b = 0; b < bn; ++b)
        for (int k = 0; k < M; ++k) eps(b, k) = drng.normal();

      Tape tape(&core.params);
      Rng* dr = model.posterior.dropout > 0.0 ? &drng : nullptr;
      Mlp::Bound post_bd = model.posterior.bind(tape);
      Mlp::Bound pri_bd = model.prior.bind(tape);
      Var post_out = model.posterior.forward(tape, post_bd, tape.input(pin), dr);
      Var pri_out = model.prior.forward(tape, pri_bd, tape.input(Xn), dr);
      Var mq = tape.slice_cols(post_out, 0, M);
      Var lvq = tape.clamp(tape.slice_cols(post_out, M, M), -kLogVarClamp, kLogVarClamp);
      Var mp = tape.slice_cols(pri_out, 0, M);
      Var lvp = tape.clamp(tape.slice_cols(pri_out, M, M), -kLogVarClamp, kLogVarClamp);
      Var z = tape.add(mq, tape.cmul_const(tape.exp(tape.scale(lvq, 0.5)), eps));
      Var diff = tape.sub(mq, mp);
      Var term = tape.add(tape.exp(tape.sub(lvq, lvp)),
                          tape.cmul(tape.square(diff), tape.exp(tape.scale(lvp, -1.0))));
      term = tape.add(term, tape.sub(lvp, lvq));
      Var kl_sum = tape.scale(
          tape.sub(tape.sum_all(term), tape.input(MatrixXd::Constant(1, 1, static_cast<double>(bn) * M))), 0.5);

      TapedLoss tl = build_batch_loss(tape, core, Xn, plan, cfg.mu, nullptr, z);
      Var loss = tape.add(tl.loss, tape.scale(kl_sum, beta_t));
      const double kl_value = tape.val(kl_sum)(0, 0);
      ++n_batches;
      if (!std::isfinite(tape.val(loss)(0, 0))) {
        ++n_failed;
        continue;
      }
      core.params.zero_grad();
      tape.backward(loss, 1.0);
      if (!adam_step(core.params, adam)) ++n_failed;
      epoch_nll += tl.breakdown.nll;
      epoch_kl += kl_value;
      epoch_lyap += tl.breakdown.lyapunov;
      epoch_clamps += tl.breakdown.clamp_count;
    }
    if (n_failed * 2 > n_batches)
      throw NumericalFailure("training aborted: most batches produced non-finite losses or gradients");

    EpochRow row;
    row.epoch = epoch;
    row.train_nll = (epoch_nll + beta_t * epoch_kl) / train.n_subjects();
    row.lyapunov = n_batches > 0 ? epoch_lyap / n_batches : 0.0;
    row.kl = epoch_kl / train.n_subjects();
    row.total = row.train_nll + cfg.mu * row.lyapunov;
    row.clamp_count = epoch_clamps;
    row.valid_nll = valid.n_subjects() > 0 ? valid_score() : row.train_nll;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    res.history.push_back(row);

    if (epoch + 1 < cfg.kl_warmup_epochs) continue;  // burn-in: selection starts at the full KL weight
    if (std::isfinite(row.valid_nll) && row.valid_nll < best_valid - 1e-12) {
      best_valid = row.valid_nll;
      best_params = core.params.value;
      res.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= cfg.patience) break;
    }
  }
  if (!best_params.empty()) core.params.value = best_params;
  res.best_valid_nll = best_valid;
  core.norm = fitted;
  return res;
}

struct IntervalPrediction {
  std::vector<double> times;
  MatrixXd mean;   // times x states
  MatrixXd lower;  // times x states
  MatrixXd upper;
  int n_draws_used = 0;
};

// Prior-predictive occupation curves: draw z from p(z|x), solve the forward
// equation, and report the pointwise mean and central band at the given
// level. Throws NumericalFailure if more than 20% of draws fail to integrate.
inline IntervalPrediction predict_interval(const VariationalModel& model, const VectorXd& raw_x,
                                           int initial_state, const std::vector<double>& times_raw,
                                           int n_draws, double level, std::uint64_t seed,
                                           const SolveConfig& cfg = {}, int threads = 1) {
  const int S = model.core.n_states();
  const int M = model.latent_dim();
  const auto n_times = static_cast<Eigen::Index>(times_raw.size());
  LatentGaussian p = model.prior_of(raw_x);
  const VectorXd xn = model.core.n_cov > 0 ? model.core.normalize(raw_x) : VectorXd();
  std::vector<double> save;
  for (double t : times_raw) save.push_back(t * model.core.time_factor);

  std::vector<MatrixXd> draws(n_draws);
  std::vector<char> ok(n_draws, 0);
  Rng base(splitmix64(seed ^ 0x70726564ULL));
  parallel_for(n_draws, threads, [&](int k) {
    Rng r = base.split(k);
    VectorXd z(M);
    for (int i = 0; i < M; ++i) z[i] = p.mean[i] + std::exp(0.5 * p.log_var[i]) * r.normal();
    try {
      SolveResult res = solve(model.core.ode_system(xn), model.core.initial_state(xn, z), 0.0,
                              save.empty() ? 0.0 : save.back(), save, cfg);
      MatrixXd occ(n_times, S);
      for (Eigen::Index i = 0; i < n_times; ++i)
        occ.row(i) = res.states[i].segment(initial_state * S, S).transpose();
      draws[k] = std::move(occ);
      ok[k] = 1;
    } catch (const IntegrationFailure&) {
    }
  });

  std::vector<const MatrixXd*> used;
  for (int k = 0; k < n_draws; ++k)
    if (ok[k]) used.push_back(&draws[k]);
  if (used.size() * 5 < static_cast<std::size_t>(n_draws) * 4)
    throw NumericalFailure("predict_interval: more than 20% of prior draws failed to integrate");

  IntervalPrediction out;
  out.times = times_raw;
  out.n_draws_used = static_cast<int>(used.size());
  const double alpha = (1.0 - level) / 2.0;
  out.mean = MatrixXd::Zero(n_times, S);
  out.lower = MatrixXd::Zero(n_times, S);
  out.upper = MatrixXd::Zero(n_times, S);
  std::vector<double> col(used.size());
  for (Eigen::Index i = 0; i < n_times; ++i)
    for (int j = 0; j < S; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < used.size(); ++k) {
        col[k] = (*used[k])(i, j);
        acc += col[k];
      }
      out.mean(i, j) = acc / used.size();
      out.lower(i, j) = empirical_quantile(col, alpha);
      out.upper(i, j) = empirical_quantile(col, 1.0 - alpha);
    }
  return out;
}

struct LatentExport {
  MatrixXd means;  // subjects x latent dim, prior means
  std::vector<int> labels;
  MatrixXd centroids;
  double inertia = 0.0;
};

// Prior mean embedding of every subject plus a k-means clustering of it.
inline LatentExport export_latent(const VariationalModel& model, const Dataset& ds, int k,
                                  std::uint64_t seed = 0) {
  LatentExport out;
  out.means.resize(ds.n_subjects(), model.latent_dim());
  for (int i = 0; i < ds.n_subjects(); ++i) {
    const VectorXd x =
        model.core.n_cov > 0
            ? VectorXd(Eigen::Map<const VectorXd>(ds.subjects[i].covariates.data(), model.core.n_cov))
            : VectorXd();
    out.means.row(i) = model.prior_of(x).mean.transpose();
  }
  if (k >= 1 && ds.n_subjects() >= k) {
    auto km = kmeans(out.means, k, 20, seed);
    out.labels = km.labels;
    out.centroids = km.centroids;
    out.inertia = km.inertia;
  }
  return out;
}

}  // namespace kolmo
