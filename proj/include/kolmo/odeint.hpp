#pragma once

// ODE solvers.
//
// Two integration modes back the package. Prediction and evaluation use an
// adaptive Dormand-Prince 5(4) pair with mixed absolute/relative error
// control. Training uses a fixed-step classical RK4 grid so that the solve is
// a finite composition of differentiable operations (discretize then
// optimize); the taped variant below replays the same arithmetic on a Tape.
//
// Dense output is exact rather than interpolated: the step size is clipped so
// a step always ends precisely on the next requested save point.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "kolmo/autodiff.hpp"

namespace kolmo {

struct OdeSystem {
  int dim = 0;
  std::function<void(double t, const VectorXd& y, VectorXd& dy)> rhs;
};

enum class OdeMethod { Dopri5, Rk4 };

struct SolveConfig {
  OdeMethod method = OdeMethod::Dopri5;
  double abs_tol = 1e-8;
  double rel_tol = 1e-8;
  double rk4_steps_per_unit = 64.0;  // fixed-grid resolution (steps per unit time)
  long max_steps = 20'000'000;
};

struct SolveResult {
  std::vector<VectorXd> states;  // one per requested save point, in order
  long n_steps = 0;
  long n_rejected = 0;
  double max_err_ratio = 0.0;  // largest accepted error/tolerance ratio (<= 1)
};

class IntegrationFailure : public std::runtime_error {
 public:
  IntegrationFailure(const std::string& what, double t_reached)
      : std::runtime_error(what + " at t=" + std::to_string(t_reached)), t_reached(t_reached) {}
  double t_reached;
};

namespace dopri {
// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b - bhat: error estimate weights (7 stages, FSAL).
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
}  // namespace dopri

// Uniform grid of about span*steps_per_unit steps merged with the save
// points, so every save time is an exact grid node. Returns (times, save_index)
// where save_index[k] is the grid position of save_at[k].
inline std::pair<std::vector<double>, std::vector<std::size_t>> make_fixed_grid(
    double t0, double t1, double steps_per_unit, const std::vector<double>& save_at) {
  const double span = t1 - t0;
  if (span < 0.0) throw std::invalid_argument("make_fixed_grid: t1 < t0");
  long n = std::max<long>(1, static_cast<long>(std::ceil(span * steps_per_unit - 1e-9)));
  if (span == 0.0) n = 0;
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(n) + save_at.size() + 2);
  for (long k = 0; k <= n; ++k) grid.push_back(k == n ? t1 : t0 + span * (static_cast<double>(k) / n));
  for (double s : save_at) {
    if (s < t0 || s > t1) throw std::invalid_argument("make_fixed_grid: save point outside span");
    grid.push_back(s);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<std::size_t> idx(save_at.size());
  for (std::size_t k = 0; k < save_at.size(); ++k)
    idx[k] = static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), save_at[k]) - grid.begin());
  return {std::move(grid), std::move(idx)};
}

namespace detail {

inline void rk4_step(const OdeSystem& sys, double t, double h, const VectorXd& y, VectorXd& out,
                     VectorXd& k1, VectorXd& k2, VectorXd& k3, VectorXd& k4, VectorXd& tmp) {
  sys.rhs(t, y, k1);
  tmp = y + (0.5 * h) * k1;
  sys.rhs(t + 0.5 * h, tmp, k2);
  tmp = y + (0.5 * h) * k2;
  sys.rhs(t + 0.5 * h, tmp, k3);
  tmp = y + h * k3;
  sys.rhs(t + h, tmp, k4);
  out = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline SolveResult solve_rk4(const OdeSystem& sys, VectorXd y, double t0, double t1,
                             const std::vector<double>& save_at, const SolveConfig& cfg) {
  auto [grid, idx] = make_fixed_grid(t0, t1, cfg.rk4_steps_per_unit, save_at);
  SolveResult res;
  res.states.resize(save_at.size());
  VectorXd k1(sys.dim), k2(sys.dim), k3(sys.dim), k4(sys.dim), tmp(sys.dim), ynew(sys.dim);
  auto record = [&](std::size_t gi) {
    for (std::size_t k = 0; k < idx.size(); ++k)
      if (idx[k] == gi) res.states[k] = y;
  };
  record(0);
  for (std::size_t gi = 0; gi + 1 < grid.size(); ++gi) {
    const double h = grid[gi + 1] - grid[gi];
    rk4_step(sys, grid[gi], h, y, ynew, k1, k2, k3, k4, tmp);
    if (!ynew.allFinite()) throw IntegrationFailure("non-finite state in fixed-step solve", grid[gi]);
    y.swap(ynew);
    ++res.n_steps;
    record(gi + 1);
  }
  return res;
}

inline SolveResult solve_dopri5(const OdeSystem& sys, VectorXd y, double t0, double t1,
                                const std::vector<double>& save_at, const SolveConfig& cfg) {
  using namespace dopri;
  SolveResult res;
  res.states.reserve(save_at.size());
  for (double s : save_at)
    if (s < t0 || s > t1) throw std::invalid_argument("solve: save point outside span");
  std::size_t next_save = 0;
  auto flush_saves = [&](double t, const VectorXd& yy) {
    while (next_save < save_at.size() && save_at[next_save] <= t) {
      res.states.push_back(yy);
      ++next_save;
    }
  };
  flush_saves(t0, y);
  if (t1 <= t0) {
    while (next_save < save_at.size()) res.states.push_back(y), ++next_save;
    return res;
  }

  const int d = sys.dim;
  VectorXd k1(d), k2(d), k3(d), k4(d), k5(d), k6(d), k7(d), tmp(d), ynew(d), err(d);
  double t = t0;
  sys.rhs(t, y, k1);
  double h = std::min((t1 - t0) / 100.0, next_save < save_at.size() ? std::max(save_at[next_save] - t0, 1e-8) : t1 - t0);
  if (h <= 0.0) h = (t1 - t0) / 100.0;

  while (t < t1) {
    if (res.n_steps + res.n_rejected > cfg.max_steps)
      throw IntegrationFailure("step budget exhausted", t);
    const double h_min = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t));
    if (h < h_min) throw IntegrationFailure("step size underflow", t);
    double h_cap = t1 - t;
    if (next_save < save_at.size() && save_at[next_save] > t)
      h_cap = std::min(h_cap, save_at[next_save] - t);
    const double hs = std::min(h, h_cap);

    tmp = y + hs * (a21 * k1);
    sys.rhs(t + c2 * hs, tmp, k2);
    tmp = y + hs * (a31 * k1 + a32 * k2);
    sys.rhs(t + c3 * hs, tmp, k3);
    tmp = y + hs * (a41 * k1 + a42 * k2 + a43 * k3);
    sys.rhs(t + c4 * hs, tmp, k4);
    tmp = y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    sys.rhs(t + c5 * hs, tmp, k5);
    tmp = y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    sys.rhs(t + hs, tmp, k6);
    ynew = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    sys.rhs(t + hs, ynew, k7);
    err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double norm2 = 0.0;
    bool finite = ynew.allFinite() && err.allFinite();
    if (finite) {
      for (int i = 0; i < d; ++i) {
        const double sc = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
        const double q = err[i] / sc;
        norm2 += q * q;
      }
    }
    const double err_norm = finite ? std::sqrt(norm2 / d) : std::numeric_limits<double>::infinity();

    if (err_norm <= 1.0) {
      t += hs;
      y.swap(ynew);
      k1.swap(k7);  // FSAL
      ++res.n_steps;
      res.max_err_ratio = std::max(res.max_err_ratio, err_norm);
      flush_saves(t, y);
      const double fac = finite ? std::clamp(0.9 * std::pow(std::max(err_norm, 1e-10), -0.2), 0.2, 10.0) : 0.5;
      h = hs * fac;
    } else {
      ++res.n_rejected;
      const double fac = finite ? std::clamp(0.9 * std::pow(err_norm, -0.2), 0.1, 1.0) : 0.25;
      h = hs * fac;
    }
  }
  flush_saves(t1, y);
  return res;
}

}  // namespace detail

// Integrate sys from (t0, y0) to t1, recording the state at each save point
// (save_at nondecreasing, inside [t0, t1]). Save points land on exact step
// boundaries in both methods.
inline SolveResult solve(const OdeSystem& sys, const VectorXd& y0, double t0, double t1,
                         const std::vector<double>& save_at, const SolveConfig& cfg = {}) {
  for (std::size_t k = 1; k < save_at.size(); ++k)
    if (save_at[k] < save_at[k - 1]) throw std::invalid_argument("solve: save points must be nondecreasing");
  if (cfg.method == OdeMethod::Rk4) return detail::solve_rk4(sys, y0, t0, t1, save_at, cfg);
  return detail::solve_dopri5(sys, y0, t0, t1, save_at, cfg);
}

// Right-hand side built on a tape. y is a 1 x dim row; the result must be a
// 1 x dim row on the same tape.
struct TapedSystem {
  int dim = 0;
  std::function<Var(Tape&, double t, Var y)> rhs;
};

struct GradSolveResult {
  std::vector<VectorXd> states;
  MatrixXd y0_grad;  // d(loss)/d(y0), 1 x dim
  long n_steps = 0;
};

// Differentiable fixed-grid RK4. The loss is sum_k <cotangents[k],
// state(save_at[k])>; parameter gradients accumulate into the tape's bound
// store and the returned y0_grad is the adjoint of the initial state.
inline GradSolveResult solve_with_grad(Tape& tape, const TapedSystem& sys, const VectorXd& y0, double t0,
                                       double t1, const std::vector<double>& save_at,
                                       const std::vector<VectorXd>& cotangents, const SolveConfig& cfg = {}) {
  if (cotangents.size() != save_at.size())
    throw std::invalid_argument("solve_with_grad: one cotangent per save point required");
  auto [grid, idx] = make_fixed_grid(t0, t1, cfg.rk4_steps_per_unit, save_at);
  Var y = tape.input(y0.transpose(), true);
  const Var y0_var = y;
  GradSolveResult res;
  res.states.resize(save_at.size());
  std::vector<Var> saved(save_at.size());
  auto record = [&](std::size_t gi) {
    for (std::size_t k = 0; k < idx.size(); ++k)
      if (idx[k] == gi) {
        saved[k] = y;
        res.states[k] = tape.val(y).row(0).transpose();
      }
  };
  record(0);
  for (std::size_t gi = 0; gi + 1 < grid.size(); ++gi) {
    const double t = grid[gi];
    const double h = grid[gi + 1] - grid[gi];
    Var k1 = sys.rhs(tape, t, y);
    Var k2 = sys.rhs(tape, t + 0.5 * h, tape.add(y, tape.scale(k1, 0.5 * h)));
    Var k3 = sys.rhs(tape, t + 0.5 * h, tape.add(y, tape.scale(k2, 0.5 * h)));
    Var k4 = sys.rhs(tape, t + h, tape.add(y, tape.scale(k3, h)));
    Var incr = tape.add(tape.add(k1, k4), tape.scale(tape.add(k2, k3), 2.0));
    y = tape.add(y, tape.scale(incr, h / 6.0));
    ++res.n_steps;
    record(gi + 1);
  }
  Var loss{-1};
  for (std::size_t k = 0; k < saved.size(); ++k) {
    Var term = tape.sum_all(tape.cmul_const(saved[k], cotangents[k].transpose()));
    loss = loss.valid() ? tape.add(loss, term) : term;
  }
  if (loss.valid()) {
    tape.backward(loss, 1.0);
    res.y0_grad = tape.grad_of(y0_var);
  } else {
    res.y0_grad = MatrixXd::Zero(1, sys.dim);
  }
  return res;
}

}  // namespace kolmo
