#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "kolmo/odeint.hpp"

using namespace kolmo;

namespace {

OdeSystem decay() {
  OdeSystem sys;
  sys.dim = 1;
  sys.rhs = [](double, const VectorXd& y, VectorXd& dy) { dy = -y; };
  return sys;
}

}  // namespace

TEST_CASE("adaptive solve hits exp(-1) to tolerance") {
  VectorXd y0(1);
  y0 << 1.0;
  SolveConfig cfg;
  auto res = solve(decay(), y0, 0.0, 1.0, {1.0}, cfg);
  REQUIRE(res.states.size() == 1);
  REQUIRE(res.states[0][0] == Catch::Approx(std::exp(-1.0)).margin(1e-8));
  REQUIRE(res.max_err_ratio <= 1.0);
}

TEST_CASE("zero right-hand side keeps the state bitwise") {
  OdeSystem sys;
  sys.dim = 2;
  sys.rhs = [](double, const VectorXd&, VectorXd& dy) { dy = VectorXd::Zero(2); };
  VectorXd y0(2);
  y0 << 0.3, -7.25;
  auto res = solve(sys, y0, 0.0, 5.0, {2.5, 5.0});
  REQUIRE(res.states[0][0] == 0.3);
  REQUIRE(res.states[0][1] == -7.25);
  REQUIRE(res.states[1][0] == 0.3);
}

TEST_CASE("oscillator integral returns to zero") {
  OdeSystem sys;
  sys.dim = 1;
  sys.rhs = [](double t, const VectorXd&, VectorXd& dy) { dy[0] = std::cos(t); };
  VectorXd y0 = VectorXd::Zero(1);
  const double pi = 3.14159265358979323846;
  auto res = solve(sys, y0, 0.0, pi, {pi});
  REQUIRE(std::abs(res.states[0][0]) < 1e-8);
}

TEST_CASE("fixed-grid RK4 converges at fourth order") {
  VectorXd y0(1);
  y0 << 1.0;
  auto err_with = [&](double steps) {
    SolveConfig cfg;
    cfg.method = OdeMethod::Rk4;
    cfg.rk4_steps_per_unit = steps;
    auto res = solve(decay(), y0, 0.0, 1.0, {1.0}, cfg);
    return std::abs(res.states[0][0] - std::exp(-1.0));
  };
  const double e1 = err_with(8.0), e2 = err_with(16.0);
  const double order = std::log2(e1 / e2);
  REQUIRE(order > 3.8);
  REQUIRE(order < 4.2);
}

TEST_CASE("save points are exact step boundaries") {
  // A state recorded mid-span must agree with a fresh solve that ends there.
  VectorXd y0(1);
  y0 << 1.0;
  SolveConfig cfg;
  cfg.abs_tol = cfg.rel_tol = 1e-10;
  auto res = solve(decay(), y0, 0.0, 2.0, {0.7, 1.3, 2.0}, cfg);
  auto direct = solve(decay(), y0, 0.0, 0.7, {0.7}, cfg);
  REQUIRE(std::abs(res.states[0][0] - direct.states[0][0]) < 1e-9);
  REQUIRE(res.states[2][0] == Catch::Approx(std::exp(-2.0)).margin(1e-9));
}

TEST_CASE("repeated save points and endpoints are all recorded") {
  VectorXd y0(1);
  y0 << 1.0;
  auto res = solve(decay(), y0, 0.0, 1.0, {0.0, 0.5, 0.5, 1.0});
  REQUIRE(res.states.size() == 4);
  REQUIRE(res.states[0][0] == 1.0);
  REQUIRE(res.states[1][0] == res.states[2][0]);
}

TEST_CASE("blowup raises an integration failure with the reached time") {
  OdeSystem sys;
  sys.dim = 1;
  sys.rhs = [](double, const VectorXd& y, VectorXd& dy) { dy[0] = y[0] * y[0]; };
  VectorXd y0(1);
  y0 << 1.0;  // exact solution 1/(1-t), singular at t = 1
  bool threw = false;
  try {
    solve(sys, y0, 0.0, 2.0, {2.0});
  } catch (const IntegrationFailure& f) {
    threw = true;
    REQUIRE(f.t_reached > 0.9);
    REQUIRE(f.t_reached <= 1.01);
  }
  REQUIRE(threw);
}

TEST_CASE("same inputs give bitwise identical solves") {
  VectorXd y0(1);
  y0 << 1.0;
  auto a = solve(decay(), y0, 0.0, 3.0, {1.0, 2.0, 3.0});
  auto b = solve(decay(), y0, 0.0, 3.0, {1.0, 2.0, 3.0});
  for (int k = 0; k < 3; ++k) REQUIRE(a.states[k][0] == b.states[k][0]);
}

TEST_CASE("differentiable solve reproduces the derivative of exp(theta)") {
  // y' = theta * y, y(0)=1, so y(1) = exp(theta) and dy(1)/dtheta = exp(theta).
  ParamStore store;
  const int poff = store.alloc(1);
  auto run = [&](double theta) {
    store.value[0] = theta;
    Tape tape(&store);
    TapedSystem sys;
    sys.dim = 1;
    Var th = tape.param(poff, 1, 1);
    sys.rhs = [&, th](Tape& tp, double, Var y) { return tp.matmul(y, th); };
    SolveConfig cfg;
    cfg.rk4_steps_per_unit = 100;
    std::vector<VectorXd> cots{VectorXd::Ones(1)};
    store.zero_grad();
    auto res = solve_with_grad(tape, sys, VectorXd::Ones(1), 0.0, 1.0, {1.0}, cots, cfg);
    return std::pair<double, double>(res.states[0][0], store.grad[0]);
  };
  auto [y_at_0, g_at_0] = run(0.0);
  REQUIRE(y_at_0 == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(g_at_0 == Catch::Approx(1.0).margin(1e-6));

  // Finite differences of the discretized solve agree even more tightly.
  const double h = 1e-6;
  const double up = run(h).first, dn = run(-h).first;
  const double fd = (up - dn) / (2.0 * h);
  REQUIRE(run(0.0).second == Catch::Approx(fd).margin(1e-7));
}

TEST_CASE("gradient error shrinks at fourth order in the step size") {
  ParamStore store;
  const int poff = store.alloc(1);
  const double theta = 0.5;
  auto grad_with = [&](double steps) {
    store.value[0] = theta;
    Tape tape(&store);
    TapedSystem sys;
    sys.dim = 1;
    Var th = tape.param(poff, 1, 1);
    sys.rhs = [&, th](Tape& tp, double, Var y) { return tp.matmul(y, th); };
    SolveConfig cfg;
    cfg.rk4_steps_per_unit = steps;
    store.zero_grad();
    solve_with_grad(tape, sys, VectorXd::Ones(1), 0.0, 1.0, {1.0}, {VectorXd::Ones(1)}, cfg);
    return store.grad[0];
  };
  const double exact = std::exp(theta);
  const double e1 = std::abs(grad_with(8) - exact);
  const double e2 = std::abs(grad_with(16) - exact);
  const double order = std::log2(e1 / e2);
  REQUIRE(order > 3.5);
  REQUIRE(order < 4.5);
}

TEST_CASE("zero cotangents give zero gradients and initial-state adjoints work") {
  ParamStore store;
  const int poff = store.alloc(1);
  store.value[0] = 0.5;
  Tape tape(&store);
  TapedSystem sys;
  sys.dim = 1;
  Var th = tape.param(poff, 1, 1);
  sys.rhs = [&, th](Tape& tp, double, Var y) { return tp.matmul(y, th); };
  store.zero_grad();
  auto res = solve_with_grad(tape, sys, VectorXd::Ones(1), 0.0, 1.0, {1.0}, {VectorXd::Zero(1)});
  REQUIRE(store.grad[0] == 0.0);
  REQUIRE(res.y0_grad(0, 0) == 0.0);

  Tape tape2(&store);
  Var th2 = tape2.param(poff, 1, 1);
  TapedSystem sys2;
  sys2.dim = 1;
  sys2.rhs = [&, th2](Tape& tp, double, Var y) { return tp.matmul(y, th2); };
  store.zero_grad();
  auto res2 = solve_with_grad(tape2, sys2, VectorXd::Ones(1), 0.0, 1.0, {1.0}, {VectorXd::Ones(1)});
  // dy(1)/dy(0) = exp(theta)
  REQUIRE(res2.y0_grad(0, 0) == Catch::Approx(std::exp(0.5)).margin(1e-6));
}
