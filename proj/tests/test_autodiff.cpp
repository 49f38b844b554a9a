#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <limits>

#include "kolmo/adam.hpp"
#include "kolmo/autodiff.hpp"
#include "kolmo/mlp.hpp"
#include "kolmo/rng.hpp"

using namespace kolmo;

namespace {

// Central finite differences of a scalar function of the parameter store.
VectorXd fd_gradient(ParamStore& store, const std::function<double()>& f, double h = 1e-5) {
  VectorXd g(store.size());
  for (int i = 0; i < store.size(); ++i) {
    const double keep = store.value[i];
    store.value[i] = keep + h;
    const double up = f();
    store.value[i] = keep - h;
    const double dn = f();
    store.value[i] = keep;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

double max_rel_err(const VectorXd& a, const VectorXd& b) {
  double worst = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double denom = std::max(1e-6, std::abs(a[i]) + std::abs(b[i]));
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("all-zero weights forward to the output bias") {
  ParamStore store;
  Rng init(1);
  Mlp net = Mlp::create(store, {3, 5, 2}, 0.0, init);
  std::fill(store.value.begin(), store.value.end(), 0.0);
  store.value[net.bias_offset(1)] = 0.7;
  store.value[net.bias_offset(1) + 1] = -0.3;
  MatrixXd X = MatrixXd::Random(4, 3);
  MatrixXd out = net.forward_plain(store, X);
  for (int r = 0; r < 4; ++r) {
    REQUIRE(out(r, 0) == Catch::Approx(0.7));
    REQUIRE(out(r, 1) == Catch::Approx(-0.3));
  }
}

TEST_CASE("single linear layer matches hand arithmetic") {
  ParamStore store;
  Rng init(1);
  Mlp net = Mlp::create(store, {2, 1}, 0.0, init);
  store.value[net.weight_offset(0)] = 2.0;      // W(0,0)
  store.value[net.weight_offset(0) + 1] = -1.0; // W(1,0)
  store.value[net.bias_offset(0)] = 0.5;
  MatrixXd X(1, 2);
  X << 3.0, 4.0;
  REQUIRE(net.forward_plain(store, X)(0, 0) == Catch::Approx(2.0 * 3.0 - 1.0 * 4.0 + 0.5));
}

TEST_CASE("taped forward equals plain forward") {
  ParamStore store;
  Rng init(3);
  Mlp net = Mlp::create(store, {4, 6, 6, 3}, 0.0, init);
  MatrixXd X = MatrixXd::Random(5, 4);
  Tape tape(&store);
  auto bd = net.bind(tape);
  Var y = net.forward(tape, bd, tape.input(X));
  MatrixXd plain = net.forward_plain(store, X);
  REQUIRE((tape.val(y) - plain).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("dropout mask average approaches the deterministic activation") {
  ParamStore store;
  Rng init(5);
  const double p = 0.3;
  Mlp net = Mlp::create(store, {3, 16, 4}, p, init);
  MatrixXd X = MatrixXd::Random(2, 3);
  // Evaluation mode scales hidden units by (1-p), which is exactly the mask
  // expectation, so the Monte Carlo average of training-mode outputs must
  // approach the evaluation output.
  MatrixXd eval_out = net.forward_plain(store, X);
  Rng drng(77);
  MatrixXd acc = MatrixXd::Zero(2, 4);
  const int n = 10000;
  for (int k = 0; k < n; ++k) {
    Tape tape(&store);
    auto bd = net.bind(tape);
    acc += tape.val(net.forward(tape, bd, tape.input(X), &drng));
  }
  acc /= n;
  for (int i = 0; i < acc.size(); ++i) {
    REQUIRE(acc.data()[i] == Catch::Approx(eval_out.data()[i]).margin(0.02 * std::abs(eval_out.data()[i]) + 0.01));
  }
}

TEST_CASE("network gradient matches finite differences") {
  ParamStore store;
  Rng init(11);
  Mlp net = Mlp::create(store, {3, 7, 2}, 0.0, init);
  MatrixXd X = MatrixXd::Random(4, 3);
  auto loss = [&]() {
    Tape tape(&store);
    auto bd = net.bind(tape);
    Var y = net.forward(tape, bd, tape.input(X));
    Var l = tape.sum_all(tape.square(tape.softplus(y)));
    return tape.val(l)(0, 0);
  };
  VectorXd fd = fd_gradient(store, loss);
  store.zero_grad();
  Tape tape(&store);
  auto bd = net.bind(tape);
  Var y = net.forward(tape, bd, tape.input(X));
  Var l = tape.sum_all(tape.square(tape.softplus(y)));
  tape.backward(l, 1.0);
  VectorXd ad = Eigen::Map<VectorXd>(store.grad.data(), store.size());
  REQUIRE(max_rel_err(ad, fd) < 1e-6);
}

TEST_CASE("gather, log floor and clamp backprop match finite differences") {
  ParamStore store;
  Rng init(13);
  Mlp net = Mlp::create(store, {2, 5, 4}, 0.0, init);
  MatrixXd X = MatrixXd::Random(3, 2);
  std::vector<int> cols{1, 3, 0};
  auto build = [&](Tape& tape) {
    auto bd = net.bind(tape);
    Var y = net.forward(tape, bd, tape.input(X));
    Var sp = tape.softplus(y);
    Var g = tape.gather_cols(sp, cols);
    Var lg = tape.log_clamp(g);
    Var cl = tape.clamp(tape.slice_cols(y, 0, 2), -0.4, 0.4);
    return tape.add(tape.sum_all(lg), tape.sum_all(tape.exp(cl)));
  };
  auto loss = [&]() {
    Tape tape(&store);
    return tape.val(build(tape))(0, 0);
  };
  VectorXd fd = fd_gradient(store, loss);
  store.zero_grad();
  Tape tape(&store);
  tape.backward(build(tape), 1.0);
  VectorXd ad = Eigen::Map<VectorXd>(store.grad.data(), store.size());
  // Clamp kinks can sit within h of a boundary; tolerate slightly more noise.
  REQUIRE(max_rel_err(ad, fd) < 1e-5);
}

TEST_CASE("generator product ops backprop match finite differences") {
  auto topo = TransitionTopology::make(3, {{0, 1}, {0, 2}, {1, 2}});
  const int S = 3, q = topo.q_count();
  ParamStore store;
  const int poff = store.alloc(S * S + S * S + q);
  Rng vals(17);
  for (int i = 0; i < store.size(); ++i) store.value[i] = vals.uniform(-0.8, 0.9);

  auto build = [&](Tape& tape) {
    Var pf = tape.param(poff, 1, S * S);
    Var u = tape.param(poff + S * S, 1, S * S);
    Var rates = tape.softplus(tape.param(poff + 2 * S * S, 1, q));
    Var dpf = tape.bmm_q_right(pf, rates, topo);
    Var du = tape.bmm_q_left(u, rates, topo);
    Var pair = tape.bmm_pair(u, pf, topo);
    Var l = tape.sum_all(tape.square(dpf));
    l = tape.add(l, tape.sum_all(tape.square(du)));
    l = tape.add(l, tape.sum_all(tape.square(pair)));
    return l;
  };
  auto loss = [&]() {
    Tape tape(&store);
    return tape.val(build(tape))(0, 0);
  };
  VectorXd fd = fd_gradient(store, loss);
  store.zero_grad();
  Tape tape(&store);
  tape.backward(build(tape), 1.0);
  VectorXd ad = Eigen::Map<VectorXd>(store.grad.data(), store.size());
  REQUIRE(max_rel_err(ad, fd) < 1e-6);
}

TEST_CASE("row_scale and concat backprop match finite differences") {
  ParamStore store;
  const int poff = store.alloc(6);
  Rng vals(19);
  for (int i = 0; i < 6; ++i) store.value[i] = vals.uniform(-1.0, 1.0);
  VectorXd h(3);
  h << 0.5, 0.0, 2.0;
  auto build = [&](Tape& tape) {
    Var a = tape.param(poff, 3, 1);
    Var b = tape.param(poff + 3, 3, 1);
    Var c = tape.concat_cols({a, b, a});
    return tape.sum_all(tape.square(tape.row_scale(c, h)));
  };
  auto loss = [&]() {
    Tape tape(&store);
    return tape.val(build(tape))(0, 0);
  };
  VectorXd fd = fd_gradient(store, loss);
  store.zero_grad();
  Tape tape(&store);
  tape.backward(build(tape), 1.0);
  VectorXd ad = Eigen::Map<VectorXd>(store.grad.data(), store.size());
  REQUIRE(max_rel_err(ad, fd) < 1e-7);
}

TEST_CASE("elementwise product backprop matches finite differences") {
  ParamStore store;
  const int poff = store.alloc(8);
  Rng vals(23);
  for (int i = 0; i < 8; ++i) store.value[i] = vals.uniform(-1.5, 1.5);
  auto build = [&](Tape& tape) {
    Var a = tape.param(poff, 2, 2);
    Var b = tape.param(poff + 4, 2, 2);
    Var c = tape.cmul(tape.exp(a), tape.add(b, tape.square(a)));
    return tape.sum_all(tape.cmul(c, c));
  };
  auto loss = [&]() {
    Tape tape(&store);
    return tape.val(build(tape))(0, 0);
  };
  VectorXd fd = fd_gradient(store, loss);
  store.zero_grad();
  Tape tape(&store);
  tape.backward(build(tape), 1.0);
  VectorXd ad = Eigen::Map<VectorXd>(store.grad.data(), store.size());
  REQUIRE(max_rel_err(ad, fd) < 1e-6);
}

TEST_CASE("repeated backward calls accumulate linearly") {
  ParamStore store;
  const int poff = store.alloc(2);
  store.value[0] = 1.5;
  store.value[1] = -0.5;
  Tape tape(&store);
  Var x = tape.param(poff, 1, 2);
  Var l = tape.sum_all(tape.square(x));
  store.zero_grad();
  tape.backward(l, 1.0);
  const double g1 = store.grad[0];
  tape.backward(l, 1.0);
  REQUIRE(store.grad[0] == Catch::Approx(2.0 * g1));
  REQUIRE(g1 == Catch::Approx(3.0));
}

TEST_CASE("backward after reset throws") {
  ParamStore store;
  const int poff = store.alloc(1);
  store.value[0] = 2.0;
  Tape tape(&store);
  Var x = tape.param(poff, 1, 1);
  Var l = tape.square(x);
  tape.reset();
  REQUIRE_THROWS_AS(tape.backward(l, 1.0), std::logic_error);
}

TEST_CASE("log floor activations are counted and give zero slope") {
  ParamStore store;
  const int poff = store.alloc(2);
  store.value[0] = 1e-15;  // below the floor
  store.value[1] = 0.5;
  Tape tape(&store);
  Var x = tape.param(poff, 1, 2);
  Var l = tape.sum_all(tape.log_clamp(x));
  REQUIRE(tape.clamp_count == 1);
  REQUIRE(tape.val(l)(0, 0) == Catch::Approx(std::log(1e-12) + std::log(0.5)));
  store.zero_grad();
  tape.backward(l, 1.0);
  REQUIRE(store.grad[0] == 0.0);
  REQUIRE(store.grad[1] == Catch::Approx(2.0));
}

TEST_CASE("adam leaves parameters alone on zero gradient") {
  ParamStore store;
  store.alloc(3);
  store.value = {1.0, -2.0, 0.5};
  store.zero_grad();
  AdamConfig cfg;
  REQUIRE(adam_step(store, cfg));
  REQUIRE(store.value[0] == 1.0);
  REQUIRE(store.value[1] == -2.0);
  REQUIRE(store.value[2] == 0.5);
}

TEST_CASE("first adam step moves each coordinate by about the learning rate") {
  ParamStore store;
  store.alloc(2);
  store.value = {0.0, 0.0};
  store.grad = {1.0, -3.0};
  AdamConfig cfg;
  cfg.lr = 1e-3;
  REQUIRE(adam_step(store, cfg));
  REQUIRE(std::abs(store.value[0] + cfg.lr) < 1e-6 * cfg.lr + 1e-10);
  REQUIRE(std::abs(store.value[1] - cfg.lr) < 1e-6 * cfg.lr + 1e-10);
}

TEST_CASE("decoupled weight decay shrinks parameters multiplicatively") {
  ParamStore store;
  store.alloc(1);
  store.value = {4.0};
  store.zero_grad();
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  REQUIRE(adam_step(store, cfg));
  REQUIRE(store.value[0] == Catch::Approx(4.0 * (1.0 - 0.1 * 0.01)));
}

TEST_CASE("non-finite gradients reject the step untouched") {
  ParamStore store;
  store.alloc(2);
  store.value = {1.0, 2.0};
  store.grad = {0.5, std::numeric_limits<double>::quiet_NaN()};
  AdamConfig cfg;
  REQUIRE_FALSE(adam_step(store, cfg));
  REQUIRE(store.value[0] == 1.0);
  REQUIRE(store.value[1] == 2.0);
  REQUIRE(store.adam_t == 0);
  REQUIRE(store.m[0] == 0.0);
}
