#pragma once

// Tape-based reverse-mode differentiation over batched Eigen matrices.
//
// Every tensor on the tape is a dense matrix whose rows index subjects in a
// mini-batch. Transition-probability blocks are stored one per row as the
// row-major flattening of an S x S matrix, and the three Bmm* ops below do the
// per-row S x S algebra (Kolmogorov forward/backward products, block
// composition) with hand-derived adjoints. Network layers stay ordinary
// matrix products so the heavy lifting is plain dgemm.
//
// A Tape is built once per loss evaluation: leaves are inputs (optionally
// differentiable) and parameter views; backward() walks nodes in reverse
// construction order and accumulates parameter gradients into the bound
// ParamStore. Repeated backward calls accumulate (linearity); reset() frees
// the graph, after which backward throws.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kolmo/statespace.hpp"

namespace kolmo {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ParamStore {
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> m;  // Adam first moment
  std::vector<double> v;  // Adam second moment
  long adam_t = 0;

  int size() const { return static_cast<int>(value.size()); }

  int alloc(int n) {
    const int off = size();
    value.resize(off + n, 0.0);
    grad.resize(off + n, 0.0);
    m.resize(off + n, 0.0);
    v.resize(off + n, 0.0);
    return off;
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

inline double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
  enum class Op {
    Input,
    Param,
    MatMul,
    AddRowVec,
    Add,
    Sub,
    CMul,
    CMulConst,
    Scale,
    RowScale,
    Tanh,
    Softplus,
    Exp,
    Square,
    Clamp,
    LogClamp,
    ConcatCols,
    SliceCols,
    GatherCols,
    SumAll,
    BmmQRight,
    BmmQLeft,
    BmmPair,
  };

  struct Node {
    Op op;
    int a = -1, b = -1;
    std::vector<int> more;       // ConcatCols inputs
    MatrixXd val;
    MatrixXd grad;               // allocated on first touch during backward
    bool needs_grad = false;
    // op-specific payloads
    MatrixXd aux;                // CMulConst mask
    VectorXd auxv;               // RowScale factors
    std::vector<int> cols;       // GatherCols column per row
    int off = 0, len = 0;        // SliceCols
    double s = 0.0;              // Scale
    double lo = 0.0, hi = 0.0;   // Clamp
    int param_offset = -1;
    const TransitionTopology* topo = nullptr;
  };

 public:
  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  long clamp_count = 0;  // LogClamp activations during forward

  int n_nodes() const { return static_cast<int>(nodes_.size()); }
  const MatrixXd& val(Var v) const { return nodes_[v.id].val; }

  Var input(MatrixXd v, bool needs_grad = false) {
    Node n;
    n.op = Op::Input;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    return push(std::move(n));
  }

  // View of store parameters [offset, offset + rows*cols) as a matrix
  // (column-major flattening). Values are copied at bind time.
  Var param(int offset, int rows, int cols) {
    if (!store_) throw std::logic_error("tape has no parameter store");
    Node n;
    n.op = Op::Param;
    n.needs_grad = true;
    n.param_offset = offset;
    n.val = Eigen::Map<const MatrixXd>(store_->value.data() + offset, rows, cols);
    return push(std::move(n));
  }

  Var matmul(Var a, Var b) {
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = ng(a) || ng(b);
    n.val.noalias() = nodes_[a.id].val * nodes_[b.id].val;
    return push(std::move(n));
  }

  // X + row vector broadcast over rows.
  Var add_rowvec(Var x, Var row) {
    Node n;
    n.op = Op::AddRowVec;
    n.a = x.id;
    n.b = row.id;
    n.needs_grad = ng(x) || ng(row);
    n.val = nodes_[x.id].val.rowwise() + nodes_[row.id].val.row(0);
    return push(std::move(n));
  }

  Var add(Var a, Var b) {
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = ng(a) || ng(b);
    n.val = nodes_[a.id].val + nodes_[b.id].val;
    return push(std::move(n));
  }

  Var sub(Var a, Var b) {
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = ng(a) || ng(b);
    n.val = nodes_[a.id].val - nodes_[b.id].val;
    return push(std::move(n));
  }

  // Elementwise product of two nodes.
  Var cmul(Var a, Var b) {
    Node n;
    n.op = Op::CMul;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = ng(a) || ng(b);
    n.val = nodes_[a.id].val.cwiseProduct(nodes_[b.id].val);
    return push(std::move(n));
  }

  // Elementwise product with a constant matrix (masks, dropout).
  Var cmul_const(Var x, MatrixXd mask) {
    Node n;
    n.op = Op::CMulConst;
    n.a = x.id;
    n.needs_grad = ng(x);
    n.val = nodes_[x.id].val.cwiseProduct(mask);
    n.aux = std::move(mask);
    return push(std::move(n));
  }

  Var scale(Var x, double s) {
    Node n;
    n.op = Op::Scale;
    n.a = x.id;
    n.needs_grad = ng(x);
    n.s = s;
    n.val = nodes_[x.id].val * s;
    return push(std::move(n));
  }

  // Row i scaled by h(i); h is constant (step sizes).
  Var row_scale(Var x, VectorXd h) {
    Node n;
    n.op = Op::RowScale;
    n.a = x.id;
    n.needs_grad = ng(x);
    n.val = h.asDiagonal() * nodes_[x.id].val;
    n.auxv = std::move(h);
    return push(std::move(n));
  }

  Var tanh(Var x) {
    Node n;
    n.op = Op::Tanh;
    n.a = x.id;
    n.needs_grad = ng(x);
    n.val = nodes_[x.id].val.array().tanh();
    return push(std::move(n));
  }

  Var softplus(Var x) {
    Node n;
    n.op = Op::Softplus;
    n.a = x.id;
    n.needs_grad = ng(x);
    n.val = nodes_[x.id].val.unaryExpr([](double t) { return stable_softplus(t); });
    return push(std::move(n));
  }

  Var exp(Var x) {
    Node n;
    n.op = Op::Exp;
    n.a = x.id;
    n.needs_grad = ng(x);
    n.val = nodes_[x.id].val.array().exp();
    return push(std::move(n));
  }

  Var square(Var x) {
    Node n;
    n.op = Op::Square;
    n.a = x.id;
    n.needs_grad = ng(x);
    n.val = nodes_[x.id].val.cwiseProduct(nodes_[x.id].val);
    return push(std::move(n));
  }

  Var clamp(Var x, double lo, double hi) {
    Node n;
    n.op = Op::Clamp;
    n.a = x.id;
    n.needs_grad = ng(x);
    n.lo = lo;
    n.hi = hi;
    n.val = nodes_[x.id].val.cwiseMax(lo).cwiseMin(hi);
    return push(std::move(n));
  }

  // log(max(x, floor)); clamp activations are counted.
  Var log_clamp(Var x, double floor = 1e-12) {
    Node n;
    n.op = Op::LogClamp;
    n.a = x.id;
    n.needs_grad = ng(x);
    n.lo = floor;
    const auto& xv = nodes_[x.id].val;
    n.val.resize(xv.rows(), xv.cols());
    for (Eigen::Index j = 0; j < xv.cols(); ++j)
      for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        double t = xv(i, j);
        if (t < floor) {
          t = floor;
          ++clamp_count;
        }
        n.val(i, j) = std::log(t);
      }
    return push(std::move(n));
  }

  Var concat_cols(const std::vector<Var>& xs) {
    Node n;
    n.op = Op::ConcatCols;
    Eigen::Index rows = nodes_[xs.front().id].val.rows(), cols = 0;
    for (Var v : xs) {
      n.more.push_back(v.id);
      n.needs_grad = n.needs_grad || ng(v);
      cols += nodes_[v.id].val.cols();
    }
    n.val.resize(rows, cols);
    Eigen::Index at = 0;
    for (Var v : xs) {
      const auto& m = nodes_[v.id].val;
      n.val.middleCols(at, m.cols()) = m;
      at += m.cols();
    }
    return push(std::move(n));
  }

  Var slice_cols(Var x, int off, int len) {
    Node n;
    n.op = Op::SliceCols;
    n.a = x.id;
    n.needs_grad = ng(x);
    n.off = off;
    n.len = len;
    n.val = nodes_[x.id].val.middleCols(off, len);
    return push(std::move(n));
  }

  // out(i, 0) = x(i, cols[i])
  Var gather_cols(Var x, std::vector<int> cols) {
    Node n;
    n.op = Op::GatherCols;
    n.a = x.id;
    n.needs_grad = ng(x);
    const auto& xv = nodes_[x.id].val;
    n.val.resize(xv.rows(), 1);
    for (Eigen::Index i = 0; i < xv.rows(); ++i) n.val(i, 0) = xv(i, cols[i]);
    n.cols = std::move(cols);
    return push(std::move(n));
  }

  Var sum_all(Var x) {
    Node n;
    n.op = Op::SumAll;
    n.a = x.id;
    n.needs_grad = ng(x);
    n.val = MatrixXd::Constant(1, 1, nodes_[x.id].val.sum());
    return push(std::move(n));
  }

  // Per-row Kolmogorov forward product: row b holds P as a row-major S^2
  // block and rates holds the post-softplus transition rates in rate_index
  // order; the result row is the row-major flattening of P * Q(rates).
  Var bmm_q_right(Var p, Var rates, const TransitionTopology& topo) {
    return bmm_q(Op::BmmQRight, p, rates, topo);
  }

  // Per-row Kolmogorov backward product: result row is -Q(rates) * U.
  Var bmm_q_left(Var u, Var rates, const TransitionTopology& topo) {
    return bmm_q(Op::BmmQLeft, u, rates, topo);
  }

  // Per-row composition of two S^2 blocks: result = A * B (row-major blocks).
  Var bmm_pair(Var a, Var b, const TransitionTopology& topo) {
    Node n;
    n.op = Op::BmmPair;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = ng(a) || ng(b);
    n.topo = &topo;
    const int S = topo.n_states;
    const auto& A = nodes_[a.id].val;
    const auto& B = nodes_[b.id].val;
    n.val.resize(A.rows(), S * S);
    MatrixXd Am(S, S), Bm(S, S), Cm(S, S);
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
      row_to_mat(A, r, S, Am);
      row_to_mat(B, r, S, Bm);
      Cm.noalias() = Am * Bm;
      mat_to_row(Cm, r, S, n.val);
    }
    return push(std::move(n));
  }

  // Seed the output node with a cotangent and sweep the tape in reverse.
  // Parameter gradients accumulate into the bound store; leaf inputs created
  // with needs_grad keep their gradient readable via grad_of().
  void backward(Var out, const MatrixXd& cotangent) {
    if (nodes_.empty()) throw std::logic_error("backward on a reset tape");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    touch(out.id) = cotangent;
    for (int id = out.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0 || !n.needs_grad) continue;
      propagate(id);
    }
  }

  void backward(Var out, double seed = 1.0) {
    backward(out, MatrixXd::Constant(nodes_[out.id].val.rows(), nodes_[out.id].val.cols(), seed));
  }

  MatrixXd grad_of(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return MatrixXd::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  void reset() {
    nodes_.clear();
    clamp_count = 0;
  }

  static void row_to_mat(const MatrixXd& X, Eigen::Index r, int S, MatrixXd& M) {
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) M(i, j) = X(r, i * S + j);
  }

  static void mat_to_row(const MatrixXd& M, Eigen::Index r, int S, MatrixXd& X) {
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) X(r, i * S + j) = M(i, j);
  }

  // Generator matrix from a rate row: allowed entries in rate_index order,
  // diagonal set to minus the row sum.
  static void build_generator(const TransitionTopology& topo, const MatrixXd& rates, Eigen::Index r, MatrixXd& Q) {
    const int S = topo.n_states;
    Q.setZero(S, S);
    for (int k = 0; k < topo.q_count(); ++k) {
      const auto [i, j] = topo.rate_index[k];
      const double v = rates(r, k);
      Q(i, j) = v;
      Q(i, i) -= v;
    }
  }

 private:
  bool ng(Var v) const { return nodes_[v.id].needs_grad; }

  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  MatrixXd& touch(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = MatrixXd::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  Var bmm_q(Op op, Var block, Var rates, const TransitionTopology& topo) {
    Node n;
    n.op = op;
    n.a = block.id;
    n.b = rates.id;
    n.needs_grad = ng(block) || ng(rates);
    n.topo = &topo;
    const int S = topo.n_states;
    const auto& Bk = nodes_[block.id].val;
    const auto& R = nodes_[rates.id].val;
    n.val.resize(Bk.rows(), S * S);
    MatrixXd Pm(S, S), Q(S, S), Cm(S, S);
    for (Eigen::Index r = 0; r < Bk.rows(); ++r) {
      row_to_mat(Bk, r, S, Pm);
      build_generator(topo, R, r, Q);
      if (op == Op::BmmQRight)
        Cm.noalias() = Pm * Q;
      else
        Cm.noalias() = -(Q * Pm);
      mat_to_row(Cm, r, S, n.val);
    }
    return push(std::move(n));
  }

  void propagate(int id) {
    Node& n = nodes_[id];
    const MatrixXd& g = n.grad;
    switch (n.op) {
      case Op::Input:
        break;
      case Op::Param:
        if (store_) {
          Eigen::Map<MatrixXd>(store_->grad.data() + n.param_offset, g.rows(), g.cols()) += g;
        }
        break;
      case Op::MatMul: {
        const Node& A = nodes_[n.a];
        const Node& B = nodes_[n.b];
        if (A.needs_grad) touch(n.a).noalias() += g * B.val.transpose();
        if (B.needs_grad) touch(n.b).noalias() += A.val.transpose() * g;
        break;
      }
      case Op::AddRowVec: {
        if (nodes_[n.a].needs_grad) touch(n.a) += g;
        if (nodes_[n.b].needs_grad) touch(n.b).row(0) += g.colwise().sum();
        break;
      }
      case Op::Add: {
        if (nodes_[n.a].needs_grad) touch(n.a) += g;
        if (nodes_[n.b].needs_grad) touch(n.b) += g;
        break;
      }
      case Op::Sub: {
        if (nodes_[n.a].needs_grad) touch(n.a) += g;
        if (nodes_[n.b].needs_grad) touch(n.b) -= g;
        break;
      }
      case Op::CMul: {
        if (nodes_[n.a].needs_grad) touch(n.a) += g.cwiseProduct(nodes_[n.b].val);
        if (nodes_[n.b].needs_grad) touch(n.b) += g.cwiseProduct(nodes_[n.a].val);
        break;
      }
      case Op::CMulConst:
        touch(n.a) += g.cwiseProduct(n.aux);
        break;
      case Op::Scale:
        touch(n.a) += g * n.s;
        break;
      case Op::RowScale:
        touch(n.a) += n.auxv.asDiagonal() * g;
        break;
      case Op::Tanh:
        touch(n.a).array() += g.array() * (1.0 - n.val.array().square());
        break;
      case Op::Softplus: {
        const auto& x = nodes_[n.a].val;
        touch(n.a) += g.binaryExpr(x, [](double gg, double xx) { return gg * sigmoid(xx); });
        break;
      }
      case Op::Exp:
        touch(n.a) += g.cwiseProduct(n.val);
        break;
      case Op::Square:
        touch(n.a) += 2.0 * g.cwiseProduct(nodes_[n.a].val);
        break;
      case Op::Clamp: {
        const auto& x = nodes_[n.a].val;
        MatrixXd& ga = touch(n.a);
        for (Eigen::Index j = 0; j < g.cols(); ++j)
          for (Eigen::Index i = 0; i < g.rows(); ++i)
            if (x(i, j) >= n.lo && x(i, j) <= n.hi) ga(i, j) += g(i, j);
        break;
      }
      case Op::LogClamp: {
        const auto& x = nodes_[n.a].val;
        MatrixXd& ga = touch(n.a);
        for (Eigen::Index j = 0; j < g.cols(); ++j)
          for (Eigen::Index i = 0; i < g.rows(); ++i)
            if (x(i, j) >= n.lo) ga(i, j) += g(i, j) / x(i, j);
        break;
      }
      case Op::ConcatCols: {
        Eigen::Index at = 0;
        for (int src : n.more) {
          const Eigen::Index w = nodes_[src].val.cols();
          if (nodes_[src].needs_grad) touch(src) += g.middleCols(at, w);
          at += w;
        }
        break;
      }
      case Op::SliceCols:
        touch(n.a).middleCols(n.off, n.len) += g;
        break;
      case Op::GatherCols: {
        MatrixXd& ga = touch(n.a);
        for (Eigen::Index i = 0; i < g.rows(); ++i) ga(i, n.cols[i]) += g(i, 0);
        break;
      }
      case Op::SumAll:
        touch(n.a).array() += g(0, 0);
        break;
      case Op::BmmQRight:
      case Op::BmmQLeft: {
        const int S = n.topo->n_states;
        const Node& blk = nodes_[n.a];
        const Node& rts = nodes_[n.b];
        MatrixXd* gblk = blk.needs_grad ? &touch(n.a) : nullptr;
        MatrixXd* grts = rts.needs_grad ? &touch(n.b) : nullptr;
        MatrixXd Pm(S, S), Q(S, S), Gm(S, S), Tm(S, S), Qbar(S, S);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          row_to_mat(g, r, S, Gm);
          row_to_mat(blk.val, r, S, Pm);
          build_generator(*n.topo, rts.val, r, Q);
          if (n.op == Op::BmmQRight) {
            if (gblk) {
              Tm.noalias() = Gm * Q.transpose();
              for (int i = 0; i < S; ++i)
                for (int j = 0; j < S; ++j) (*gblk)(r, i * S + j) += Tm(i, j);
            }
            if (grts) Qbar.noalias() = Pm.transpose() * Gm;
          } else {
            if (gblk) {
              Tm.noalias() = -(Q.transpose() * Gm);
              for (int i = 0; i < S; ++i)
                for (int j = 0; j < S; ++j) (*gblk)(r, i * S + j) += Tm(i, j);
            }
            if (grts) Qbar.noalias() = -(Gm * Pm.transpose());
          }
          if (grts) {
            for (int k = 0; k < n.topo->q_count(); ++k) {
              const auto [i, j] = n.topo->rate_index[k];
              (*grts)(r, k) += Qbar(i, j) - Qbar(i, i);
            }
          }
        }
        break;
      }
      case Op::BmmPair: {
        const int S = n.topo->n_states;
        const Node& A = nodes_[n.a];
        const Node& B = nodes_[n.b];
        MatrixXd* ga = A.needs_grad ? &touch(n.a) : nullptr;
        MatrixXd* gb = B.needs_grad ? &touch(n.b) : nullptr;
        MatrixXd Am(S, S), Bm(S, S), Gm(S, S), Tm(S, S);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          row_to_mat(g, r, S, Gm);
          row_to_mat(A.val, r, S, Am);
          row_to_mat(B.val, r, S, Bm);
          if (ga) {
            Tm.noalias() = Gm * Bm.transpose();
            for (int i = 0; i < S; ++i)
              for (int j = 0; j < S; ++j) (*ga)(r, i * S + j) += Tm(i, j);
          }
          if (gb) {
            Tm.noalias() = Am.transpose() * Gm;
            for (int i = 0; i < S; ++i)
              for (int j = 0; j < S; ++j) (*gb)(r, i * S + j) += Tm(i, j);
          }
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  ParamStore* store_ = nullptr;
};

}  // namespace kolmo
