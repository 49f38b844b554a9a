#pragma once

// Fully connected networks over a shared flat parameter store.
//
// Hidden activations are tanh; the output layer is linear. Weights use Glorot
// uniform initialization, biases start at zero. Dropout is the classic form:
// during training hidden activations are multiplied by 0/1 masks, during
// evaluation they are scaled by (1 - p).

#include <Eigen/Dense>
#include <vector>

#include "kolmo/autodiff.hpp"
#include "kolmo/rng.hpp"

namespace kolmo {

struct Mlp {
  std::vector<int> sizes;  // widths including input and output
  double dropout = 0.0;
  int offset = -1;  // first parameter index in the store
  int count = 0;

  static Mlp create(ParamStore& store, std::vector<int> sizes, double dropout, Rng& init_rng) {
    Mlp m;
    m.sizes = std::move(sizes);
    m.dropout = dropout;
    int total = 0;
    for (int l = 0; l + 1 < static_cast<int>(m.sizes.size()); ++l)
      total += m.sizes[l] * m.sizes[l + 1] + m.sizes[l + 1];
    m.offset = store.alloc(total);
    m.count = total;
    int at = m.offset;
    for (int l = 0; l + 1 < static_cast<int>(m.sizes.size()); ++l) {
      const int fan_in = m.sizes[l], fan_out = m.sizes[l + 1];
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (int k = 0; k < fan_in * fan_out; ++k) store.value[at + k] = init_rng.uniform(-limit, limit);
      at += fan_in * fan_out;
      at += fan_out;  // biases stay zero
    }
    return m;
  }

  int n_layers() const { return static_cast<int>(sizes.size()) - 1; }

  int weight_offset(int layer) const {
    int at = offset;
    for (int l = 0; l < layer; ++l) at += sizes[l] * sizes[l + 1] + sizes[l + 1];
    return at;
  }

  int bias_offset(int layer) const { return weight_offset(layer) + sizes[layer] * sizes[layer + 1]; }

  // Inference-mode forward: rows of X are independent inputs.
  MatrixXd forward_plain(const ParamStore& store, const MatrixXd& X) const {
    MatrixXd h = X;
    for (int l = 0; l < n_layers(); ++l) {
      Eigen::Map<const MatrixXd> W(store.value.data() + weight_offset(l), sizes[l], sizes[l + 1]);
      Eigen::Map<const Eigen::RowVectorXd> b(store.value.data() + bias_offset(l), sizes[l + 1]);
      MatrixXd z = (h * W).rowwise() + b;
      if (l + 1 < n_layers()) {
        h = z.array().tanh();
        if (dropout > 0.0) h *= (1.0 - dropout);
      } else {
        h = std::move(z);
      }
    }
    return h;
  }

  struct Bound {
    std::vector<Var> W, b;
  };

  // Create the parameter nodes once per tape; forward() can then be called
  // many times (every solver stage) without copying weights again.
  Bound bind(Tape& tape) const {
    Bound bd;
    for (int l = 0; l < n_layers(); ++l) {
      bd.W.push_back(tape.param(weight_offset(l), sizes[l], sizes[l + 1]));
      bd.b.push_back(tape.param(bias_offset(l), 1, sizes[l + 1]));
    }
    return bd;
  }

  // Taped forward. A non-null dropout_rng selects training mode: fresh 0/1
  // masks on each hidden layer; evaluation mode scales by (1 - p) instead.
  Var forward(Tape& tape, const Bound& bd, Var x, Rng* dropout_rng = nullptr) const {
    Var h = x;
    for (int l = 0; l < n_layers(); ++l) {
      Var z = tape.add_rowvec(tape.matmul(h, bd.W[l]), bd.b[l]);
      if (l + 1 < n_layers()) {
        h = tape.tanh(z);
        if (dropout > 0.0) {
          if (dropout_rng) {
            MatrixXd mask(tape.val(h).rows(), tape.val(h).cols());
            for (Eigen::Index j = 0; j < mask.cols(); ++j)
              for (Eigen::Index i = 0; i < mask.rows(); ++i)
                mask(i, j) = dropout_rng->bernoulli(dropout) ? 0.0 : 1.0;
            h = tape.cmul_const(h, std::move(mask));
          } else {
            h = tape.scale(h, 1.0 - dropout);
          }
        }
      } else {
        h = z;
      }
    }
    return h;
  }
};

// Hidden widths helper: L hidden layers of width N between in and out.
inline std::vector<int> mlp_sizes(int in, int L, int N, int out) {
  std::vector<int> s{in};
  for (int l = 0; l < L; ++l) s.push_back(N);
  s.push_back(out);
  return s;
}

}  // namespace kolmo
