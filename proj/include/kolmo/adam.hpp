#pragma once

// Adam with decoupled weight decay. A step whose gradient contains any
// non-finite entry is rejected outright: moments, step counter and parameters
// all stay untouched so training can skip the batch and continue.

#include <cmath>

#include "kolmo/autodiff.hpp"

namespace kolmo {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

inline bool adam_step(ParamStore& p, const AdamConfig& cfg) {
  const int n = p.size();
  for (int i = 0; i < n; ++i)
    if (!std::isfinite(p.grad[i])) return false;
  p.adam_t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.adam_t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.adam_t));
  for (int i = 0; i < n; ++i) {
    const double g = p.grad[i];
    p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
    p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = p.m[i] / c1;
    const double vhat = p.v[i] / c2;
    p.value[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.value[i]);
  }
  return true;
}

}  // namespace kolmo
