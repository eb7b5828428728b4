#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "imnav/nn/params.hpp"

namespace imnav::nn {

// Rescales gradients so their global L2 norm is at most max_norm; returns the
// pre-clip norm.
inline double clip_grad_norm(const std::vector<Param*>& params, double max_norm) {
  double sq = 0.0;
  for (Param* p : params)
    for (double g : p->grad.v) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Param* p : params)
      for (double& g : p->grad.v) g *= scale;
  }
  return norm;
}

struct AdamConfig {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
};

// Adaptive-moment gradient descent. Moment buffers are keyed per parameter and
// created on first use.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  void step(const std::vector<Param*>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (Param* p : params) {
      State& s = state(p);
      for (int64_t k = 0; k < p->size(); ++k) {
        const double g = p->grad[k];
        s.m[k] = cfg_.beta1 * s.m[k] + (1.0 - cfg_.beta1) * g;
        s.v[k] = cfg_.beta2 * s.v[k] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = s.m[k] / bc1;
        const double vhat = s.v[k] / bc2;
        p->value[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  struct State {
    Tensor m, v;
  };

  State& state(Param* p) {
    auto it = states_.find(p);
    if (it == states_.end()) {
      State s{Tensor::zeros(p->value.dims), Tensor::zeros(p->value.dims)};
      it = states_.emplace(p, std::move(s)).first;
    }
    return it->second;
  }

  AdamConfig cfg_;
  int64_t t_ = 0;
  std::unordered_map<Param*, State> states_;
};

}  // namespace imnav::nn
