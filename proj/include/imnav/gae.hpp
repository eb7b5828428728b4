#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "imnav/common.hpp"

namespace imnav {

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> value_targets;
};

// Generalized advantage estimation, backward recursion with resets at episode
// ends: A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1},
// delta_t = r_t + gamma * (1 - done_t) * V_{t+1} - V_t, V_n = bootstrap.
// Targets are advantages + values (computed before any normalization).
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const double> dones, double bootstrap_value,
                             double discount, double lambda) {
  const size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw Error("compute_gae: length mismatch");
  GaeResult out;
  out.advantages.resize(n);
  out.value_targets.resize(n);
  double acc = 0.0;
  for (size_t i = n; i-- > 0;) {
    const double not_done = 1.0 - dones[i];
    const double v_next = (i + 1 < n) ? values[i + 1] : bootstrap_value;
    const double delta = rewards[i] + discount * v_next * not_done - values[i];
    acc = delta + discount * lambda * not_done * acc;
    out.advantages[i] = acc;
    out.value_targets[i] = acc + values[i];
  }
  return out;
}

// In-place batch normalization to zero mean and unit standard deviation.
inline void normalize_advantages(std::vector<double>& adv, double eps = 1e-8) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= static_cast<double>(adv.size());
  const double inv = 1.0 / (std::sqrt(var) + eps);
  for (double& a : adv) a = (a - mean) * inv;
}

}  // namespace imnav
