#pragma once

#include <array>
#include <span>

#include "imnav/nn/layers.hpp"
#include "imnav/sim.hpp"

namespace imnav {

// Min-pooled, range-normalized depth blocks across the field of view.
// Index 0 covers the leftmost image columns (left half of the FoV is v[0..8)).
struct DepthVector {
  static constexpr int kBlocks = 16;
  std::array<double, kBlocks> v{};

  double min_value() const {
    double m = v[0];
    for (double x : v) m = std::min(m, x);
    return m;
  }
};

// Column-block min pooling over a single ray strip. Values are clipped to
// [0, max_depth] and normalized to [0,1]. When the width is not divisible by
// 16, the remainder columns go to the leftmost blocks.
inline DepthVector preprocess_depth(std::span<const double> rays, double max_depth = 3.0) {
  const int w = static_cast<int>(rays.size());
  if (w < DepthVector::kBlocks) throw Error("preprocess_depth: need at least 16 columns");
  DepthVector out;
  const int base = w / DepthVector::kBlocks;
  const int rem = w % DepthVector::kBlocks;
  int col = 0;
  for (int b = 0; b < DepthVector::kBlocks; ++b) {
    const int len = base + (b < rem ? 1 : 0);
    double m = max_depth;
    for (int k = 0; k < len; ++k, ++col) m = std::min(m, std::clamp(rays[col], 0.0, max_depth));
    out.v[b] = m / max_depth;
  }
  return out;
}

// Depth-image variant: crops the central 20% of rows first (at least one row),
// then min-pools column blocks over the crop.
inline DepthVector preprocess_depth_image(std::span<const double> image, int h, int w,
                                          double max_depth = 3.0) {
  if (static_cast<int>(image.size()) != h * w) throw Error("preprocess_depth_image: bad size");
  const int strip = std::max(1, static_cast<int>(std::lround(0.2 * h)));
  const int row0 = (h - strip) / 2;
  std::vector<double> col_min(w, max_depth);
  for (int r = row0; r < row0 + strip; ++r)
    for (int c = 0; c < w; ++c)
      col_min[c] = std::min(col_min[c], std::clamp(image[static_cast<size_t>(r) * w + c], 0.0, max_depth));
  return preprocess_depth(col_min, max_depth);
}

// Smooth collision likelihood around the safety margin beta.
inline double soft_label(const DepthVector& d, double beta) {
  const double x = 10.0 * (beta - d.min_value());
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

struct ShieldConfig {
  enum class Mode { kGradient, kFixedInterval };

  double beta = 0.3;       // normalized safety distance (0.9 m at 3 m range)
  double d_c = 0.5;        // collision-probability threshold
  double delta_lin = 0.3;  // normalized correction steps
  double delta_ang = 0.3;
  int max_corrections = 5;
  double eta_c = 0.1;      // gradient-mode step size
  Mode mode = Mode::kFixedInterval;

  void validate() const {
    if (!(beta > 0.0 && beta < 1.0)) throw Error("ShieldConfig: beta must be in (0,1)");
    if (!(d_c > 0.0 && d_c < 1.0)) throw Error("ShieldConfig: d_c must be in (0,1)");
    if (max_corrections < 1) throw Error("ShieldConfig: max_corrections must be >= 1");
  }
};

inline ShieldConfig::Mode shield_mode_from_string(const std::string& s) {
  if (s == "gradient") return ShieldConfig::Mode::kGradient;
  if (s == "fixed_interval") return ShieldConfig::Mode::kFixedInterval;
  throw Error("unknown shield mode: " + s);
}

inline std::string to_string(ShieldConfig::Mode m) {
  return m == ShieldConfig::Mode::kGradient ? "gradient" : "fixed_interval";
}

// Predictor interface; tests substitute synthetic models with known gradients.
class CollisionModel {
 public:
  virtual ~CollisionModel() = default;
  virtual double probability(const DepthVector& d, const std::array<double, 2>& a_norm) const = 0;
  virtual std::array<double, 2> action_gradient(const DepthVector& d,
                                                const std::array<double, 2>& a_norm) const = 0;
};

// Q_c: small dense net on s^d (+) normalized action with a sigmoid output.
class CollisionPredictor : public CollisionModel {
 public:
  explicit CollisionPredictor(uint64_t seed, int hidden = 64) {
    Rng rng = Rng(seed).fork("qc-init");
    fc1_ = nn::Dense(store_, "qc/fc1", DepthVector::kBlocks + 2, hidden, std::sqrt(2.0), rng);
    fc2_ = nn::Dense(store_, "qc/fc2", hidden, hidden, std::sqrt(2.0), rng);
    out_ = nn::Dense(store_, "qc/out", hidden, 1, 1.0, rng);
  }

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  // Training graph over a batch: input [m, 18] -> logits [m, 1].
  nn::Var logits(nn::Tape& t, nn::Var input) const {
    nn::Var x = t.silu(fc1_.forward(t, input));
    x = t.silu(fc2_.forward(t, x));
    return out_.forward(t, x);
  }

  static nn::Tensor pack_input(const DepthVector& d, const std::array<double, 2>& a) {
    nn::Tensor in({1, DepthVector::kBlocks + 2});
    for (int i = 0; i < DepthVector::kBlocks; ++i) in[i] = d.v[i];
    in[DepthVector::kBlocks] = a[0];
    in[DepthVector::kBlocks + 1] = a[1];
    return in;
  }

  double probability(const DepthVector& d, const std::array<double, 2>& a) const override {
    nn::Tape t(false);
    nn::Var p = t.sigmoid(logits(t, t.input(pack_input(d, a))));
    return t.val(p).item();
  }

  std::array<double, 2> action_gradient(const DepthVector& d,
                                        const std::array<double, 2>& a) const override {
    nn::Tape t(true);
    nn::Var in = t.tracked_input(pack_input(d, a));
    nn::Var p = t.sigmoid(logits(t, in));
    t.backward(p);
    const nn::Tensor& g = t.grad(in);
    return {g[DepthVector::kBlocks], g[DepthVector::kBlocks + 1]};
  }

 private:
  nn::ParamStore store_;
  nn::Dense fc1_, fc2_, out_;
};

// Binary cross-entropy on logits: mean(softplus(x) - x * y).
inline nn::Var bce_with_logits(nn::Tape& t, nn::Var logits, const nn::Tensor& targets) {
  nn::Var y = t.input(targets);
  return t.mean_all(t.sub(t.softplus(logits), t.mul(logits, y)));
}

// ---- collision-predictor training on a transition stream ----

struct QcSample {
  DepthVector depth;              // s^d_t observed before acting
  std::array<double, 2> action{}; // normalized a_t
  int collision = 0;              // hard label: did a_t cause contact
};

struct QcTrainConfig {
  int epochs = 4;
  int minibatch = 256;
  double lr = 1e-3;
  double beta = 0.3;
  double max_grad_norm = 0.0;  // disabled
  uint64_t seed = 0;
};

// Deterministic 1:1 hard/soft label mixture: even stream indices use the hard
// collision label, odd indices the soft depth label.
inline double mixed_label(const QcSample& s, size_t stream_index, double beta) {
  if (stream_index % 2 == 0) return static_cast<double>(s.collision);
  return soft_label(s.depth, beta);
}

inline void train_qc(CollisionPredictor& qc, std::span<const QcSample> samples,
                     const QcTrainConfig& cfg) {
  if (samples.empty()) return;
  std::vector<double> labels(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) labels[i] = mixed_label(samples[i], i, cfg.beta);

  nn::Adam opt({.lr = cfg.lr});
  Rng rng = Rng(cfg.seed).fork("qc-train");
  std::vector<int64_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  auto params = qc.params().all();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the portable rng
    for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);
    for (size_t start = 0; start < order.size(); start += cfg.minibatch) {
      const size_t end = std::min(order.size(), start + cfg.minibatch);
      const int m = static_cast<int>(end - start);
      nn::Tensor in({m, DepthVector::kBlocks + 2});
      nn::Tensor target({m, 1});
      for (int r = 0; r < m; ++r) {
        const QcSample& s = samples[order[start + r]];
        for (int i = 0; i < DepthVector::kBlocks; ++i) in.at(r, i) = s.depth.v[i];
        in.at(r, DepthVector::kBlocks) = s.action[0];
        in.at(r, DepthVector::kBlocks + 1) = s.action[1];
        target.at(r, 0) = labels[order[start + r]];
      }
      qc.params().zero_grads();
      nn::Tape t;
      nn::Var loss = bce_with_logits(t, qc.logits(t, t.input(in)), target);
      t.backward(loss);
      if (cfg.max_grad_norm > 0.0) nn::clip_grad_norm(params, cfg.max_grad_norm);
      opt.step(params);
    }
  }
}

// ---- action correction ----

struct CorrectionResult {
  std::array<double, 2> action{};  // normalized
  bool corrected = false;
  bool fallback = false;
  int iterations = 0;
  double q_initial = 0.0;
  double q_final = 0.0;
};

// Steering sign for the fixed-interval correction: subtracting D * delta_ang
// turns toward the half of the FoV with more clearance (positive v_ang is a
// left turn, v[0..8) is the left half). Ties return +1.
inline int compute_direction(const DepthVector& d) {
  double left = 0.0, right = 0.0;
  for (int i = 0; i < DepthVector::kBlocks / 2; ++i) left += d.v[i];
  for (int i = DepthVector::kBlocks / 2; i < DepthVector::kBlocks; ++i) right += d.v[i];
  return left > right ? -1 : 1;
}

// Iterative gradient projection: a <- a - eta_c * d/da [Q_c - d_c]^+ with
// clamping, until Q_c < d_c or the iteration cap.
inline CorrectionResult correct_gradient(const CollisionModel& model, const DepthVector& d,
                                         std::array<double, 2> a, const ShieldConfig& cfg) {
  CorrectionResult res;
  double q = model.probability(d, a);
  res.q_initial = q;
  while (q >= cfg.d_c && res.iterations < cfg.max_corrections) {
    const auto g = model.action_gradient(d, a);
    a[0] = std::clamp(a[0] - cfg.eta_c * g[0], -1.0, 1.0);
    a[1] = std::clamp(a[1] - cfg.eta_c * g[1], -1.0, 1.0);
    ++res.iterations;
    res.corrected = true;
    q = model.probability(d, a);
  }
  res.action = a;
  res.q_final = q;
  return res;
}

// Fixed-interval correction with the rotate-in-place escape: after
// max_corrections the forward speed is cut to physical zero and the command
// becomes a pure max-rate rotation toward the clearer side.
inline CorrectionResult correct_fixed(const CollisionModel& model, const DepthVector& d,
                                      std::array<double, 2> a, const ShieldConfig& cfg) {
  CorrectionResult res;
  double q = model.probability(d, a);
  res.q_initial = q;
  const int dir = compute_direction(d);
  while (q >= cfg.d_c && res.iterations < cfg.max_corrections) {
    a[0] = std::clamp(a[0] - cfg.delta_lin, -1.0, 1.0);
    a[1] = std::clamp(a[1] - dir * cfg.delta_ang, -1.0, 1.0);
    ++res.iterations;
    res.corrected = true;
    q = model.probability(d, a);
  }
  if (q >= cfg.d_c) {
    res.fallback = true;
    a = {-1.0, static_cast<double>(-dir)};  // normalized: v_lin = 0 m/s, full-rate turn
    q = model.probability(d, a);
  }
  res.action = a;
  res.q_final = q;
  return res;
}

inline CorrectionResult shield_correct(const CollisionModel& model, const DepthVector& d,
                                       const std::array<double, 2>& a, const ShieldConfig& cfg) {
  return cfg.mode == ShieldConfig::Mode::kGradient ? correct_gradient(model, d, a, cfg)
                                                   : correct_fixed(model, d, a, cfg);
}

}  // namespace imnav
