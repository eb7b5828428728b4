#pragma once

#include <array>
#include <span>

#include "imnav/nn/layers.hpp"
#include "imnav/sim.hpp"

namespace imnav {

struct PolicyConfig {
  int img_h = 16;
  int img_w = 64;
  int img_c = 6;  // stacked current + goal channels
  int conv1 = 16;
  int conv2 = 32;
  int conv3 = 32;
  int feat_dim = 256;
  int hidden_dim = 128;
  int action_dim = 2;
  int predictor_hidden = 256;
  int reward_bins = 41;
  double bin_lo = -1.0;
  double bin_hi = 3.0;
  double log_std_init = 0.0;
  double log_std_min = -5.0;
  double log_std_max = 1.0;

  int conv_out_count() const {
    auto down = [](int x) { return (x + 2 - 3) / 2 + 1; };  // k3 s2 p1
    const int h = down(down(down(img_h)));
    const int w = down(down(down(img_w)));
    return conv3 * h * w;
  }
};

// Recurrent context carried across steps of one episode.
struct PolicyState {
  nn::Tensor hidden;
  std::array<double, 2> prev_action{0.0, 0.0};  // normalized

  explicit PolicyState(int hidden_dim = 0) { reset(hidden_dim); }
  void reset(int hidden_dim) {
    if (hidden_dim > 0) hidden = nn::Tensor::zeros({1, hidden_dim});
    else hidden.zero();
    prev_action = {0.0, 0.0};
  }
};

struct ActionDistribution {
  std::array<double, 2> mean{};
  std::array<double, 2> log_std{};
};

namespace dist {

// Stable log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
inline double log1m_tanh_sq(double u) {
  return 2.0 * (std::log(2.0) - u - (std::max(-2.0 * u, 0.0) + std::log1p(std::exp(-std::abs(2.0 * u)))));
}

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2*pi))

// Log density of the tanh-squashed Gaussian at squashed value tanh(u), using
// the pre-squash sample u directly.
inline double tanh_gaussian_log_prob(const std::array<double, 2>& mean,
                                     const std::array<double, 2>& log_std,
                                     const std::array<double, 2>& u) {
  double lp = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double sd = std::exp(log_std[i]);
    const double z = (u[i] - mean[i]) / sd;
    lp += -0.5 * z * z - log_std[i] - kLogSqrt2Pi;
    lp -= log1m_tanh_sq(u[i]);
  }
  return lp;
}

// Tape version over a batch: mean [m,2], log_std [1,2] (already clamped),
// u constant [m,2]. Returns [m,1]. The squash correction depends only on the
// stored u, so it enters as a constant.
inline nn::Var tanh_gaussian_log_prob(nn::Tape& t, nn::Var mean, nn::Var log_std,
                                      const nn::Tensor& u) {
  const int m = u.rows();
  nn::Var vu = t.input(u);
  nn::Var sd = t.exp_(log_std);
  nn::Var z = t.div(t.sub(vu, mean), sd);
  nn::Var quad = t.mul_scalar(t.square(z), -0.5);
  nn::Var terms = t.sub(quad, log_std);  // row broadcast
  terms = t.add_scalar(terms, -kLogSqrt2Pi);
  nn::Tensor corr({m, 1});
  for (int r = 0; r < m; ++r) {
    double c = 0.0;
    for (int i = 0; i < u.cols(); ++i) c += log1m_tanh_sq(u.at(r, i));
    corr.at(r, 0) = c;
  }
  return t.sub(t.row_sum(terms), t.input(corr));
}

// KL between diagonal Gaussians, the first one given as constants (the
// detached branch). Returns [m,1].
inline nn::Var kl_diag_gaussian(nn::Tape& t, const nn::Tensor& mean_p,
                                const nn::Tensor& log_std_p, nn::Var mean_q, nn::Var log_std_q) {
  nn::Var mp = t.input(mean_p);
  nn::Var lsp = t.input(log_std_p);  // [1,2]
  nn::Var var_p = t.exp_(t.mul_scalar(lsp, 2.0));
  nn::Var var_q2 = t.mul_scalar(t.exp_(t.mul_scalar(log_std_q, 2.0)), 2.0);
  nn::Var numer = t.add(t.square(t.sub(mp, mean_q)), var_p);  // [m,2] + [1,2]
  nn::Var frac = t.div(numer, var_q2);
  nn::Var logs = t.sub(log_std_q, lsp);  // [1,2]
  nn::Var kl = t.add(frac, logs);
  kl = t.add_scalar(kl, -0.5);
  return t.row_sum(kl);
}

}  // namespace dist

// The navigation model: image encoder, action-conditioned GRU, Gaussian actor
// with tanh squashing onto the physical action box, value head, and the
// single-step transition predictor used by the future-prediction loss.
class NavPolicy {
 public:
  NavPolicy(PolicyConfig cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng = Rng(seed).fork("policy-init");
    conv1_ = nn::Conv2d(store_, "encoder/conv1", cfg.img_c, cfg.conv1, 3, 2, 1, rng);
    conv2_ = nn::Conv2d(store_, "encoder/conv2", cfg.conv1, cfg.conv2, 3, 2, 1, rng);
    conv3_ = nn::Conv2d(store_, "encoder/conv3", cfg.conv2, cfg.conv3, 3, 2, 1, rng);
    fc_ = nn::Dense(store_, "encoder/fc", cfg.conv_out_count(), cfg.feat_dim, std::sqrt(2.0), rng);
    gru_ = nn::GruCell(store_, "gru", cfg.feat_dim + cfg.action_dim, cfg.hidden_dim, rng);
    actor_mean_ = nn::Dense(store_, "actor/mean", cfg.hidden_dim, cfg.action_dim, 0.01, rng);
    log_std_ = &store_.create("actor/log_std", {1, cfg.action_dim});
    log_std_->value.fill(cfg.log_std_init);
    value_ = nn::Dense(store_, "critic/value", cfg.hidden_dim, 1, 1.0, rng);
    pred1_ = nn::Dense(store_, "predictor/fc1", cfg.feat_dim + cfg.action_dim,
                       cfg.predictor_hidden, std::sqrt(2.0), rng);
    pred2_ = nn::Dense(store_, "predictor/fc2", cfg.predictor_hidden, cfg.predictor_hidden,
                       std::sqrt(2.0), rng);
    pred_reward_ = nn::Dense(store_, "predictor/reward", cfg.predictor_hidden, cfg.reward_bins,
                             1.0, rng);
    pred_latent_ = nn::Dense(store_, "predictor/latent", cfg.predictor_hidden, cfg.feat_dim, 1.0,
                             rng);
    pred_done_ = nn::Dense(store_, "predictor/done", cfg.predictor_hidden, 1, 1.0, rng);
  }

  const PolicyConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  std::vector<nn::Param*> encoder_params() const { return store_.with_prefix({"encoder/"}); }
  std::vector<nn::Param*> predictor_params() const { return store_.with_prefix({"predictor/"}); }
  std::vector<nn::Param*> fp_params() const {
    return store_.with_prefix({"encoder/", "predictor/"});
  }
  std::vector<nn::Param*> ppo_params() const {
    return store_.with_prefix({"encoder/", "gru/", "actor/", "critic/"});
  }

  // ---- graph builders ----

  // obs: [N, img_c, H, W] -> latent [N, feat_dim]
  nn::Var encode(nn::Tape& t, nn::Var obs) const {
    const auto& d = t.val(obs).dims;
    if (d.size() != 4 || d[1] != cfg_.img_c || d[2] != cfg_.img_h || d[3] != cfg_.img_w)
      throw Error("encode: observation shape mismatch, got " + t.val(obs).shape_str());
    nn::Var h = t.silu(conv1_.forward(t, obs));
    h = t.silu(conv2_.forward(t, h));
    h = t.silu(conv3_.forward(t, h));
    h = t.reshape(h, {d[0], cfg_.conv_out_count()});
    return t.silu(fc_.forward(t, h));
  }

  // One recurrent step: z = g(h_t, a_{t-1}).
  nn::Var gru_step(nn::Tape& t, nn::Var feat, nn::Var prev_action, nn::Var hidden) const {
    return gru_.forward(t, t.concat_cols(feat, prev_action), hidden);
  }

  nn::Var actor_mean(nn::Tape& t, nn::Var z) const { return actor_mean_.forward(t, z); }
  nn::Var log_std_clamped(nn::Tape& t) const {
    return t.clamp(t.param(*log_std_), cfg_.log_std_min, cfg_.log_std_max);
  }
  nn::Var value(nn::Tape& t, nn::Var z) const { return value_.forward(t, z); }

  struct PredictorOut {
    nn::Var reward_logits;  // [m, reward_bins]
    nn::Var next_latent;    // [m, feat_dim]
    nn::Var done_logit;     // [m, 1]
  };

  // Single-step transition prediction from (latent, normalized action).
  PredictorOut predict(nn::Tape& t, nn::Var feat, nn::Var action) const {
    nn::Var x = t.concat_cols(feat, action);
    x = t.silu(pred1_.forward(t, x));
    x = t.silu(pred2_.forward(t, x));
    return {pred_reward_.forward(t, x), pred_latent_.forward(t, x), pred_done_.forward(t, x)};
  }

  // ---- rollout / evaluation interface ----

  struct ActResult {
    Action action;                       // physical
    std::array<double, 2> a_norm{};     // tanh-squashed
    std::array<double, 2> u{};          // pre-squash Gaussian sample
    ActionDistribution dist;
    double log_prob = 0.0;
    double value = 0.0;
  };

  ActResult act(PolicyState& state, const Observation& obs, bool stochastic, Rng& rng) const {
    std::vector<PolicyState*> states{&state};
    std::vector<const Observation*> observations{&obs};
    return act_batch(states, observations, stochastic, rng)[0];
  }

  std::vector<ActResult> act_batch(std::vector<PolicyState*>& states,
                                   std::vector<const Observation*>& obs, bool stochastic,
                                   Rng& rng) const {
    const int m = static_cast<int>(states.size());
    nn::Tape t(false);
    nn::Var feat = encode(t, t.input(obs_batch_to_tensor(obs)));
    nn::Tensor prev({m, cfg_.action_dim});
    nn::Tensor hidden({m, cfg_.hidden_dim});
    for (int r = 0; r < m; ++r) {
      prev.at(r, 0) = states[r]->prev_action[0];
      prev.at(r, 1) = states[r]->prev_action[1];
      for (int c = 0; c < cfg_.hidden_dim; ++c) hidden.at(r, c) = states[r]->hidden.at(0, c);
    }
    nn::Var z = gru_step(t, feat, t.input(prev), t.input(hidden));
    nn::Var mean = actor_mean(t, z);
    nn::Var lsd = log_std_clamped(t);
    nn::Var val = value(t, z);

    std::vector<ActResult> out(m);
    const nn::Tensor& zv = t.val(z);
    for (int r = 0; r < m; ++r) {
      ActResult& a = out[r];
      for (int i = 0; i < 2; ++i) {
        a.dist.mean[i] = t.val(mean).at(r, i);
        a.dist.log_std[i] = t.val(lsd).at(0, i);
        const double sd = std::exp(a.dist.log_std[i]);
        a.u[i] = stochastic ? a.dist.mean[i] + sd * rng.normal() : a.dist.mean[i];
        a.a_norm[i] = std::tanh(a.u[i]);
      }
      a.log_prob = dist::tanh_gaussian_log_prob(a.dist.mean, a.dist.log_std, a.u);
      a.value = t.val(val).at(r, 0);
      a.action = Action::from_normalized(a.a_norm[0], a.a_norm[1]);
      for (int c = 0; c < cfg_.hidden_dim; ++c) states[r]->hidden.at(0, c) = zv.at(r, c);
      states[r]->prev_action = a.a_norm;
    }
    return out;
  }

  // Value estimates for the given observations without advancing the states
  // (bootstrap values at rollout boundaries).
  std::vector<double> evaluate_values(const std::vector<PolicyState*>& states,
                                      const std::vector<const Observation*>& obs) const {
    const int m = static_cast<int>(states.size());
    nn::Tape t(false);
    nn::Var feat = encode(t, t.input(obs_batch_to_tensor(obs)));
    nn::Tensor prev({m, cfg_.action_dim});
    nn::Tensor hidden({m, cfg_.hidden_dim});
    for (int r = 0; r < m; ++r) {
      prev.at(r, 0) = states[r]->prev_action[0];
      prev.at(r, 1) = states[r]->prev_action[1];
      for (int c = 0; c < cfg_.hidden_dim; ++c) hidden.at(r, c) = states[r]->hidden.at(0, c);
    }
    nn::Var z = gru_step(t, feat, t.input(prev), t.input(hidden));
    nn::Var val = value(t, z);
    std::vector<double> out(m);
    for (int r = 0; r < m; ++r) out[r] = t.val(val).at(r, 0);
    return out;
  }

  // ---- observation packing ----

  nn::Tensor obs_batch_to_tensor(const std::vector<const Observation*>& obs) const {
    const int m = static_cast<int>(obs.size());
    nn::Tensor out({m, cfg_.img_c, cfg_.img_h, cfg_.img_w});
    const size_t half = static_cast<size_t>(cfg_.img_c / 2) * cfg_.img_h * cfg_.img_w;
    double* dst = out.v.data();
    for (int r = 0; r < m; ++r) {
      if (obs[r]->current.size() != half || obs[r]->goal.size() != half)
        throw Error("observation size does not match the policy input shape");
      for (float x : obs[r]->current) *dst++ = x;
      for (float x : obs[r]->goal) *dst++ = x;
    }
    return out;
  }

  nn::Tensor obs_to_tensor(const Observation& o) const {
    nn::Tensor out({1, cfg_.img_c, cfg_.img_h, cfg_.img_w});
    double* dst = out.v.data();
    for (float x : o.current) *dst++ = x;
    for (float x : o.goal) *dst++ = x;
    return out;
  }

  // Architecture hyperparameters, recorded next to checkpoints.
  void save_policy_card(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error("cannot write policy card: " + path);
    f << "img_h " << cfg_.img_h << "\nimg_w " << cfg_.img_w << "\nimg_c " << cfg_.img_c
      << "\nconv_channels " << cfg_.conv1 << " " << cfg_.conv2 << " " << cfg_.conv3
      << "\nfeat_dim " << cfg_.feat_dim << "\nhidden_dim " << cfg_.hidden_dim << "\naction_dim "
      << cfg_.action_dim << "\npredictor_hidden " << cfg_.predictor_hidden << "\nreward_bins "
      << cfg_.reward_bins << "\nbin_range " << fmt_double(cfg_.bin_lo) << " "
      << fmt_double(cfg_.bin_hi) << "\nlog_std_init " << fmt_double(cfg_.log_std_init)
      << "\nlog_std_clamp " << fmt_double(cfg_.log_std_min) << " " << fmt_double(cfg_.log_std_max)
      << "\nparameters " << store_.total_size() << "\n";
  }

 private:
  PolicyConfig cfg_;
  nn::ParamStore store_;
  nn::Conv2d conv1_, conv2_, conv3_;
  nn::Dense fc_;
  nn::GruCell gru_;
  nn::Dense actor_mean_;
  nn::Param* log_std_ = nullptr;
  nn::Dense value_;
  nn::Dense pred1_, pred2_, pred_reward_, pred_latent_, pred_done_;
};

}  // namespace imnav
