#pragma once

#include <functional>
#include <iomanip>

#include "imnav/gae.hpp"
#include "imnav/rollout.hpp"
#include "imnav/twohot.hpp"

namespace imnav {

// ---- image augmentation ----

// Translates a CHW image by integer offsets with edge-replication padding.
inline void shift_image_chw(const float* src, float* dst, int c_count, int h, int w, int dx,
                            int dy) {
  for (int c = 0; c < c_count; ++c) {
    const float* plane = src + static_cast<size_t>(c) * h * w;
    float* out = dst + static_cast<size_t>(c) * h * w;
    for (int r = 0; r < h; ++r) {
      const int sr = std::clamp(r - dy, 0, h - 1);
      for (int col = 0; col < w; ++col) {
        const int sc = std::clamp(col - dx, 0, w - 1);
        out[static_cast<size_t>(r) * w + col] = plane[static_cast<size_t>(sr) * w + sc];
      }
    }
  }
}

// Spec op: uniform integer offsets in [-max_shift, max_shift] per axis.
inline std::vector<float> random_shift(const std::vector<float>& image, int c_count, int h, int w,
                                       int max_shift, Rng& rng) {
  if (max_shift < 0) throw Error("random_shift: max_shift must be >= 0");
  std::vector<float> out(image.size());
  const int dx = max_shift == 0 ? 0 : static_cast<int>(rng.uniform_int(-max_shift, max_shift));
  const int dy = max_shift == 0 ? 0 : static_cast<int>(rng.uniform_int(-max_shift, max_shift));
  shift_image_chw(image.data(), out.data(), c_count, h, w, dx, dy);
  return out;
}

// ---- configuration ----

struct TrainConfig {
  int num_envs = 8;       // B
  int rollout_len = 256;  // L
  double clip_eps = 0.2;
  double discount = 0.99;
  double gae_lambda = 0.95;
  int ppo_epochs = 2;
  int minibatches = 4;
  int chunk_len = 64;  // recurrent minibatch chunk length
  double lambda_r = 0.1;
  double lambda_d = 1.0;
  double lambda_T = 0.1;
  double lambda_rs = 0.5;
  int reward_bins = 41;
  double bin_lo = -1.0;
  double bin_hi = 3.0;
  int shift_max = 4;
  double lr = 2.5e-4;
  double max_grad_norm = 0.5;
  double entropy_coef = 0.0;  // off by default; exploration relies on learned log_std
  bool use_fp = true;
  bool use_rs = true;
  bool train_collision_predictor = true;
  double qc_lr = 1e-3;
  double qc_beta = 0.3;  // soft-label margin for joint Q_c training
  Profile profile = Profile::kCluttered;
  Difficulty difficulty = Difficulty::kEasy;
  int num_worlds = 8;
  EnvConfig env;

  void validate() const {
    if (num_envs < 1 || rollout_len < 1) throw Error("TrainConfig: need envs and rollout length");
    if (lambda_r < 0 || lambda_d < 0 || lambda_T < 0 || lambda_rs < 0)
      throw Error("TrainConfig: loss weights must be >= 0");
    if (bin_hi <= bin_lo || reward_bins < 2) throw Error("TrainConfig: bad reward-bin spec");
    if (rollout_len % chunk_len != 0)
      throw Error("TrainConfig: chunk_len must divide rollout_len");
    const int chunks = num_envs * (rollout_len / chunk_len);
    if (chunks % minibatches != 0)
      throw Error("TrainConfig: minibatches must divide the chunk count");
    if (clip_eps <= 0.0) throw Error("TrainConfig: clip_eps must be positive");
    if (shift_max < 0) throw Error("TrainConfig: shift_max must be >= 0");
  }
};

struct UpdateStats {
  int64_t update_index = 0;
  int64_t env_steps = 0;
  double mean_reward = 0.0;  // rolling mean episode return
  double rolling_sr = 0.0;
  double mean_ep_len = 0.0;
  double loss_policy = 0.0;
  double loss_value = 0.0;
  double loss_fp = 0.0;
  double loss_fp_reward = 0.0;
  double loss_fp_dyn = 0.0;
  double loss_fp_term = 0.0;
  double loss_rs = 0.0;
  double loss_qc = 0.0;
  double grad_norm_policy = 0.0;
  double grad_norm_fp = 0.0;
  double grad_norm_qc = 0.0;
  double clip_frac = 0.0;
  double log_std_mean = 0.0;
};

inline const char* stats_csv_header() {
  return "update,env_steps,mean_reward,rolling_sr,mean_ep_len,loss_policy,loss_value,loss_fp,"
         "loss_fp_reward,loss_fp_dyn,loss_fp_term,loss_rs,loss_qc,grad_norm_policy,grad_norm_fp,"
         "grad_norm_qc,clip_frac,log_std_mean";
}

inline std::string stats_csv_row(const UpdateStats& s) {
  std::ostringstream os;
  os << s.update_index << ',' << s.env_steps << ',' << fmt_double(s.mean_reward) << ','
     << fmt_double(s.rolling_sr) << ',' << fmt_double(s.mean_ep_len) << ','
     << fmt_double(s.loss_policy) << ',' << fmt_double(s.loss_value) << ','
     << fmt_double(s.loss_fp) << ',' << fmt_double(s.loss_fp_reward) << ','
     << fmt_double(s.loss_fp_dyn) << ',' << fmt_double(s.loss_fp_term) << ','
     << fmt_double(s.loss_rs) << ',' << fmt_double(s.loss_qc) << ','
     << fmt_double(s.grad_norm_policy) << ',' << fmt_double(s.grad_norm_fp) << ','
     << fmt_double(s.grad_norm_qc) << ',' << fmt_double(s.clip_frac) << ','
     << fmt_double(s.log_std_mean);
  return os.str();
}

// ---- trainer ----

// On-policy training: collect B x L transitions, compute advantages, then per
// update run the future-prediction minibatches first (encoder + predictor),
// followed by the PPO epochs (encoder, GRU, actor, critic) with the shift
// consistency term, training the collision predictor inside the PPO loop.
class Trainer {
 public:
  Trainer(TrainConfig cfg, PolicyConfig pcfg, uint64_t seed)
      : cfg_(validated(cfg)),
        policy_(with_bins(pcfg, cfg), seed),
        qc_(seed),
        venv_(cfg.num_envs, {cfg.profile, cfg.difficulty, cfg.num_worlds, cfg.env}, seed),
        coder_(TwoHotCoder::uniform(cfg.reward_bins, cfg.bin_lo, cfg.bin_hi)),
        adam_policy_({.lr = cfg.lr}),
        adam_fp_({.lr = cfg.lr}),
        adam_qc_({.lr = cfg.qc_lr}),
        rollout_rng_(Rng(seed).fork("rollout")),
        shuffle_rng_(Rng(seed).fork("shuffle")),
        aug_rng_(Rng(seed).fork("augment")) {
    states_.assign(cfg.num_envs, PolicyState(policy_.config().hidden_dim));
  }

  NavPolicy& policy() { return policy_; }
  const NavPolicy& policy() const { return policy_; }
  CollisionPredictor& collision_predictor() { return qc_; }
  VecTrainEnv& envs() { return venv_; }
  const TwoHotCoder& coder() const { return coder_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t env_steps() const { return env_steps_; }

  // Rollout + GAE + batch-normalized advantages.
  RolloutBatch collect() {
    RolloutBatch rb;
    venv_.collect(policy_, states_, rollout_rng_, cfg_.rollout_len, rb);
    env_steps_ += rb.count();
    rb.advantages.resize(rb.count());
    rb.value_targets.resize(rb.count());
    for (int b = 0; b < rb.B; ++b) {
      const int64_t off = rb.idx(b, 0);
      auto res = compute_gae(std::span(rb.reward).subspan(off, rb.L),
                             std::span(rb.value).subspan(off, rb.L),
                             std::span(rb.done).subspan(off, rb.L), rb.bootstrap_value[b],
                             cfg_.discount, cfg_.gae_lambda);
      std::copy(res.advantages.begin(), res.advantages.end(), rb.advantages.begin() + off);
      std::copy(res.value_targets.begin(), res.value_targets.end(),
                rb.value_targets.begin() + off);
    }
    normalize_advantages(rb.advantages);
    return rb;
  }

  // ---- future-prediction loss (reward + dynamics + termination) ----

  struct FpLossVars {
    nn::Var total, reward, dyn, term;
  };

  // Latent targets come from a separate non-recording encoder pass, which is
  // the detach of the target branch; predictions for terminal transitions are
  // excluded from the dynamic term because the successor frame belongs to the
  // next episode. `target_override` substitutes precomputed latent targets
  // (gradient checks use it to hold the detached branch fixed).
  FpLossVars build_fp_loss(nn::Tape& t, const RolloutBatch& rb, std::span<const int64_t> idx,
                           const nn::Tensor* target_override = nullptr) const {
    const int m = static_cast<int>(idx.size());
    const PolicyConfig& pc = policy_.config();

    nn::Tensor next_latent_target;
    if (target_override) {
      next_latent_target = *target_override;
    } else {
      nn::Tape tt(false);
      next_latent_target = tt.val(policy_.encode(tt, tt.input(gather_obs(rb.next_obs, rb, idx))));
    }

    nn::Var h = policy_.encode(t, t.input(gather_obs(rb.obs, rb, idx)));
    nn::Tensor actions({m, 2});
    nn::Tensor twohot({m, coder_.size()});
    nn::Tensor done_col({m, 1});
    nn::Tensor mask_col({m, 1});
    double mask_sum = 0.0;
    for (int r = 0; r < m; ++r) {
      const int64_t i = idx[r];
      actions.at(r, 0) = rb.a_norm[i * 2];
      actions.at(r, 1) = rb.a_norm[i * 2 + 1];
      coder_.encode(rb.reward[i], &twohot.v[static_cast<size_t>(r) * coder_.size()]);
      done_col.at(r, 0) = rb.done[i];
      mask_col.at(r, 0) = 1.0 - rb.done[i];
      mask_sum += mask_col.at(r, 0);
    }

    auto heads = policy_.predict(t, h, t.input(actions));

    nn::Var ce = t.neg(t.mean_all(
        t.row_sum(t.mul(t.log_softmax_rows(heads.reward_logits), t.input(twohot)))));
    nn::Var diff = t.sub(heads.next_latent, t.input(next_latent_target));
    nn::Var per_sample = t.mul_scalar(t.row_sum(t.square(diff)), 1.0 / pc.feat_dim);
    nn::Var dyn = t.mul_scalar(t.sum_all(t.mul(per_sample, t.input(mask_col))),
                               1.0 / std::max(1.0, mask_sum));
    nn::Var term = t.mean_all(t.square(t.sub(t.sigmoid(heads.done_logit), t.input(done_col))));

    nn::Var total = t.add(t.add(t.mul_scalar(ce, cfg_.lambda_r), t.mul_scalar(dyn, cfg_.lambda_d)),
                          t.mul_scalar(term, cfg_.lambda_T));
    return {total, ce, dyn, term};
  }

  // ---- PPO minibatch over contiguous sequence chunks ----

  struct Chunk {
    int b = 0, t0 = 0;
  };

  std::vector<Chunk> make_chunks(const RolloutBatch& rb) const {
    std::vector<Chunk> chunks;
    for (int b = 0; b < rb.B; ++b)
      for (int t0 = 0; t0 < rb.L; t0 += cfg_.chunk_len) chunks.push_back({b, t0});
    return chunks;
  }

  struct PpoBuild {
    nn::Var objective, policy_loss, value_loss, rs_loss;
    double clip_frac = 0.0;
    std::vector<int64_t> sample_indices;  // flattened batch indices, row order
  };

  // Rows are step-major: row(s, c) = s * n_chunks + c. BPTT starts from the
  // hidden state stored at each chunk boundary and hidden states are zeroed
  // across episode ends inside the chunk.
  PpoBuild build_ppo_minibatch(nn::Tape& t, const RolloutBatch& rb, std::span<const Chunk> chunks,
                               Rng& aug_rng) const {
    const PolicyConfig& pc = policy_.config();
    const int nc = static_cast<int>(chunks.size());
    const int S = cfg_.chunk_len;
    const int m = nc * S;

    PpoBuild out;
    out.sample_indices.resize(m);
    for (int s = 0; s < S; ++s)
      for (int c = 0; c < nc; ++c)
        out.sample_indices[static_cast<size_t>(s) * nc + c] = rb.idx(chunks[c].b, chunks[c].t0 + s);

    nn::Var z_clean = unroll(t, rb, chunks, /*augment=*/nullptr);
    nn::Var mean = policy_.actor_mean(t, z_clean);
    nn::Var lsd = policy_.log_std_clamped(t);
    nn::Var val = policy_.value(t, z_clean);

    nn::Tensor u_mat({m, 2}), logp_old({m, 1}), adv({m, 1}), targets({m, 1});
    for (int r = 0; r < m; ++r) {
      const int64_t i = out.sample_indices[r];
      u_mat.at(r, 0) = rb.u[i * 2];
      u_mat.at(r, 1) = rb.u[i * 2 + 1];
      logp_old.at(r, 0) = rb.log_prob[i];
      adv.at(r, 0) = rb.advantages[i];
      targets.at(r, 0) = rb.value_targets[i];
    }

    nn::Var logp_new = dist::tanh_gaussian_log_prob(t, mean, lsd, u_mat);
    nn::Var ratio = t.exp_(t.sub(logp_new, t.input(logp_old)));
    nn::Var adv_col = t.input(adv);
    nn::Var surr1 = t.mul(ratio, adv_col);
    nn::Var surr2 = t.mul(t.clamp(ratio, 1.0 - cfg_.clip_eps, 1.0 + cfg_.clip_eps), adv_col);
    out.policy_loss = t.mean_all(t.min_elem(surr1, surr2));  // maximized
    out.value_loss = t.mul_scalar(t.mean_all(t.square(t.sub(t.input(targets), val))), 0.5);
    out.objective = t.add(t.neg(out.policy_loss), out.value_loss);

    int clipped = 0;
    for (int r = 0; r < m; ++r)
      if (std::abs(t.val(ratio).at(r, 0) - 1.0) > cfg_.clip_eps) ++clipped;
    out.clip_frac = static_cast<double>(clipped) / m;

    if (cfg_.use_rs) {
      nn::Var z_aug = unroll(t, rb, chunks, &aug_rng);
      nn::Var mean_aug = policy_.actor_mean(t, z_aug);
      nn::Var lsd_aug = policy_.log_std_clamped(t);
      nn::Var val_aug = policy_.value(t, z_aug);
      nn::Var kl = dist::kl_diag_gaussian(t, t.val(mean), t.val(lsd), mean_aug, lsd_aug);
      nn::Var vmse = t.mean_all(t.square(t.sub(t.input(t.val(val)), val_aug)));
      out.rs_loss = t.add(t.mean_all(kl), vmse);
      out.objective = t.add(out.objective, t.mul_scalar(out.rs_loss, cfg_.lambda_rs));
    } else {
      out.rs_loss = t.constant(0.0);
    }

    if (cfg_.entropy_coef > 0.0) {
      nn::Var ent = t.sum_all(t.add_scalar(lsd, 0.5 * std::log(2.0 * kPi * std::exp(1.0))));
      out.objective = t.sub(out.objective, t.mul_scalar(ent, cfg_.entropy_coef));
    }
    return out;
  }

  // ---- collision-predictor minibatch (inside the PPO loop) ----

  // Even minibatch positions train on the hard collision label, odd positions
  // on the soft depth label (deterministic 1:1 mixture).
  double train_qc_on(const RolloutBatch& rb, std::span<const int64_t> idx) {
    const int m = static_cast<int>(idx.size());
    nn::Tensor in({m, DepthVector::kBlocks + 2});
    nn::Tensor target({m, 1});
    for (int r = 0; r < m; ++r) {
      const int64_t i = idx[r];
      DepthVector dv;
      for (int k = 0; k < DepthVector::kBlocks; ++k) {
        dv.v[k] = rb.depth_blocks[i * DepthVector::kBlocks + k];
        in.at(r, k) = dv.v[k];
      }
      in.at(r, DepthVector::kBlocks) = rb.a_norm[i * 2];
      in.at(r, DepthVector::kBlocks + 1) = rb.a_norm[i * 2 + 1];
      target.at(r, 0) = (r % 2 == 0) ? rb.collision[i] : soft_label(dv, cfg_.qc_beta);
    }
    qc_.params().zero_grads();
    nn::Tape t;
    nn::Var loss = bce_with_logits(t, qc_.logits(t, t.input(in)), target);
    const double loss_value = t.val(loss).item();
    t.backward(loss);
    auto params = qc_.params().all();
    last_qc_grad_norm_ = nn::clip_grad_norm(params, cfg_.max_grad_norm);
    adam_qc_.step(params);
    return loss_value;
  }

  // ---- Algorithm-1 update ----

  UpdateStats update() {
    RolloutBatch rb = collect();
    return update_on(rb);
  }

  UpdateStats update_on(RolloutBatch& rb) {
    UpdateStats st;
    st.update_index = ++update_count_;
    st.env_steps = env_steps_;
    st.mean_reward = venv_.rolling_mean_return();
    st.rolling_sr = venv_.rolling_success_rate();
    st.mean_ep_len = venv_.rolling_mean_length();

    const int64_t n = rb.count();
    auto fp_params = policy_.fp_params();
    auto ppo_params = policy_.ppo_params();

    // future-prediction pass
    if (cfg_.use_fp) {
      std::vector<int64_t> order(n);
      for (int64_t i = 0; i < n; ++i) order[i] = i;
      shuffle(order, shuffle_rng_);
      const int64_t mb = n / cfg_.minibatches;
      double wsum = 0.0;
      for (int k = 0; k < cfg_.minibatches; ++k) {
        policy_.params().zero_grads();
        nn::Tape t;
        auto loss = build_fp_loss(t, rb, std::span(order).subspan(k * mb, mb));
        check_finite(t, loss.total, "future-prediction loss");
        t.backward(loss.total);
        st.grad_norm_fp += nn::clip_grad_norm(fp_params, cfg_.max_grad_norm);
        adam_fp_.step(fp_params);
        st.loss_fp += t.val(loss.total).item();
        st.loss_fp_reward += t.val(loss.reward).item();
        st.loss_fp_dyn += t.val(loss.dyn).item();
        st.loss_fp_term += t.val(loss.term).item();
        wsum += 1.0;
      }
      st.loss_fp /= wsum;
      st.loss_fp_reward /= wsum;
      st.loss_fp_dyn /= wsum;
      st.loss_fp_term /= wsum;
      st.grad_norm_fp /= wsum;
    }

    // PPO epochs with the shift-consistency term; Q_c trains inside the loop
    std::vector<Chunk> chunks = make_chunks(rb);
    const int per_mb = static_cast<int>(chunks.size()) / cfg_.minibatches;
    double passes = 0.0;
    for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
      shuffle(chunks, shuffle_rng_);
      for (int k = 0; k < cfg_.minibatches; ++k) {
        policy_.params().zero_grads();
        nn::Tape t;
        auto build = build_ppo_minibatch(t, rb, std::span(chunks).subspan(k * per_mb, per_mb),
                                         aug_rng_);
        check_finite(t, build.policy_loss, "policy surrogate");
        check_finite(t, build.value_loss, "value loss");
        check_finite(t, build.rs_loss, "shift-consistency loss");
        t.backward(build.objective);
        st.grad_norm_policy += nn::clip_grad_norm(ppo_params, cfg_.max_grad_norm);
        adam_policy_.step(ppo_params);
        st.loss_policy += -t.val(build.policy_loss).item();
        st.loss_value += t.val(build.value_loss).item();
        st.loss_rs += t.val(build.rs_loss).item();
        st.clip_frac += build.clip_frac;
        if (cfg_.train_collision_predictor) st.loss_qc += train_qc_on(rb, build.sample_indices);
        passes += 1.0;
      }
    }
    st.loss_policy /= passes;
    st.loss_value /= passes;
    st.loss_rs /= passes;
    st.loss_qc /= passes;
    st.clip_frac /= passes;
    st.grad_norm_policy /= passes;
    st.grad_norm_qc = last_qc_grad_norm_;
    const auto& ls = policy_.params().at("actor/log_std").value;
    st.log_std_mean = (ls[0] + ls[1]) / 2.0;
    return st;
  }

  void train(int64_t total_env_steps, std::ostream* stats_csv,
             const std::function<void(const UpdateStats&)>& on_update = {}) {
    if (stats_csv) *stats_csv << stats_csv_header() << "\n";
    while (env_steps_ < total_env_steps) {
      UpdateStats st = update();
      if (stats_csv) *stats_csv << stats_csv_row(st) << "\n" << std::flush;
      if (on_update) on_update(st);
    }
  }

  void save_checkpoint(const std::string& dir) const {
    policy_.params().save(dir + "/policy.ckpt");
    qc_.params().save(dir + "/qc.ckpt");
    policy_.save_policy_card(dir + "/policy_card.txt");
  }
  void load_policy(const std::string& path) { policy_.params().load(path); }
  void load_qc(const std::string& path) { qc_.params().load(path); }

 private:
  static TrainConfig validated(TrainConfig cfg) {
    cfg.validate();
    return cfg;
  }
  static PolicyConfig with_bins(PolicyConfig pc, const TrainConfig& tc) {
    pc.reward_bins = tc.reward_bins;
    pc.bin_lo = tc.bin_lo;
    pc.bin_hi = tc.bin_hi;
    return pc;
  }

  template <typename T>
  static void shuffle(std::vector<T>& v, Rng& rng) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i)
      std::swap(v[i], v[rng.uniform_int(0, i)]);
  }

  static void check_finite(nn::Tape& t, nn::Var v, const char* what) {
    if (!t.val(v).all_finite())
      throw Error(std::string("update aborted: non-finite value in ") + what);
  }

  nn::Tensor gather_obs(const std::vector<float>& src, const RolloutBatch& rb,
                        std::span<const int64_t> idx) const {
    const PolicyConfig& pc = policy_.config();
    const int m = static_cast<int>(idx.size());
    nn::Tensor out({m, pc.img_c, pc.img_h, pc.img_w});
    double* dst = out.v.data();
    for (int r = 0; r < m; ++r) {
      const float* row = &src[idx[r] * rb.obs_floats];
      for (int k = 0; k < rb.obs_floats; ++k) *dst++ = row[k];
    }
    return out;
  }

  // Encoder + GRU over a set of chunks, step-major rows. When `augment` is
  // set, the current-image channels get per-sample random shifts while the
  // goal channels pass through unchanged.
  nn::Var unroll(nn::Tape& t, const RolloutBatch& rb, std::span<const Chunk> chunks,
                 Rng* augment) const {
    const PolicyConfig& pc = policy_.config();
    const int nc = static_cast<int>(chunks.size());
    const int S = cfg_.chunk_len;
    const int m = nc * S;
    const int plane = pc.img_h * pc.img_w;
    const int half = 3 * plane;

    nn::Tensor obs({m, pc.img_c, pc.img_h, pc.img_w});
    std::vector<float> shifted(half);
    for (int s = 0; s < S; ++s) {
      for (int c = 0; c < nc; ++c) {
        const int64_t i = rb.idx(chunks[c].b, chunks[c].t0 + s);
        const float* row = &rb.obs[i * rb.obs_floats];
        double* dst = &obs.v[(static_cast<size_t>(s) * nc + c) * rb.obs_floats];
        if (augment && cfg_.shift_max > 0) {
          const int dx = static_cast<int>(augment->uniform_int(-cfg_.shift_max, cfg_.shift_max));
          const int dy = static_cast<int>(augment->uniform_int(-cfg_.shift_max, cfg_.shift_max));
          shift_image_chw(row, shifted.data(), 3, pc.img_h, pc.img_w, dx, dy);
          for (int k = 0; k < half; ++k) dst[k] = shifted[k];
        } else {
          for (int k = 0; k < half; ++k) dst[k] = row[k];
        }
        for (int k = half; k < rb.obs_floats; ++k) dst[k] = row[k];
      }
    }

    nn::Var feats = policy_.encode(t, t.input(std::move(obs)));

    nn::Tensor h0({nc, pc.hidden_dim});
    for (int c = 0; c < nc; ++c) {
      const int64_t i = rb.idx(chunks[c].b, chunks[c].t0);
      for (int k = 0; k < pc.hidden_dim; ++k) h0.at(c, k) = rb.hidden[i * pc.hidden_dim + k];
    }

    std::vector<nn::Var> zs;
    zs.reserve(S);
    nn::Var h = t.input(std::move(h0));
    for (int s = 0; s < S; ++s) {
      if (s > 0) {
        nn::Tensor mask({nc, 1});
        for (int c = 0; c < nc; ++c)
          mask.at(c, 0) = 1.0 - rb.done[rb.idx(chunks[c].b, chunks[c].t0 + s - 1)];
        h = t.mul(h, t.input(std::move(mask)));
      }
      nn::Tensor prev({nc, 2});
      for (int c = 0; c < nc; ++c) {
        const int64_t i = rb.idx(chunks[c].b, chunks[c].t0 + s);
        prev.at(c, 0) = rb.prev_action[i * 2];
        prev.at(c, 1) = rb.prev_action[i * 2 + 1];
      }
      nn::Var feat_s = t.slice_rows(feats, s * nc, nc);
      h = policy_.gru_step(t, feat_s, t.input(std::move(prev)), h);
      zs.push_back(h);
    }
    return t.concat_rows(zs);
  }

  TrainConfig cfg_;
  NavPolicy policy_;
  CollisionPredictor qc_;
  VecTrainEnv venv_;
  std::vector<PolicyState> states_;
  TwoHotCoder coder_;
  nn::Adam adam_policy_, adam_fp_, adam_qc_;
  Rng rollout_rng_, shuffle_rng_, aug_rng_;
  int64_t env_steps_ = 0;
  int64_t update_count_ = 0;
  double last_qc_grad_norm_ = 0.0;
};

}  // namespace imnav
