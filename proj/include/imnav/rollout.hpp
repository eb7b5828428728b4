#pragma once

#include <deque>

#include "imnav/episodes.hpp"
#include "imnav/policy.hpp"
#include "imnav/shield.hpp"

namespace imnav {

// On-policy rollout storage, flattened as index = b * L + t. Hidden states are
// recorded before each step so training minibatches can start BPTT from any
// chunk boundary.
struct RolloutBatch {
  int B = 0, L = 0;
  int obs_floats = 0;  // stacked current+goal floats per step
  int hidden_dim = 0;

  std::vector<float> obs, next_obs;
  std::vector<double> depth_blocks;             // [B*L * 16]
  std::vector<double> u, a_norm, prev_action;   // [B*L * 2]
  std::vector<double> log_prob, reward, value, done, collision;
  std::vector<double> hidden;                   // [B*L * hidden_dim]
  std::vector<double> bootstrap_value;          // [B]
  std::vector<double> advantages, value_targets;

  int64_t count() const { return static_cast<int64_t>(B) * L; }
  int64_t idx(int b, int t) const { return static_cast<int64_t>(b) * L + t; }

  void allocate(int b, int l, int obs_f, int hid) {
    B = b;
    L = l;
    obs_floats = obs_f;
    hidden_dim = hid;
    const int64_t n = count();
    obs.assign(n * obs_f, 0.0f);
    next_obs.assign(n * obs_f, 0.0f);
    depth_blocks.assign(n * DepthVector::kBlocks, 0.0);
    u.assign(n * 2, 0.0);
    a_norm.assign(n * 2, 0.0);
    prev_action.assign(n * 2, 0.0);
    log_prob.assign(n, 0.0);
    reward.assign(n, 0.0);
    value.assign(n, 0.0);
    done.assign(n, 0.0);
    collision.assign(n, 0.0);
    hidden.assign(n * hid, 0.0);
    bootstrap_value.assign(b, 0.0);
    advantages.clear();
    value_targets.clear();
  }
};

struct EpisodeOutcome {
  double episode_return = 0.0;
  int length = 0;
  bool success = false;
};

struct TrainEnvConfig {
  Profile profile = Profile::kCluttered;
  Difficulty difficulty = Difficulty::kEasy;
  int num_worlds = 8;
  EnvConfig env;
};

// B independently steppable training environments with auto-reset episode
// sampling and a rolling window of completed-episode outcomes.
class VecTrainEnv {
 public:
  VecTrainEnv(int num_envs, const TrainEnvConfig& cfg, uint64_t seed)
      : cfg_(cfg), seed_(seed) {
    const int nw = std::max(1, cfg.num_worlds);
    for (int b = 0; b < num_envs; ++b) {
      const uint64_t ws = derive_world_seed(seed, b % nw);
      envs_.emplace_back(WorldMap::generate(ws, cfg.profile), cfg.env);
      episode_rngs_.push_back(Rng(seed).fork("episodes-env-" + std::to_string(b)));
    }
    episode_return_.assign(num_envs, 0.0);
    for (int b = 0; b < num_envs; ++b) reset_env(b);
  }

  int size() const { return static_cast<int>(envs_.size()); }
  Env& env(int b) { return envs_[b]; }

  void reset_env(int b) {
    auto poses = sample_episode_poses(envs_[b].world(), difficulty_range(cfg_.difficulty),
                                      episode_rngs_[b]);
    if (!poses) throw Error("VecTrainEnv: episode sampling failed");
    envs_[b].reset(poses->first, poses->second);
    episode_return_[b] = 0.0;
  }

  // Collects L steps from every environment into `out`, resetting environments
  // (and the matching policy state) whenever an episode ends.
  void collect(const NavPolicy& policy, std::vector<PolicyState>& states, Rng& sample_rng,
               int rollout_len, RolloutBatch& out) {
    const int B = size();
    const PolicyConfig& pc = policy.config();
    const int obs_f = 2 * 3 * pc.img_h * pc.img_w;
    out.allocate(B, rollout_len, obs_f, pc.hidden_dim);

    std::vector<PolicyState*> state_ptrs(B);
    for (int b = 0; b < B; ++b) state_ptrs[b] = &states[b];

    for (int t = 0; t < rollout_len; ++t) {
      std::vector<const Observation*> obs(B);
      for (int b = 0; b < B; ++b) {
        obs[b] = &envs_[b].observation();
        const int64_t i = out.idx(b, t);
        copy_obs(*obs[b], &out.obs[i * obs_f]);
        const DepthVector dv = preprocess_depth(obs[b]->depth, cfg_.env.render.max_depth);
        for (int k = 0; k < DepthVector::kBlocks; ++k)
          out.depth_blocks[i * DepthVector::kBlocks + k] = dv.v[k];
        out.prev_action[i * 2] = states[b].prev_action[0];
        out.prev_action[i * 2 + 1] = states[b].prev_action[1];
        for (int c = 0; c < pc.hidden_dim; ++c)
          out.hidden[i * pc.hidden_dim + c] = states[b].hidden.at(0, c);
      }
      auto acts = policy.act_batch(state_ptrs, obs, /*stochastic=*/true, sample_rng);
      for (int b = 0; b < B; ++b) {
        const int64_t i = out.idx(b, t);
        out.u[i * 2] = acts[b].u[0];
        out.u[i * 2 + 1] = acts[b].u[1];
        out.a_norm[i * 2] = acts[b].a_norm[0];
        out.a_norm[i * 2 + 1] = acts[b].a_norm[1];
        out.log_prob[i] = acts[b].log_prob;
        out.value[i] = acts[b].value;

        StepResult r = envs_[b].step(acts[b].action);
        out.reward[i] = r.reward;
        out.done[i] = r.done ? 1.0 : 0.0;
        out.collision[i] = r.collision ? 1.0 : 0.0;
        copy_obs(r.observation, &out.next_obs[i * obs_f]);
        episode_return_[b] += r.reward;

        if (r.done) {
          EpisodeOutcome oc;
          oc.episode_return = episode_return_[b];
          oc.length = envs_[b].time_step();
          oc.success = r.info.success;
          push_outcome(oc);
          reset_env(b);
          states[b].reset(pc.hidden_dim);
        }
      }
    }
    // bootstrap values for the observation after the last step
    std::vector<const Observation*> obs(B);
    for (int b = 0; b < B; ++b) obs[b] = &envs_[b].observation();
    out.bootstrap_value = policy.evaluate_values(state_ptrs, obs);
  }

  // rolling statistics over the last `window` completed episodes
  double rolling_success_rate(int window = 100) const {
    if (outcomes_.empty()) return 0.0;
    const size_t n = std::min<size_t>(window, outcomes_.size());
    double s = 0.0;
    for (size_t i = outcomes_.size() - n; i < outcomes_.size(); ++i)
      s += outcomes_[i].success ? 1.0 : 0.0;
    return s / static_cast<double>(n);
  }
  double rolling_mean_return(int window = 100) const {
    if (outcomes_.empty()) return 0.0;
    const size_t n = std::min<size_t>(window, outcomes_.size());
    double s = 0.0;
    for (size_t i = outcomes_.size() - n; i < outcomes_.size(); ++i)
      s += outcomes_[i].episode_return;
    return s / static_cast<double>(n);
  }
  double rolling_mean_length(int window = 100) const {
    if (outcomes_.empty()) return 0.0;
    const size_t n = std::min<size_t>(window, outcomes_.size());
    double s = 0.0;
    for (size_t i = outcomes_.size() - n; i < outcomes_.size(); ++i) s += outcomes_[i].length;
    return s / static_cast<double>(n);
  }
  int64_t completed_episodes() const { return total_episodes_; }

 private:
  static void copy_obs(const Observation& o, float* dst) {
    std::copy(o.current.begin(), o.current.end(), dst);
    std::copy(o.goal.begin(), o.goal.end(), dst + o.current.size());
  }

  void push_outcome(const EpisodeOutcome& oc) {
    outcomes_.push_back(oc);
    ++total_episodes_;
    while (outcomes_.size() > 512) outcomes_.pop_front();
  }

  TrainEnvConfig cfg_;
  uint64_t seed_;
  std::vector<Env> envs_;
  std::vector<Rng> episode_rngs_;
  std::vector<double> episode_return_;
  std::deque<EpisodeOutcome> outcomes_;
  int64_t total_episodes_ = 0;
};

}  // namespace imnav
