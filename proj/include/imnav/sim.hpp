#pragma once

#include <array>
#include <fstream>
#include <vector>

#include "imnav/world.hpp"

namespace imnav {

// Continuous velocity command. Physical ranges are fixed by the task; the
// normalized form (a1, a2) in [-1,1]^2 maps affinely onto them.
struct Action {
  static constexpr double kVLinMax = 0.25;                    // m/s
  static constexpr double kVAngMax = 15.0 * kPi / 180.0;      // rad/s

  double v_lin = 0.0;  // [0, kVLinMax] m/s
  double v_ang = 0.0;  // [-kVAngMax, kVAngMax] rad/s

  static Action from_normalized(double a1, double a2) {
    a1 = std::clamp(a1, -1.0, 1.0);
    a2 = std::clamp(a2, -1.0, 1.0);
    return {(a1 + 1.0) * 0.5 * kVLinMax, a2 * kVAngMax};
  }
  std::array<double, 2> to_normalized() const {
    return {2.0 * v_lin / kVLinMax - 1.0, v_ang / kVAngMax};
  }
  Action clamped() const {
    return {std::clamp(v_lin, 0.0, kVLinMax), std::clamp(v_ang, -kVAngMax, kVAngMax)};
  }
};

// Continuous stand-in for the discrete stop action: both strict thresholds
// must hold.
inline bool is_stop(const Action& a) {
  return a.v_lin < 0.025 && std::abs(a.v_ang) < deg2rad(1.5);
}

struct Pose {
  Vec2 p;
  double theta = 0.0;
};

struct AgentState {
  Vec2 pos;
  double heading = 0.0;  // (-pi, pi]
  int time_step = 0;
};

struct RenderConfig {
  int width = 64;
  int height = 16;
  double fov = deg2rad(90.0);
  double max_depth = 3.0;
};

// Stacked panorama observation. Images are channel-major [3, H, W] with values
// in [0,1]; depth holds one clipped range reading per image column, so index 0
// is the leftmost ray of the field of view.
struct Observation {
  std::vector<float> current;
  std::vector<float> goal;
  std::vector<double> depth;
};

namespace detail {

inline void shade_column(std::vector<float>& img, int col, const RenderConfig& rc, bool hit,
                         double dist, Color c) {
  const int H = rc.height, W = rc.width;
  const int mid = H / 2;
  int hh = 0;
  double shade = 0.0;
  if (hit) {
    hh = static_cast<int>(std::lround(mid * std::min(1.0, 0.5 / std::max(dist, 0.5))));
    hh = std::clamp(hh, 1, mid);
    shade = 1.0 / (1.0 + 0.35 * dist);
  }
  for (int row = 0; row < H; ++row) {
    double r, g, b;
    if (hit && row >= mid - hh && row < mid + hh) {
      r = c.r * shade;
      g = c.g * shade;
      b = c.b * shade;
    } else if (row < mid) {
      r = 0.08;
      g = 0.08;
      b = 0.10;
    } else {
      const double f = 0.15 + 0.2 * static_cast<double>(row - mid) / mid;
      r = g = b = f;
    }
    img[(0 * H + row) * static_cast<size_t>(W) + col] = static_cast<float>(r);
    img[(1 * H + row) * static_cast<size_t>(W) + col] = static_cast<float>(g);
    img[(2 * H + row) * static_cast<size_t>(W) + col] = static_cast<float>(b);
  }
}

}  // namespace detail

// Casts one ray per image column across the field of view (column 0 looks
// furthest left) and paints a color strip whose band height and brightness
// fall off with range. Depth readings are clipped to max_depth; so is surface
// visibility, beyond which a column shows only background.
inline void render(const WorldMap& world, const Pose& pose, const RenderConfig& rc,
                   std::vector<float>& image, std::vector<double>& depth) {
  image.assign(static_cast<size_t>(3) * rc.height * rc.width, 0.0f);
  depth.assign(rc.width, rc.max_depth);
  for (int col = 0; col < rc.width; ++col) {
    const double offset = rc.fov / 2.0 - (col + 0.5) * rc.fov / rc.width;
    const RayHit h = world.raycast(pose.p, pose.theta + offset);
    const bool visible = h.hit && h.t <= rc.max_depth;
    depth[col] = visible ? h.t : rc.max_depth;
    detail::shade_column(image, col, rc, visible, h.t, h.color);
  }
}

struct RewardParams {
  double success_dist = 1.0;     // m
  double success_ang = 25.0;     // degrees
  double success_reward = 2.5;
  double slack_penalty = -0.01;
};

// r = (d_prev - d_t) + [d_t <= d_s][alpha_t <= alpha_s] * r_suc + slack
inline double compute_reward(double d_t, double d_prev, double alpha_deg,
                             const RewardParams& rp = {}) {
  double r = (d_prev - d_t) + rp.slack_penalty;
  if (d_t <= rp.success_dist && alpha_deg <= rp.success_ang) r += rp.success_reward;
  return r;
}

// ---- kinematics with sliding collision resolution ----

struct MotionResult {
  AgentState next;
  bool collision = false;
};

namespace detail {

// Pushes p out of every inflated obstacle it penetrates; returns true when any
// push was needed. Iterates because a push can enter a neighboring shape.
inline bool resolve_penetration(const WorldMap& w, Vec2& p) {
  bool any = false;
  for (int iter = 0; iter < 8; ++iter) {
    double worst_pen = 0.0;
    Vec2 worst_normal{0.0, 0.0};
    auto consider = [&](double pen, Vec2 normal) {
      if (pen > worst_pen) {
        worst_pen = pen;
        worst_normal = normal;
      }
    };
    consider(w.bounds.lo.x + w.inflation - p.x, {1.0, 0.0});
    consider(p.x - (w.bounds.hi.x - w.inflation), {-1.0, 0.0});
    consider(w.bounds.lo.y + w.inflation - p.y, {0.0, 1.0});
    consider(p.y - (w.bounds.hi.y - w.inflation), {0.0, -1.0});
    for (const auto& c : w.circles) {
      const Vec2 d = p - c.center;
      const double dist = d.norm();
      const double pen = c.radius + w.inflation - dist;
      if (pen > 0.0) consider(pen, dist > 1e-12 ? d * (1.0 / dist) : Vec2{1.0, 0.0});
    }
    for (const auto& b : w.boxes) {
      const Vec2 q{std::clamp(p.x, b.lo.x, b.hi.x), std::clamp(p.y, b.lo.y, b.hi.y)};
      const Vec2 d = p - q;
      const double dist = d.norm();
      if (dist > 1e-12) {
        consider(w.inflation - dist, d * (1.0 / dist));
      } else {
        // center inside the box: push along the axis of least escape
        const double push_left = p.x - b.lo.x, push_right = b.hi.x - p.x;
        const double push_down = p.y - b.lo.y, push_up = b.hi.y - p.y;
        const double m = std::min({push_left, push_right, push_down, push_up});
        Vec2 n{0.0, 0.0};
        if (m == push_left) n = {-1.0, 0.0};
        else if (m == push_right) n = {1.0, 0.0};
        else if (m == push_down) n = {0.0, -1.0};
        else n = {0.0, 1.0};
        consider(w.inflation + m, n);
      }
    }
    if (worst_pen <= 0.0) break;
    p = p + worst_normal * (worst_pen + 1e-9);
    any = true;
  }
  return any;
}

}  // namespace detail

// Unicycle update with sliding contact: a motion into an obstacle is projected
// back to the surface so the tangential component survives and the collision
// flag is raised. The returned position is always in free space.
inline MotionResult step_kinematics(const AgentState& s, const Action& act, const WorldMap& world,
                                    double dt = 0.1) {
  const Action a = act.clamped();
  MotionResult r;
  Vec2 p = s.pos + Vec2{std::cos(s.heading), std::sin(s.heading)} * (a.v_lin * dt);
  r.collision = detail::resolve_penetration(world, p);
  if (!world.in_free_space(p)) {
    p = s.pos;  // pathological corner; stay put
    r.collision = true;
  }
  r.next.pos = p;
  r.next.heading = wrap_angle(s.heading + a.v_ang * dt);
  r.next.time_step = s.time_step + 1;
  return r;
}

// ---- episode lifecycle ----

enum class DoneReason { kNone, kStop, kSuccess, kTimeout };

inline std::string to_string(DoneReason r) {
  switch (r) {
    case DoneReason::kNone: return "none";
    case DoneReason::kStop: return "stop";
    case DoneReason::kSuccess: return "success";
    case DoneReason::kTimeout: return "timeout";
  }
  return "none";
}

struct StepInfo {
  double goal_distance = 0.0;     // geodesic by default
  double heading_error = 0.0;     // degrees, absolute wrapped difference
  bool success = false;           // success condition holds at this step
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  bool collision = false;
  DoneReason reason = DoneReason::kNone;
  StepInfo info;
};

struct EnvConfig {
  double dt = 0.1;
  int max_steps = 500;
  RewardParams reward;
  RenderConfig render;
  bool euclidean_distance = false;  // fallback for the geodesic reward distance
};

// One navigation episode in one world. Deterministic: the observation and
// reward depend only on (world, start, goal, action sequence).
class Env {
 public:
  Env(WorldMap world, EnvConfig cfg = {}) : world_(std::move(world)), cfg_(cfg) {}

  const WorldMap& world() const { return world_; }
  const EnvConfig& config() const { return cfg_; }
  const AgentState& state() const { return state_; }
  const Pose& goal() const { return goal_; }
  int time_step() const { return state_.time_step; }
  bool done() const { return reason_ != DoneReason::kNone; }
  DoneReason done_reason() const { return reason_; }

  void reset(const Pose& start, const Pose& goal) {
    if (!world_.in_free_space(start.p)) throw Error("Env::reset: start pose not in free space");
    if (!world_.in_free_space(goal.p)) throw Error("Env::reset: goal pose not in free space");
    state_ = {start.p, wrap_angle(start.theta), 0};
    goal_ = goal;
    goal_.theta = wrap_angle(goal.theta);
    field_ = DistanceField::from(world_, goal_.p);
    render(world_, goal_, cfg_.render, goal_image_, scratch_depth_);
    reason_ = DoneReason::kNone;
    d_prev_ = goal_distance(state_.pos);
    refresh_observation();
  }

  double goal_distance(Vec2 p) const {
    if (cfg_.euclidean_distance) return distance(p, goal_.p);
    return field_.query(world_, p);
  }

  double heading_error_deg() const {
    return rad2deg(std::abs(wrap_angle(state_.heading - goal_.theta)));
  }

  bool success_condition(double dist, double heading_err_deg) const {
    return dist <= cfg_.reward.success_dist && heading_err_deg <= cfg_.reward.success_ang;
  }

  const Observation& observation() const { return obs_; }

  StepResult step(const Action& action) {
    if (done()) throw Error("Env::step called after episode end");
    MotionResult mr = step_kinematics(state_, action, world_, cfg_.dt);
    state_ = mr.next;

    StepResult res;
    res.collision = mr.collision;
    res.info.goal_distance = goal_distance(state_.pos);
    res.info.heading_error = heading_error_deg();
    res.info.success = success_condition(res.info.goal_distance, res.info.heading_error);
    res.reward = compute_reward(res.info.goal_distance, d_prev_, res.info.heading_error,
                                cfg_.reward);
    d_prev_ = res.info.goal_distance;

    if (is_stop(action)) {
      reason_ = DoneReason::kStop;
    } else if (res.info.success) {
      reason_ = DoneReason::kSuccess;
    } else if (state_.time_step >= cfg_.max_steps) {
      reason_ = DoneReason::kTimeout;
    }
    res.done = reason_ != DoneReason::kNone;
    res.reason = reason_;

    refresh_observation();
    res.observation = obs_;
    return res;
  }

 private:
  void refresh_observation() {
    render(world_, {state_.pos, state_.heading}, cfg_.render, obs_.current, obs_.depth);
    obs_.goal = goal_image_;
  }

  WorldMap world_;
  EnvConfig cfg_;
  AgentState state_;
  Pose goal_;
  DistanceField field_;
  std::vector<float> goal_image_;
  std::vector<double> scratch_depth_;
  Observation obs_;
  double d_prev_ = 0.0;
  DoneReason reason_ = DoneReason::kNone;
};

// ---- trajectory logging (comma-separated text) ----

struct TrajectoryRow {
  int time_step = 0;
  double x = 0.0, y = 0.0, theta = 0.0;
  double v_lin = 0.0, v_ang = 0.0;
  double reward = 0.0;
  int collision = 0;
  double q_c = 0.0;
  int corrected = 0;
  int fallback = 0;
};

struct TrajectoryLog {
  std::vector<TrajectoryRow> rows;

  static const char* header() {
    return "time_step,x,y,theta,v_lin,v_ang,reward,collision,q_c,corrected,fallback";
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error("cannot write trajectory log: " + path);
    f << header() << "\n";
    for (const auto& r : rows) {
      f << r.time_step << ',' << fmt_double(r.x) << ',' << fmt_double(r.y) << ','
        << fmt_double(r.theta) << ',' << fmt_double(r.v_lin) << ',' << fmt_double(r.v_ang) << ','
        << fmt_double(r.reward) << ',' << r.collision << ',' << fmt_double(r.q_c) << ','
        << r.corrected << ',' << r.fallback << "\n";
    }
  }

  static TrajectoryLog load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open trajectory log: " + path);
    TrajectoryLog log;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      TrajectoryRow r;
      if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf,%d,%lf,%d,%d", &r.time_step, &r.x,
                      &r.y, &r.theta, &r.v_lin, &r.v_ang, &r.reward, &r.collision, &r.q_c,
                      &r.corrected, &r.fallback) != 11)
        throw Error("trajectory log: malformed row: " + line);
      log.rows.push_back(r);
    }
    return log;
  }
};

}  // namespace imnav
