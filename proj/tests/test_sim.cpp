#include <catch2/catch_amalgamated.hpp>
#include <sstream>

#include "imnav/sim.hpp"
#include "oracles.hpp"

using namespace imnav;

namespace {

WorldMap open_world() {
  WorldMap w;
  w.rebuild_grid();
  return w;
}

WorldMap walled_world() {
  WorldMap w = open_world();
  Rng rng(0);
  // reuse the generator path for colored walls
  w = WorldMap::generate(3, Profile::kSparse);
  return w;
}

}  // namespace

TEST_CASE("action normalization round trip") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double a1 = rng.uniform(-1.0, 1.0), a2 = rng.uniform(-1.0, 1.0);
    const Action a = Action::from_normalized(a1, a2);
    CHECK(a.v_lin >= 0.0);
    CHECK(a.v_lin <= Action::kVLinMax);
    CHECK(std::abs(a.v_ang) <= Action::kVAngMax);
    const auto [b1, b2] = a.to_normalized();
    CHECK(std::abs(b1 - a1) < 1e-12);
    CHECK(std::abs(b2 - a2) < 1e-12);
  }
}

TEST_CASE("stop rule thresholds are strict") {
  CHECK(is_stop({0.02, deg2rad(1.0)}));
  CHECK_FALSE(is_stop({0.2, 0.0}));
  CHECK_FALSE(is_stop({0.0, deg2rad(1.5)}));  // boundary excluded
  CHECK_FALSE(is_stop({0.025, 0.0}));         // boundary excluded

  // property: exactly the conjunction of the two strict comparisons
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    Action a = Action::from_normalized(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    const bool expect = a.v_lin < 0.025 && std::abs(a.v_ang) < deg2rad(1.5);
    CHECK(is_stop(a) == expect);
  }
}

TEST_CASE("unicycle kinematics") {
  const WorldMap w = open_world();

  SECTION("full speed straight ahead advances exactly v*dt") {
    AgentState s{{5.0, 5.0}, 0.0, 0};
    auto [next, collision] = step_kinematics(s, {0.25, 0.0}, w, 0.1);
    CHECK(next.pos.x == 5.0 + 0.025);
    CHECK(next.pos.y == 5.0);
    CHECK_FALSE(collision);
  }

  SECTION("pure rotation changes only the heading") {
    AgentState s{{5.0, 5.0}, 0.2, 0};
    auto [next, collision] = step_kinematics(s, {0.0, deg2rad(15.0)}, w, 0.1);
    CHECK(next.pos.x == 5.0);
    CHECK(next.pos.y == 5.0);
    CHECK(next.heading == Catch::Approx(0.2 + deg2rad(1.5)).epsilon(1e-12));
    CHECK_FALSE(collision);
  }

  SECTION("heading into a nearby wall slides and flags a collision") {
    // clearance to the inflated east wall: 0.01 m
    AgentState s{{w.bounds.hi.x - 0.15 - 0.01, 5.0}, 0.0, 0};
    auto [next, collision] = step_kinematics(s, {0.25, 0.0}, w, 0.1);
    CHECK(collision);
    CHECK(w.in_free_space(next.pos));
  }

  SECTION("oblique contact preserves the tangential motion component") {
    WorldMap box_world = open_world();
    box_world.boxes.push_back({{6.0, 0.0}, {7.0, 10.0}, {}});
    box_world.rebuild_grid();
    AgentState s{{6.0 - 0.15 - 0.005, 5.0}, deg2rad(45.0), 0};
    auto [next, collision] = step_kinematics(s, {0.25, 0.0}, box_world, 0.1);
    CHECK(collision);
    CHECK(next.pos.y > s.pos.y);  // slid along the wall
    CHECK(box_world.in_free_space(next.pos));
  }
}

TEST_CASE("sliding keeps the agent in free space under fuzz") {
  WorldMap w = WorldMap::generate(17, Profile::kCluttered);
  Rng rng(99);
  AgentState s{{0,0}, 0.0, 0};
  // find a free start
  while (true) {
    Vec2 p{rng.uniform(0.5, 9.5), rng.uniform(0.5, 9.5)};
    if (w.in_free_space(p)) {
      s.pos = p;
      break;
    }
  }
  for (int i = 0; i < 100000; ++i) {
    const Action a = Action::from_normalized(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    auto [next, collision] = step_kinematics(s, a, w, 0.1);
    s = next;
    if (!w.in_free_space(s.pos)) {
      CAPTURE(i, s.pos.x, s.pos.y);
      REQUIRE(false);
    }
    REQUIRE(s.heading > -kPi);
    REQUIRE(s.heading <= kPi);
  }
  SUCCEED("agent stayed in free space for 1e5 random steps");
}

TEST_CASE("trajectories are deterministic for a fixed action sequence") {
  WorldMap w = WorldMap::generate(5, Profile::kCluttered);
  Rng arng(7);
  std::vector<Action> actions;
  for (int i = 0; i < 200; ++i)
    actions.push_back(Action::from_normalized(arng.uniform(-1, 1), arng.uniform(-1, 1)));

  auto run = [&]() {
    AgentState s{{2.0, 2.0}, 0.5, 0};
    std::vector<AgentState> tr{s};
    for (const auto& a : actions) {
      s = step_kinematics(s, a, w, 0.1).next;
      tr.push_back(s);
    }
    return tr;
  };
  auto t1 = run(), t2 = run();
  for (size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1[i].pos.x == t2[i].pos.x);
    CHECK(t1[i].pos.y == t2[i].pos.y);
    CHECK(t1[i].heading == t2[i].heading);
  }
}

TEST_CASE("rendering") {
  RenderConfig rc;

  SECTION("no geometry within range: all depth rays clip to 3") {
    const WorldMap w = open_world();  // walls at >= 5 m from the center
    std::vector<float> img;
    std::vector<double> depth;
    render(w, {{5.0, 5.0}, 0.7}, rc, img, depth);
    for (double d : depth) CHECK(d == 3.0);
  }

  SECTION("wall 1 m ahead measured by the central ray") {
    WorldMap w = open_world();
    w.boxes.push_back({{6.0, 2.0}, {6.4, 8.0}, {0.5, 0.2, 0.2}});
    w.rebuild_grid();
    const Pose pose{{5.0, 5.0}, 0.0};
    std::vector<float> img;
    std::vector<double> depth;
    render(w, pose, rc, img, depth);
    // column centers straddle the axis; compare each against the analytic hit
    for (int col : {31, 32}) {
      const double ang = rc.fov / 2.0 - (col + 0.5) * rc.fov / rc.width;
      const double expect =
          test::ray_segment_distance(pose.p, pose.theta + ang, {6.0, 2.0}, {6.0, 8.0});
      CHECK(std::abs(depth[col] - expect) < 1e-6);
      CHECK(std::abs(expect - 1.0) < 0.01);
    }
  }

  SECTION("boundary wall segments render against the analytic oracle") {
    WorldMap w = walled_world();
    const Pose pose{{w.bounds.hi.x - 1.2, 5.0}, 0.0};  // facing the east wall
    std::vector<float> img;
    std::vector<double> depth;
    render(w, pose, rc, img, depth);
    for (int col = 0; col < rc.width; ++col) {
      const double ang = pose.theta + rc.fov / 2.0 - (col + 0.5) * rc.fov / rc.width;
      double expect = std::numeric_limits<double>::infinity();
      for (const auto& seg : w.walls)
        expect = std::min(expect, test::ray_segment_distance(pose.p, ang, seg.p, seg.q));
      for (const auto& c : w.circles) {
        // occlusion by obstacles: skip columns that hit one first
        const Vec2 d{std::cos(ang), std::sin(ang)};
        const Vec2 oc = pose.p - c.center;
        const double b = oc.dot(d);
        const double disc = b * b - (oc.norm_sq() - c.radius * c.radius);
        if (disc >= 0.0 && -b - std::sqrt(disc) >= 0.0)
          expect = std::min(expect, -b - std::sqrt(disc));
      }
      if (std::isfinite(expect) && expect <= rc.max_depth)
        CHECK(std::abs(depth[col] - expect) < 1e-9);
    }
  }

  SECTION("same pose renders identically") {
    WorldMap w = WorldMap::generate(8, Profile::kCluttered);
    std::vector<float> i1, i2;
    std::vector<double> d1, d2;
    render(w, {{3.0, 3.0}, 1.0}, rc, i1, d1);
    render(w, {{3.0, 3.0}, 1.0}, rc, i2, d2);
    CHECK(i1 == i2);
    CHECK(d1 == d2);
  }

  SECTION("pixels stay in [0,1]") {
    WorldMap w = WorldMap::generate(8, Profile::kCluttered);
    std::vector<float> img;
    std::vector<double> depth;
    render(w, {{1.0, 1.0}, -2.0}, rc, img, depth);
    for (float p : img) {
      CHECK(p >= 0.0f);
      CHECK(p <= 1.0f);
    }
    for (double d : depth) {
      CHECK(d >= 0.0);
      CHECK(d <= 3.0);
    }
  }
}

TEST_CASE("reward equation") {
  CHECK(compute_reward(1.9, 2.0, 90.0) == Catch::Approx(0.09).epsilon(1e-12));
  CHECK(compute_reward(0.5, 0.5, 10.0) == Catch::Approx(2.49).epsilon(1e-12));
  CHECK(compute_reward(5.0, 5.0, 180.0) == Catch::Approx(-0.01).epsilon(1e-12));
  // boundary: both conditions at equality still grant the success reward
  CHECK(compute_reward(1.0, 1.0, 25.0) == Catch::Approx(2.49).epsilon(1e-12));
}

TEST_CASE("episode lifecycle") {
  WorldMap w = walled_world();
  EnvConfig cfg;
  Env env(std::move(w), cfg);

  SECTION("success terminates the episode when the condition holds") {
    env.reset({{2.0, 2.0}, 0.0}, {{2.6, 2.0}, 0.0});
    // already aligned; drive straight until within 1 m (starts ~0.6 m away,
    // should already satisfy the success condition after one step)
    auto res = env.step({0.25, 0.0});
    CHECK(res.info.success);
    CHECK(res.done);
    CHECK(res.reason == DoneReason::kSuccess);
    CHECK(res.reward > 2.0);  // approach + success - slack
  }

  SECTION("stop action ends the episode") {
    env.reset({{2.0, 2.0}, 0.0}, {{8.0, 8.0}, 0.0});
    auto res = env.step({0.0, 0.0});
    CHECK(res.done);
    CHECK(res.reason == DoneReason::kStop);
    CHECK_FALSE(res.info.success);
  }

  SECTION("timeout fires at max_steps") {
    EnvConfig short_cfg;
    short_cfg.max_steps = 5;
    Env e2(walled_world(), short_cfg);
    e2.reset({{2.0, 2.0}, 0.0}, {{8.0, 8.0}, 0.0});
    StepResult res;
    for (int i = 0; i < 5; ++i) res = e2.step({0.25, deg2rad(5.0)});
    CHECK(res.done);
    CHECK(res.reason == DoneReason::kTimeout);
  }

  SECTION("goal image is constant within an episode") {
    env.reset({{2.0, 2.0}, 0.0}, {{8.0, 8.0}, 1.0});
    const auto goal0 = env.observation().goal;
    env.step({0.25, deg2rad(10.0)});
    env.step({0.25, deg2rad(-10.0)});
    CHECK(env.observation().goal == goal0);
  }

  SECTION("reward approach terms telescope along a collision-free path") {
    env.reset({{2.0, 2.0}, deg2rad(45.0)}, {{8.0, 8.0}, 0.0});
    const double d0 = env.goal_distance(env.state().pos);
    double sum_approach = 0.0;
    for (int i = 0; i < 60; ++i) {
      auto res = env.step({0.25, deg2rad(3.0)});
      REQUIRE_FALSE(res.collision);
      REQUIRE_FALSE(res.info.success);
      sum_approach += res.reward - cfg.reward.slack_penalty;
      REQUIRE_FALSE(res.done);
    }
    const double dT = env.goal_distance(env.state().pos);
    CHECK(std::abs(sum_approach - (d0 - dT)) < 1e-9);
  }
}

TEST_CASE("trajectory log round trip") {
  TrajectoryLog log;
  log.rows.push_back({0, 1.0, 2.0, 0.5, 0.25, -0.1, 0.09, 0, 0.12, 0, 0});
  log.rows.push_back({1, 1.1, 2.0, 0.5, 0.20, 0.0, -0.01, 1, 0.7, 1, 0});
  const std::string path = "/tmp/imnav_traj_test.csv";
  log.save(path);
  TrajectoryLog l2 = TrajectoryLog::load(path);
  REQUIRE(l2.rows.size() == 2);
  CHECK(l2.rows[1].collision == 1);
  CHECK(l2.rows[1].q_c == 0.7);
  CHECK(l2.rows[0].reward == 0.09);
  std::remove(path.c_str());
}
