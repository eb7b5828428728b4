#pragma once

#include <optional>

#include "imnav/sim.hpp"

namespace imnav {

enum class Difficulty { kEasy, kMedium, kHard };

inline std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::kEasy: return "easy";
    case Difficulty::kMedium: return "medium";
    case Difficulty::kHard: return "hard";
  }
  return "easy";
}

inline Difficulty difficulty_from_string(const std::string& s) {
  if (s == "easy") return Difficulty::kEasy;
  if (s == "medium") return Difficulty::kMedium;
  if (s == "hard") return Difficulty::kHard;
  throw Error("unknown difficulty: " + s);
}

// Geodesic start-goal distance range [lo, hi) per difficulty.
struct DifficultyRange {
  double lo = 1.5, hi = 3.0;
};

inline DifficultyRange difficulty_range(Difficulty d) {
  switch (d) {
    case Difficulty::kEasy: return {1.5, 3.0};
    case Difficulty::kMedium: return {3.0, 5.0};
    case Difficulty::kHard: return {5.0, 10.0};
  }
  return {1.5, 3.0};
}

struct EpisodeSpec {
  uint64_t world_seed = 0;
  Profile profile = Profile::kCluttered;
  Difficulty difficulty = Difficulty::kEasy;
  Pose start;
  Pose goal;
  double optimal_length = 0.0;  // geodesic start->goal
};

// Uniform free pose: position in free continuous space whose grid cell is also
// free, heading uniform in (-pi, pi].
inline Pose sample_free_pose(const WorldMap& w, Rng& rng) {
  for (int tries = 0; tries < 10000; ++tries) {
    Vec2 p{rng.uniform(w.bounds.lo.x, w.bounds.hi.x), rng.uniform(w.bounds.lo.y, w.bounds.hi.y)};
    if (!w.in_free_space(p)) continue;
    auto [cx, cy] = w.grid.cell_of(p);
    if (!w.grid.in_bounds(cx, cy) || w.grid.occupied(cx, cy)) continue;
    return {p, wrap_angle(rng.uniform(-kPi, kPi))};
  }
  throw Error("sample_free_pose: no free pose found");
}

// Rejection-samples a start/goal pair whose geodesic separation falls in the
// difficulty range.
inline std::optional<std::pair<Pose, Pose>> sample_episode_poses(const WorldMap& w,
                                                                 DifficultyRange range, Rng& rng,
                                                                 int max_tries = 1000) {
  for (int tries = 0; tries < max_tries; ++tries) {
    Pose start = sample_free_pose(w, rng);
    Pose goal = sample_free_pose(w, rng);
    const DistanceField field = DistanceField::from(w, goal.p);
    const double d = field.query(w, start.p);
    if (d >= range.lo && d < range.hi) return std::make_pair(start, goal);
  }
  return std::nullopt;
}

inline uint64_t derive_world_seed(uint64_t master_seed, int index) {
  return splitmix64(master_seed ^ hash_str("world") ^ static_cast<uint64_t>(index));
}

// Deterministic episode dataset: worlds are derived from the master seed and
// episodes cycle through them round-robin.
inline std::vector<EpisodeSpec> generate_episode_set(int n, Difficulty difficulty, uint64_t seed,
                                                     Profile profile = Profile::kCluttered,
                                                     int num_worlds = 8) {
  if (n < 1) throw Error("generate_episode_set: n must be >= 1");
  std::vector<WorldMap> worlds;
  std::vector<uint64_t> world_seeds;
  for (int i = 0; i < num_worlds; ++i) {
    world_seeds.push_back(derive_world_seed(seed, i));
    worlds.push_back(WorldMap::generate(world_seeds.back(), profile));
  }
  const DifficultyRange range = difficulty_range(difficulty);
  Rng rng = Rng(seed).fork("episode-set");
  std::vector<EpisodeSpec> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int wi = i % num_worlds;
    auto poses = sample_episode_poses(worlds[wi], range, rng);
    if (!poses) throw Error("generate_episode_set: rejection sampling failed for episode " +
                            std::to_string(i));
    EpisodeSpec ep;
    ep.world_seed = world_seeds[wi];
    ep.profile = profile;
    ep.difficulty = difficulty;
    ep.start = poses->first;
    ep.goal = poses->second;
    ep.optimal_length = geodesic_distance(worlds[wi], ep.start.p, ep.goal.p);
    out.push_back(ep);
  }
  return out;
}

// ---- serialization (line-oriented key-value) ----

inline void save_episodes(const std::vector<EpisodeSpec>& eps, std::ostream& os) {
  os << "format imnav-episodes 1\n";
  os << "count " << eps.size() << "\n";
  for (size_t i = 0; i < eps.size(); ++i) {
    const EpisodeSpec& e = eps[i];
    os << "episode " << i << " " << e.world_seed << " " << to_string(e.profile) << " "
       << to_string(e.difficulty) << " " << fmt_double(e.start.p.x) << " "
       << fmt_double(e.start.p.y) << " " << fmt_double(e.start.theta) << " "
       << fmt_double(e.goal.p.x) << " " << fmt_double(e.goal.p.y) << " "
       << fmt_double(e.goal.theta) << " " << fmt_double(e.optimal_length) << "\n";
  }
}

inline void save_episodes(const std::vector<EpisodeSpec>& eps, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write episode file: " + path);
  save_episodes(eps, f);
}

inline std::vector<EpisodeSpec> load_episodes(std::istream& is) {
  std::vector<EpisodeSpec> out;
  std::string line;
  int lineno = 0;
  bool saw_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string name;
      int ver = 0;
      ls >> name >> ver;
      if (name != "imnav-episodes" || ver != 1)
        throw Error("episode file: unsupported format at line " + std::to_string(lineno));
      saw_header = true;
    } else if (key == "count") {
      size_t n = 0;
      ls >> n;
      out.reserve(n);
    } else if (key == "episode") {
      size_t idx;
      std::string profile, difficulty;
      EpisodeSpec e;
      ls >> idx >> e.world_seed >> profile >> difficulty >> e.start.p.x >> e.start.p.y >>
          e.start.theta >> e.goal.p.x >> e.goal.p.y >> e.goal.theta >> e.optimal_length;
      if (ls.fail()) throw Error("episode file: parse error at line " + std::to_string(lineno));
      e.profile = profile_from_string(profile);
      e.difficulty = difficulty_from_string(difficulty);
      out.push_back(e);
    } else {
      throw Error("episode file: unknown key '" + key + "' at line " + std::to_string(lineno));
    }
    if (ls.fail()) throw Error("episode file: parse error at line " + std::to_string(lineno));
  }
  if (!saw_header) throw Error("episode file: missing format header");
  return out;
}

inline std::vector<EpisodeSpec> load_episodes(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open episode file: " + path);
  return load_episodes(f);
}

}  // namespace imnav
