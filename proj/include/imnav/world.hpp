#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "imnav/common.hpp"

namespace imnav {

struct Color {
  double r = 0.0, g = 0.0, b = 0.0;
  bool operator==(const Color&) const = default;
};

struct Circle {
  Vec2 center;
  double radius = 0.0;
  Color color;
};

struct BoxObstacle {
  Vec2 lo, hi;
  Color color;
};

struct WallSegment {
  Vec2 p, q;
  Color color;
};

struct Rect {
  Vec2 lo, hi;
  double width() const { return hi.x - lo.x; }
  double height() const { return hi.y - lo.y; }
  bool contains(Vec2 v) const {
    return v.x >= lo.x && v.x <= hi.x && v.y >= lo.y && v.y <= hi.y;
  }
};

enum class Profile { kSparse, kCluttered, kPoles };

inline std::string to_string(Profile p) {
  switch (p) {
    case Profile::kSparse: return "sparse";
    case Profile::kCluttered: return "cluttered";
    case Profile::kPoles: return "poles";
  }
  return "sparse";
}

inline Profile profile_from_string(const std::string& s) {
  if (s == "sparse") return Profile::kSparse;
  if (s == "cluttered") return Profile::kCluttered;
  if (s == "poles") return Profile::kPoles;
  throw Error("unknown world profile: " + s);
}

// Boolean grid at fixed resolution; a cell is occupied iff its rectangle
// intersects an obstacle inflated by the agent radius (walls included).
struct OccupancyGrid {
  double resolution = 0.1;
  Vec2 origin;
  int nx = 0, ny = 0;
  std::vector<uint8_t> occ;

  bool in_bounds(int cx, int cy) const { return cx >= 0 && cx < nx && cy >= 0 && cy < ny; }
  bool occupied(int cx, int cy) const { return occ[static_cast<size_t>(cy) * nx + cx] != 0; }
  void set(int cx, int cy, bool v) { occ[static_cast<size_t>(cy) * nx + cx] = v ? 1 : 0; }

  std::pair<int, int> cell_of(Vec2 p) const {
    return {static_cast<int>(std::floor((p.x - origin.x) / resolution)),
            static_cast<int>(std::floor((p.y - origin.y) / resolution))};
  }
  Vec2 center_of(int cx, int cy) const {
    return {origin.x + (cx + 0.5) * resolution, origin.y + (cy + 0.5) * resolution};
  }
  int64_t free_count() const {
    int64_t n = 0;
    for (uint8_t c : occ) n += (c == 0);
    return n;
  }
};

namespace detail {

inline double dist_point_rect(Vec2 p, Vec2 lo, Vec2 hi) {
  const double dx = std::max({lo.x - p.x, 0.0, p.x - hi.x});
  const double dy = std::max({lo.y - p.y, 0.0, p.y - hi.y});
  return std::hypot(dx, dy);
}

// Separation between two axis-aligned rectangles (0 when overlapping).
inline double dist_rect_rect(Vec2 alo, Vec2 ahi, Vec2 blo, Vec2 bhi) {
  const double dx = std::max({blo.x - ahi.x, 0.0, alo.x - bhi.x});
  const double dy = std::max({blo.y - ahi.y, 0.0, alo.y - bhi.y});
  return std::hypot(dx, dy);
}

inline Color hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1.0 - s), q = v * (1.0 - f * s), t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace detail

struct RayHit {
  bool hit = false;
  double t = std::numeric_limits<double>::infinity();
  Color color;
};

struct WorldMap {
  uint64_t seed = 0;
  Profile profile = Profile::kSparse;
  Rect bounds{{0.0, 0.0}, {10.0, 10.0}};
  double inflation = 0.15;  // agent radius
  std::vector<Circle> circles;
  std::vector<BoxObstacle> boxes;
  std::vector<WallSegment> walls;
  OccupancyGrid grid;

  // ---- continuous-space queries ----

  // Distance from p to the nearest obstacle surface (walls included); the point
  // is in free space when this is >= inflation.
  double clearance(Vec2 p) const {
    double d = std::min({p.x - bounds.lo.x, bounds.hi.x - p.x, p.y - bounds.lo.y,
                         bounds.hi.y - p.y});
    for (const auto& c : circles) d = std::min(d, distance(p, c.center) - c.radius);
    for (const auto& b : boxes) d = std::min(d, detail::dist_point_rect(p, b.lo, b.hi));
    return d;
  }

  bool in_free_space(Vec2 p) const { return clearance(p) >= inflation - 1e-9; }

  RayHit raycast(Vec2 origin, double angle) const {
    const Vec2 dir{std::cos(angle), std::sin(angle)};
    RayHit best;
    for (const auto& w : walls) {
      const double t = ray_segment(origin, dir, w.p, w.q);
      if (t < best.t) best = {true, t, w.color};
    }
    for (const auto& c : circles) {
      const double t = ray_circle(origin, dir, c.center, c.radius);
      if (t < best.t) best = {true, t, c.color};
    }
    for (const auto& b : boxes) {
      const double t = ray_box(origin, dir, b.lo, b.hi);
      if (t < best.t) best = {true, t, b.color};
    }
    return best;
  }

  // ---- generation ----

  static WorldMap generate(uint64_t seed, Profile profile) {
    Rng rng(splitmix64(seed ^ hash_str(to_string(profile))));
    for (int attempt = 0; attempt < 100; ++attempt) {
      WorldMap w = sample_layout(seed, profile, rng);
      w.rebuild_grid();
      if (w.free_space_connected()) return w;
    }
    throw Error("world generation failed: no connected map after 100 attempts (seed " +
                std::to_string(seed) + ")");
  }

  void rebuild_grid() {
    grid.resolution = 0.1;
    grid.origin = bounds.lo;
    grid.nx = static_cast<int>(std::lround(bounds.width() / grid.resolution));
    grid.ny = static_cast<int>(std::lround(bounds.height() / grid.resolution));
    grid.occ.assign(static_cast<size_t>(grid.nx) * grid.ny, 0);
    for (int cy = 0; cy < grid.ny; ++cy) {
      for (int cx = 0; cx < grid.nx; ++cx) {
        const Vec2 lo{bounds.lo.x + cx * grid.resolution, bounds.lo.y + cy * grid.resolution};
        const Vec2 hi{lo.x + grid.resolution, lo.y + grid.resolution};
        bool occ = lo.x < bounds.lo.x + inflation || hi.x > bounds.hi.x - inflation ||
                   lo.y < bounds.lo.y + inflation || hi.y > bounds.hi.y - inflation;
        for (const auto& c : circles) {
          if (occ) break;
          occ = detail::dist_point_rect(c.center, lo, hi) <= c.radius + inflation;
        }
        for (const auto& b : boxes) {
          if (occ) break;
          occ = detail::dist_rect_rect(lo, hi, b.lo, b.hi) <= inflation;
        }
        grid.set(cx, cy, occ);
      }
    }
  }

  bool free_space_connected() const {
    const int64_t total_free = grid.free_count();
    if (total_free == 0) return false;
    int sx = -1, sy = -1;
    for (int cy = 0; cy < grid.ny && sx < 0; ++cy)
      for (int cx = 0; cx < grid.nx; ++cx)
        if (!grid.occupied(cx, cy)) {
          sx = cx;
          sy = cy;
          break;
        }
    std::vector<uint8_t> seen(grid.occ.size(), 0);
    std::vector<std::pair<int, int>> stack{{sx, sy}};
    seen[static_cast<size_t>(sy) * grid.nx + sx] = 1;
    int64_t reached = 0;
    while (!stack.empty()) {
      auto [cx, cy] = stack.back();
      stack.pop_back();
      ++reached;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx2 = cx + dx, ny2 = cy + dy;
          if (!grid.in_bounds(nx2, ny2) || grid.occupied(nx2, ny2)) continue;
          uint8_t& s = seen[static_cast<size_t>(ny2) * grid.nx + nx2];
          if (!s) {
            s = 1;
            stack.push_back({nx2, ny2});
          }
        }
    }
    return reached == total_free;
  }

  // ---- serialization (line-oriented key-value) ----

  void save(std::ostream& os) const {
    os << "format imnav-world 1\n";
    os << "seed " << seed << "\n";
    os << "profile " << to_string(profile) << "\n";
    os << "bounds " << fmt_double(bounds.lo.x) << " " << fmt_double(bounds.lo.y) << " "
       << fmt_double(bounds.hi.x) << " " << fmt_double(bounds.hi.y) << "\n";
    os << "inflation " << fmt_double(inflation) << "\n";
    for (const auto& w : walls)
      os << "wall " << fmt_double(w.p.x) << " " << fmt_double(w.p.y) << " " << fmt_double(w.q.x)
         << " " << fmt_double(w.q.y) << " " << fmt_double(w.color.r) << " "
         << fmt_double(w.color.g) << " " << fmt_double(w.color.b) << "\n";
    for (const auto& c : circles)
      os << "circle " << fmt_double(c.center.x) << " " << fmt_double(c.center.y) << " "
         << fmt_double(c.radius) << " " << fmt_double(c.color.r) << " " << fmt_double(c.color.g)
         << " " << fmt_double(c.color.b) << "\n";
    for (const auto& b : boxes)
      os << "box " << fmt_double(b.lo.x) << " " << fmt_double(b.lo.y) << " " << fmt_double(b.hi.x)
         << " " << fmt_double(b.hi.y) << " " << fmt_double(b.color.r) << " "
         << fmt_double(b.color.g) << " " << fmt_double(b.color.b) << "\n";
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error("cannot write world file: " + path);
    save(f);
  }

  static WorldMap load(std::istream& is) {
    WorldMap w;
    w.walls.clear();
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
        if (name != "imnav-world" || ver != 1)
          throw Error("world file: unsupported format at line " + std::to_string(lineno));
        saw_header = true;
      } else if (key == "seed") {
        ls >> w.seed;
      } else if (key == "profile") {
        std::string p;
        ls >> p;
        w.profile = profile_from_string(p);
      } else if (key == "bounds") {
        ls >> w.bounds.lo.x >> w.bounds.lo.y >> w.bounds.hi.x >> w.bounds.hi.y;
      } else if (key == "inflation") {
        ls >> w.inflation;
      } else if (key == "wall") {
        WallSegment s;
        ls >> s.p.x >> s.p.y >> s.q.x >> s.q.y >> s.color.r >> s.color.g >> s.color.b;
        w.walls.push_back(s);
      } else if (key == "circle") {
        Circle c;
        ls >> c.center.x >> c.center.y >> c.radius >> c.color.r >> c.color.g >> c.color.b;
        w.circles.push_back(c);
      } else if (key == "box") {
        BoxObstacle b;
        ls >> b.lo.x >> b.lo.y >> b.hi.x >> b.hi.y >> b.color.r >> b.color.g >> b.color.b;
        w.boxes.push_back(b);
      } else {
        throw Error("world file: unknown key '" + key + "' at line " + std::to_string(lineno));
      }
      if (ls.fail()) throw Error("world file: parse error at line " + std::to_string(lineno));
    }
    if (!saw_header) throw Error("world file: missing format header");
    w.rebuild_grid();
    return w;
  }

  static WorldMap load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open world file: " + path);
    return load(f);
  }

 private:
  static double ray_segment(Vec2 o, Vec2 d, Vec2 p, Vec2 q) {
    const Vec2 e = q - p;
    const double denom = d.x * e.y - d.y * e.x;
    if (std::abs(denom) < 1e-15) return std::numeric_limits<double>::infinity();
    const Vec2 w = p - o;
    const double t = (w.x * e.y - w.y * e.x) / denom;
    const double u = (w.x * d.y - w.y * d.x) / denom;
    if (t >= 0.0 && u >= 0.0 && u <= 1.0) return t;
    return std::numeric_limits<double>::infinity();
  }

  static double ray_circle(Vec2 o, Vec2 d, Vec2 c, double r) {
    const Vec2 oc = o - c;
    const double b = oc.dot(d);
    const double disc = b * b - (oc.norm_sq() - r * r);
    if (disc < 0.0) return std::numeric_limits<double>::infinity();
    const double s = std::sqrt(disc);
    const double t0 = -b - s, t1 = -b + s;
    if (t0 >= 0.0) return t0;
    if (t1 >= 0.0) return t1;
    return std::numeric_limits<double>::infinity();
  }

  static double ray_box(Vec2 o, Vec2 d, Vec2 lo, Vec2 hi) {
    double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < 2; ++axis) {
      const double oa = axis == 0 ? o.x : o.y;
      const double da = axis == 0 ? d.x : d.y;
      const double la = axis == 0 ? lo.x : lo.y;
      const double ha = axis == 0 ? hi.x : hi.y;
      if (std::abs(da) < 1e-15) {
        if (oa < la || oa > ha) return std::numeric_limits<double>::infinity();
      } else {
        double t0 = (la - oa) / da, t1 = (ha - oa) / da;
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return std::numeric_limits<double>::infinity();
      }
    }
    return tmin;
  }

  static WorldMap sample_layout(uint64_t seed, Profile profile, Rng& rng) {
    WorldMap w;
    w.seed = seed;
    w.profile = profile;
    w.bounds = {{0.0, 0.0}, {10.0, 10.0}};
    w.make_walls(rng);

    int count = 0;
    switch (profile) {
      case Profile::kSparse: count = static_cast<int>(rng.uniform_int(3, 6)); break;
      case Profile::kCluttered: count = static_cast<int>(rng.uniform_int(10, 16)); break;
      case Profile::kPoles: count = static_cast<int>(rng.uniform_int(6, 12)); break;
    }
    const double hue0 = rng.uniform();
    for (int i = 0; i < count; ++i) {
      const Color col = detail::hsv(hue0 + 0.61803398875 * (i + 1), 0.7, 0.85);
      const bool circle = profile == Profile::kPoles || rng.uniform() < 0.5;
      if (circle) {
        double r = 0.0;
        switch (profile) {
          case Profile::kPoles: r = rng.uniform(0.15, 0.3); break;
          case Profile::kSparse: r = rng.uniform(0.3, 0.6); break;
          case Profile::kCluttered: r = rng.uniform(0.2, 0.5); break;
        }
        const double margin = r + 0.5;
        Vec2 c{rng.uniform(w.bounds.lo.x + margin, w.bounds.hi.x - margin),
               rng.uniform(w.bounds.lo.y + margin, w.bounds.hi.y - margin)};
        w.circles.push_back({c, r, col});
      } else {
        const double half_w = rng.uniform(0.25, 0.6);
        const double half_h = rng.uniform(0.25, 0.6);
        const double mx = half_w + 0.5, my = half_h + 0.5;
        Vec2 c{rng.uniform(w.bounds.lo.x + mx, w.bounds.hi.x - mx),
               rng.uniform(w.bounds.lo.y + my, w.bounds.hi.y - my)};
        w.boxes.push_back({{c.x - half_w, c.y - half_h}, {c.x + half_w, c.y + half_h}, col});
      }
    }
    return w;
  }

  // Boundary walls split into 4 colored segments per side; the palette gives
  // the renderer view-direction cues.
  void make_walls(Rng& rng) {
    walls.clear();
    const double hue0 = rng.uniform();
    int idx = 0;
    auto add_side = [&](Vec2 a, Vec2 b) {
      for (int s = 0; s < 4; ++s) {
        const double t0 = s / 4.0, t1 = (s + 1) / 4.0;
        WallSegment seg;
        seg.p = {a.x + (b.x - a.x) * t0, a.y + (b.y - a.y) * t0};
        seg.q = {a.x + (b.x - a.x) * t1, a.y + (b.y - a.y) * t1};
        seg.color = detail::hsv(hue0 + idx / 16.0, 0.55, 0.35 + 0.55 * ((idx * 7) % 16) / 15.0);
        walls.push_back(seg);
        ++idx;
      }
    };
    add_side(bounds.lo, {bounds.hi.x, bounds.lo.y});
    add_side({bounds.hi.x, bounds.lo.y}, bounds.hi);
    add_side(bounds.hi, {bounds.lo.x, bounds.hi.y});
    add_side({bounds.lo.x, bounds.hi.y}, bounds.lo);
  }
};

// ---- geodesic distance on the occupancy grid ----

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();

// Snaps a point to the nearest free cell within max_snap meters (cell-center
// metric); throws when no free cell is close enough.
inline std::pair<int, int> snap_to_free_cell(const WorldMap& w, Vec2 p, double max_snap = 0.3) {
  const auto& g = w.grid;
  auto [cx, cy] = g.cell_of(p);
  cx = std::clamp(cx, 0, g.nx - 1);
  cy = std::clamp(cy, 0, g.ny - 1);
  if (g.occupied(cx, cy) == false) return {cx, cy};
  const int r = static_cast<int>(std::ceil(max_snap / g.resolution)) + 1;
  double best = std::numeric_limits<double>::infinity();
  std::pair<int, int> best_cell{-1, -1};
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const int nx2 = cx + dx, ny2 = cy + dy;
      if (!g.in_bounds(nx2, ny2) || g.occupied(nx2, ny2)) continue;
      const double d = distance(p, g.center_of(nx2, ny2));
      if (d < best) {
        best = d;
        best_cell = {nx2, ny2};
      }
    }
  if (best_cell.first < 0 || best > max_snap)
    throw Error("snap_to_free_cell: no free cell within " + fmt_double(max_snap) + " m");
  return best_cell;
}

// Single-source shortest-path field over the 8-connected grid (diagonal cost
// sqrt(2) * resolution), computed from a target point.
struct DistanceField {
  int nx = 0, ny = 0;
  std::vector<double> dist;

  double at(int cx, int cy) const { return dist[static_cast<size_t>(cy) * nx + cx]; }

  static DistanceField from(const WorldMap& w, Vec2 target) {
    const auto& g = w.grid;
    DistanceField f;
    f.nx = g.nx;
    f.ny = g.ny;
    f.dist.assign(static_cast<size_t>(g.nx) * g.ny, kUnreachable);
    auto [tx, ty] = snap_to_free_cell(w, target);
    using Item = std::pair<double, int>;  // (distance, flat index)
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    const int start = ty * g.nx + tx;
    f.dist[start] = 0.0;
    heap.push({0.0, start});
    const double straight = g.resolution;
    const double diag = g.resolution * std::sqrt(2.0);
    while (!heap.empty()) {
      auto [d, idx] = heap.top();
      heap.pop();
      if (d > f.dist[idx]) continue;
      const int cx = idx % g.nx, cy = idx / g.nx;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx2 = cx + dx, ny2 = cy + dy;
          if (!g.in_bounds(nx2, ny2) || g.occupied(nx2, ny2)) continue;
          const double nd = d + ((dx == 0 || dy == 0) ? straight : diag);
          const int nidx = ny2 * g.nx + nx2;
          if (nd < f.dist[nidx]) {
            f.dist[nidx] = nd;
            heap.push({nd, nidx});
          }
        }
    }
    return f;
  }

  // Distance from p through the field; kUnreachable when disconnected.
  double query(const WorldMap& w, Vec2 p) const {
    auto [cx, cy] = snap_to_free_cell(w, p);
    return at(cx, cy);
  }
};

inline double geodesic_distance(const WorldMap& w, Vec2 p, Vec2 q) {
  return DistanceField::from(w, q).query(w, p);
}

}  // namespace imnav
