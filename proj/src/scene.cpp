#include "stf/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "stf/rng.hpp"

namespace stf {

Pose pose_at(const ObjectTrack& track, double dt) {
  return Pose{track.pose.x - track.vx * dt, track.pose.y - track.vy * dt, track.pose.z,
              track.pose.yaw};
}

ObjectTrack track_at(const ObjectTrack& track, double dt) {
  ObjectTrack out = track;
  out.pose = pose_at(track, dt);
  return out;
}

const PointCloud& SceneSequence::frame_at_age(int age) const {
  if (age < 0 || age > k()) throw std::out_of_range("frame age " + std::to_string(age) + " out of range");
  return frames[static_cast<std::size_t>(k() - age)];
}

std::vector<ObjectTrack> SceneSequence::gt_at_age(int age) const {
  std::vector<ObjectTrack> out;
  out.reserve(gt.size());
  for (const auto& t : gt) out.push_back(track_at(t, age * frame_interval));
  return out;
}

const std::vector<ClassTemplate>& class_templates() {
  static const std::vector<ClassTemplate> templates{
      {{4.2, 1.9, 1.6}, 0.6},  // 1: car
      {{7.0, 2.6, 3.0}, 0.45}, // 2: truck
      {{2.0, 0.8, 1.6}, 0.5},  // 3: cyclist
  };
  return templates;
}

namespace {

using Corners = std::array<std::array<double, 2>, 4>;

Corners footprint(const ObjectTrack& t, double gap) {
  const double c = std::cos(t.pose.yaw), s = std::sin(t.pose.yaw);
  const double hl = t.size.length / 2 + gap / 2, hw = t.size.width / 2 + gap / 2;
  Corners out;
  const double sx[4] = {1, -1, -1, 1}, sy[4] = {1, 1, -1, -1};
  for (int i = 0; i < 4; ++i) {
    out[i] = {t.pose.x + c * sx[i] * hl - s * sy[i] * hw, t.pose.y + s * sx[i] * hl + c * sy[i] * hw};
  }
  return out;
}

bool separated_along(const Corners& a, const Corners& b, double ax, double ay) {
  double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
  for (int i = 0; i < 4; ++i) {
    const double pa = a[i][0] * ax + a[i][1] * ay;
    const double pb = b[i][0] * ax + b[i][1] * ay;
    amin = std::min(amin, pa), amax = std::max(amax, pa);
    bmin = std::min(bmin, pb), bmax = std::max(bmax, pb);
  }
  return amax < bmin || bmax < amin;
}

// Frames checked for overlap during placement. Fixed so that the newest
// frame's content never depends on the requested history length.
constexpr int kPlacementHorizon = 8;

}  // namespace

bool footprints_overlap(const ObjectTrack& a, const ObjectTrack& b, double gap) {
  const Corners ca = footprint(a, gap), cb = footprint(b, gap);
  for (const auto* t : {&a, &b}) {
    const double c = std::cos(t->pose.yaw), s = std::sin(t->pose.yaw);
    if (separated_along(ca, cb, c, s) || separated_along(ca, cb, -s, c)) return false;
  }
  return true;
}

namespace {

struct SurfaceSample {
  double lx, ly, lz;  // box frame
  double r;
};

// Samples `count` points on the faces of the box visible from the sensor,
// in the box's own frame.
std::vector<SurfaceSample> sample_surface(const ObjectTrack& t, double sensor_height, CounterRng& rng) {
  const double c = std::cos(t.pose.yaw), s = std::sin(t.pose.yaw);
  const double dx = -t.pose.x, dy = -t.pose.y, dz = sensor_height - t.pose.z;
  // Sensor in box frame.
  const double sx = c * dx + s * dy, sy = -s * dx + c * dy, sz = dz;
  const double hl = t.size.length / 2, hw = t.size.width / 2, hh = t.size.height / 2;

  struct Face {
    int axis;    // 0 x, 1 y, 2 z
    double sign;
    double area;
  };
  std::vector<Face> faces;
  if (sx > hl) faces.push_back({0, 1, t.size.width * t.size.height});
  if (sx < -hl) faces.push_back({0, -1, t.size.width * t.size.height});
  if (sy > hw) faces.push_back({1, 1, t.size.length * t.size.height});
  if (sy < -hw) faces.push_back({1, -1, t.size.length * t.size.height});
  if (sz > hh) faces.push_back({2, 1, t.size.length * t.size.width});
  if (faces.empty()) faces.push_back({2, 1, t.size.length * t.size.width});
  double total = 0;
  for (const auto& f : faces) total += f.area;

  const double base_r = class_templates()[static_cast<std::size_t>(t.class_id - 1)].reflectance;
  std::vector<SurfaceSample> out;
  out.reserve(static_cast<std::size_t>(t.points_per_frame));
  for (int i = 0; i < t.points_per_frame; ++i) {
    double pick = rng.uniform() * total;
    const Face* face = &faces.back();
    for (const auto& f : faces) {
      if (pick < f.area) {
        face = &f;
        break;
      }
      pick -= f.area;
    }
    const double u = rng.uniform(-1, 1), v = rng.uniform(-1, 1);
    SurfaceSample p{};
    switch (face->axis) {
      case 0: p = {face->sign * hl, u * hw, v * hh, 0}; break;
      case 1: p = {u * hl, face->sign * hw, v * hh, 0}; break;
      default: p = {u * hl, v * hw, face->sign * hh, 0}; break;
    }
    p.r = std::clamp(base_r + rng.uniform(-0.15, 0.15), 0.0, 1.0);
    out.push_back(p);
  }
  return out;
}

ObjectTrack draw_track(const SceneConfig& cfg, CounterRng& rng) {
  double total = 0;
  for (double w : cfg.class_mix) total += w;
  double pick = rng.uniform() * total;
  int cls = static_cast<int>(cfg.class_mix.size());
  for (std::size_t i = 0; i < cfg.class_mix.size(); ++i) {
    if (pick < cfg.class_mix[i]) {
      cls = static_cast<int>(i) + 1;
      break;
    }
    pick -= cfg.class_mix[i];
  }
  const auto& tpl = class_templates()[static_cast<std::size_t>(cls - 1)];
  ObjectTrack t;
  t.class_id = cls;
  t.size = {tpl.size.length * rng.uniform(0.9, 1.1), tpl.size.width * rng.uniform(0.9, 1.1),
            tpl.size.height * rng.uniform(0.9, 1.1)};
  const double margin = 0.5 * std::hypot(t.size.length, t.size.width);
  const double half = cfg.area_extent / 2 - margin;
  t.pose = {rng.uniform(-half, half), rng.uniform(-half, half), t.size.height / 2,
            rng.uniform(-std::numbers::pi, std::numbers::pi)};
  const double speed = rng.uniform(0.0, cfg.max_speed);
  t.vx = speed * std::cos(t.pose.yaw);
  t.vy = speed * std::sin(t.pose.yaw);
  t.points_per_frame = cfg.points_per_object;
  return t;
}

void validate(const SceneConfig& cfg) {
  if (cfg.k < 0) throw ValidationError("scene k must be >= 0");
  if (!(cfg.area_extent > 0)) throw ValidationError("area_extent must be positive");
  if (!(cfg.frame_interval > 0)) throw ValidationError("frame_interval must be positive");
  if (cfg.num_objects < 0 || cfg.clutter_density < 0 || cfg.ghost_density < 0) {
    throw ValidationError("object and clutter counts must be non-negative");
  }
  if (cfg.num_objects > 0 && cfg.points_per_object <= 0) {
    throw ValidationError("points_per_object must be positive");
  }
  if (cfg.class_mix.empty() || cfg.class_mix.size() > class_templates().size()) {
    throw ValidationError("class_mix must list between 1 and " +
                          std::to_string(class_templates().size()) + " classes");
  }
  const bool ghosts = cfg.ghost_density > 0 && cfg.ghost_points > 0;
  for (const auto& t : cfg.tracks) {
    if (!(t.size.length > 0 && t.size.width > 0 && t.size.height > 0) || t.class_id < 1 ||
        t.class_id > static_cast<int>(class_templates().size()) || t.points_per_frame <= 0) {
      throw ValidationError("explicit track needs positive size and points, and a known class");
    }
  }
  if (cfg.num_objects == 0 && cfg.tracks.empty() && cfg.clutter_density == 0 && !ghosts) {
    throw ValidationError("configuration would produce empty frames (no objects, no clutter)");
  }
  if (cfg.noise_sigma < 0) throw ValidationError("noise_sigma must be non-negative");
}

}  // namespace

SceneSequence generate_scene(const SceneConfig& cfg) {
  validate(cfg);
  const std::uint64_t key = derive_key(cfg.seed, fnv1a("scene"));
  const int horizon = std::max(cfg.k, kPlacementHorizon - 1);

  SceneSequence scene;
  scene.frame_interval = cfg.frame_interval;
  scene.seed = cfg.seed;

  CounterRng place_rng(derive_key(key, fnv1a("placement")), 0);
  if (!cfg.tracks.empty()) scene.gt = cfg.tracks;
  for (int i = 0; cfg.tracks.empty() && i < cfg.num_objects; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      ObjectTrack cand = draw_track(cfg, place_rng);
      // Keep the sensor outside every box.
      if (std::hypot(cand.pose.x, cand.pose.y) < std::hypot(cand.size.length, cand.size.width)) continue;
      bool ok = true;
      for (const auto& other : scene.gt) {
        for (int age = 0; age <= horizon && ok; ++age) {
          const double dt = age * cfg.frame_interval;
          if (footprints_overlap(track_at(cand, dt), track_at(other, dt), 0.5)) ok = false;
        }
        if (!ok) break;
      }
      if (ok) {
        scene.gt.push_back(cand);
        placed = true;
      }
    }
    if (!placed) {
      throw PlacementError("could not place object " + std::to_string(i) +
                           " without overlap after 1000 attempts");
    }
  }

  std::vector<std::vector<SurfaceSample>> surfaces;
  for (std::size_t i = 0; i < scene.gt.size(); ++i) {
    CounterRng rng(derive_key(key, fnv1a("surface")), i);
    surfaces.push_back(sample_surface(scene.gt[i], cfg.sensor_height, rng));
  }

  const double half = cfg.area_extent / 2;
  const auto clutter_count =
      static_cast<std::size_t>(std::llround(cfg.clutter_density * cfg.area_extent * cfg.area_extent));
  const auto ghost_count = static_cast<std::size_t>(
      std::llround(cfg.ghost_density * cfg.area_extent * cfg.area_extent / 100.0));

  scene.frames.resize(static_cast<std::size_t>(cfg.k) + 1);
  for (int age = 0; age <= cfg.k; ++age) {
    const double dt = age * cfg.frame_interval;
    PointCloud& cloud = scene.frames[static_cast<std::size_t>(cfg.k - age)];

    for (std::size_t i = 0; i < scene.gt.size(); ++i) {
      const Pose pose = pose_at(scene.gt[i], dt);
      const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
      CounterRng noise(derive_key(derive_key(key, fnv1a("noise")), static_cast<std::uint64_t>(age)), i);
      for (const auto& p : surfaces[i]) {
        // Noise is added in the box frame and truncated at 3 sigma.
        const double lx = p.lx + cfg.noise_sigma * noise.truncated_normal(3.0);
        const double ly = p.ly + cfg.noise_sigma * noise.truncated_normal(3.0);
        const double lz = p.lz + cfg.noise_sigma * noise.truncated_normal(3.0);
        cloud.points.push_back(
            {pose.x + c * lx - s * ly, pose.y + s * lx + c * ly, pose.z + lz, p.r, dt});
      }
    }

    CounterRng ground(derive_key(key, fnv1a("ground")), static_cast<std::uint64_t>(age));
    for (std::size_t i = 0; i < clutter_count; ++i) {
      const double x = ground.uniform(-half, half), y = ground.uniform(-half, half);
      const double z = cfg.noise_sigma * ground.truncated_normal(3.0);
      cloud.points.push_back({x, y, z, ground.uniform(0.0, 0.3), dt});
    }

    if (cfg.ghost_points > 0) {
      const auto gt_now = scene.gt_at_age(age);
      CounterRng ghost(derive_key(key, fnv1a("ghost")), static_cast<std::uint64_t>(age));
      for (std::size_t g = 0; g < ghost_count; ++g) {
        // A ghost is an object-shaped return that exists for one frame only.
        ObjectTrack g_track = draw_track(cfg, ghost);
        g_track.vx = g_track.vy = 0;
        g_track.points_per_frame = cfg.ghost_points;
        const double gx = g_track.pose.x, gy = g_track.pose.y;
        bool clear = true;
        for (const auto& t : gt_now) {
          const double reach =
              0.5 * (std::hypot(t.size.length, t.size.width) + std::hypot(g_track.size.length, g_track.size.width));
          if (std::hypot(t.pose.x - gx, t.pose.y - gy) < reach + 0.5) clear = false;
        }
        const auto samples = sample_surface(g_track, cfg.sensor_height, ghost);
        if (!clear) continue;
        const double c = std::cos(g_track.pose.yaw), s = std::sin(g_track.pose.yaw);
        for (const auto& p : samples) {
          cloud.points.push_back({gx + c * p.lx - s * p.ly, gy + s * p.lx + c * p.ly, g_track.pose.z + p.lz, p.r, dt});
        }
      }
    }

    if (cloud.empty()) {
      throw ValidationError("frame at age " + std::to_string(age) + " came out empty");
    }
  }
  return scene;
}

void write_scene(std::ostream& os, const SceneSequence& scene,
                 const std::vector<std::vector<int>>* semantic) {
  char buf[64];
  auto num = [&](double v) -> const char* {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  };
  os << "stf-scene 1\n";
  os << "k " << scene.k() << '\n';
  os << "frame_interval " << num(scene.frame_interval) << '\n';
  os << "seed " << scene.seed << '\n';
  os << "semantic " << (semantic ? 1 : 0) << '\n';
  os << "objects " << scene.gt.size() << '\n';
  for (const auto& t : scene.gt) {
    os << t.class_id;
    for (double v : {t.size.length, t.size.width, t.size.height, t.pose.x, t.pose.y, t.pose.z,
                     t.pose.yaw, t.vx, t.vy}) {
      os << ' ' << num(v);
    }
    os << ' ' << t.points_per_frame << '\n';
  }
  for (std::size_t f = 0; f < scene.frames.size(); ++f) {
    const auto& cloud = scene.frames[f];
    const int age = scene.k() - static_cast<int>(f);
    os << "frame " << age << ' ' << cloud.size() << '\n';
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto& p = cloud.points[i];
      os << num(p.x);
      for (double v : {p.y, p.z, p.r, p.dt}) os << ' ' << num(v);
      if (semantic) os << ' ' << (*semantic)[f][i];
      os << '\n';
    }
  }
}

void write_scene(const std::filesystem::path& path, const SceneSequence& scene,
                 const std::vector<std::vector<int>>* semantic) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write scene file: " + path.string());
  write_scene(os, scene, semantic);
}

namespace {

void expect_token(std::istream& is, const char* token) {
  std::string got;
  if (!(is >> got) || got != token) {
    throw std::runtime_error(std::string("scene file: expected '") + token + "', got '" + got + "'");
  }
}

double read_double(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) throw std::runtime_error("scene file truncated");
  return std::stod(tok);
}

}  // namespace

SceneSequence read_scene(std::istream& is, std::vector<std::vector<int>>* semantic) {
  expect_token(is, "stf-scene");
  int version = 0;
  is >> version;
  if (version != 1) throw std::runtime_error("unsupported scene file version");
  int k = 0;
  expect_token(is, "k");
  is >> k;
  SceneSequence scene;
  expect_token(is, "frame_interval");
  scene.frame_interval = read_double(is);
  expect_token(is, "seed");
  is >> scene.seed;
  int has_semantic = 0;
  expect_token(is, "semantic");
  is >> has_semantic;
  std::size_t n_objects = 0;
  expect_token(is, "objects");
  is >> n_objects;
  for (std::size_t i = 0; i < n_objects; ++i) {
    ObjectTrack t;
    is >> t.class_id;
    t.size.length = read_double(is);
    t.size.width = read_double(is);
    t.size.height = read_double(is);
    t.pose.x = read_double(is);
    t.pose.y = read_double(is);
    t.pose.z = read_double(is);
    t.pose.yaw = read_double(is);
    t.vx = read_double(is);
    t.vy = read_double(is);
    is >> t.points_per_frame;
    scene.gt.push_back(t);
  }
  scene.frames.resize(static_cast<std::size_t>(k) + 1);
  if (semantic) semantic->assign(scene.frames.size(), {});
  for (int f = 0; f <= k; ++f) {
    int age = 0;
    std::size_t n = 0;
    expect_token(is, "frame");
    is >> age >> n;
    if (age != k - f) throw std::runtime_error("scene file: frames out of order");
    auto& cloud = scene.frames[static_cast<std::size_t>(f)];
    cloud.points.resize(n);
    for (auto& p : cloud.points) {
      p.x = read_double(is);
      p.y = read_double(is);
      p.z = read_double(is);
      p.r = read_double(is);
      p.dt = read_double(is);
      if (has_semantic) {
        int c = 0;
        is >> c;
        if (semantic) (*semantic)[static_cast<std::size_t>(f)].push_back(c);
      }
    }
  }
  if (!is) throw std::runtime_error("scene file truncated");
  return scene;
}

SceneSequence read_scene(const std::filesystem::path& path, std::vector<std::vector<int>>* semantic) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read scene file: " + path.string());
  return read_scene(is, semantic);
}

}  // namespace stf
