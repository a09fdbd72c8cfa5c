#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "stf/rng.hpp"
#include "stf/scene.hpp"
#include "stf/semantic.hpp"

using namespace stf;

namespace {

ObjectTrack car(double x, double y, double yaw, double vx = 0, double vy = 0) {
  ObjectTrack t;
  t.class_id = 1;
  t.size = {4.0, 1.8, 1.6};
  t.pose = {x, y, 0.8, yaw};
  t.vx = vx;
  t.vy = vy;
  t.points_per_frame = 20;
  return t;
}

SceneConfig isolated(std::vector<ObjectTrack> tracks, int k) {
  SceneConfig cfg;
  cfg.tracks = std::move(tracks);
  cfg.clutter_density = 0;
  cfg.ghost_density = 0;
  cfg.k = k;
  cfg.seed = 17;
  return cfg;
}

std::pair<double, double> centroid(const PointCloud& c) {
  double x = 0, y = 0;
  for (const auto& p : c.points) {
    x += p.x;
    y += p.y;
  }
  return {x / static_cast<double>(c.size()), y / static_cast<double>(c.size())};
}

// Independent membership oracle: footprint corners plus half-plane signs.
bool in_box_by_corners(const Point& p, const ObjectTrack& b) {
  const double c = std::cos(b.pose.yaw), s = std::sin(b.pose.yaw);
  const double hl = b.size.length / 2, hw = b.size.width / 2;
  const double lx[4] = {hl, -hl, -hl, hl}, ly[4] = {hw, hw, -hw, -hw};
  double cx[4], cy[4];
  for (int i = 0; i < 4; ++i) {
    cx[i] = b.pose.x + c * lx[i] - s * ly[i];
    cy[i] = b.pose.y + s * lx[i] + c * ly[i];
  }
  for (int i = 0; i < 4; ++i) {
    const int j = (i + 1) % 4;
    const double cross = (cx[j] - cx[i]) * (p.y - cy[i]) - (cy[j] - cy[i]) * (p.x - cx[i]);
    if (cross < -1e-12) return false;
  }
  return std::abs(p.z - b.pose.z) <= b.size.height / 2;
}

}  // namespace

TEST(Scene, PoseAtFollowsConstantVelocity) {
  const auto t = car(3, 4, 0.3, 1, 1);
  EXPECT_EQ(pose_at(t, 0.0), t.pose);
  const auto p = pose_at(t, 2.0);
  EXPECT_DOUBLE_EQ(p.x, 1.0);
  EXPECT_DOUBLE_EQ(p.y, 2.0);
  EXPECT_DOUBLE_EQ(p.yaw, 0.3);
  const auto s = car(3, 4, 0.3);
  EXPECT_EQ(pose_at(s, 5.0), s.pose);
}

TEST(Scene, EmptyConfigIsRejected) {
  SceneConfig cfg;
  cfg.num_objects = 0;
  cfg.clutter_density = 0;
  cfg.ghost_density = 0;
  EXPECT_THROW(generate_scene(cfg), ValidationError);
  cfg.k = -1;
  cfg.clutter_density = 0.1;
  EXPECT_THROW(generate_scene(cfg), ValidationError);
}

TEST(Scene, CrowdedAreaRaisesPlacementError) {
  SceneConfig cfg;
  cfg.num_objects = 60;
  cfg.area_extent = 12;
  EXPECT_THROW(generate_scene(cfg), PlacementError);
}

TEST(Scene, FrameStructureInvariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SceneConfig cfg;
    cfg.k = 3;
    cfg.seed = seed;
    const auto scene = generate_scene(cfg);
    ASSERT_EQ(scene.frames.size(), 4u);
    ASSERT_EQ(scene.gt.size(), 5u);
    for (int age = 0; age <= 3; ++age) {
      const auto& f = scene.frame_at_age(age);
      ASSERT_FALSE(f.empty());
      for (const auto& p : f.points) {
        ASSERT_EQ(p.dt, age * 0.5);
        ASSERT_GE(p.r, 0.0);
        ASSERT_LE(p.r, 1.0);
        ASSERT_TRUE(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z));
      }
    }
    for (std::size_t i = 0; i < scene.gt.size(); ++i)
      for (std::size_t j = i + 1; j < scene.gt.size(); ++j) EXPECT_FALSE(footprints_overlap(scene.gt[i], scene.gt[j]));
  }
}

TEST(Scene, RegenerationIsBitIdentical) {
  SceneConfig cfg;
  cfg.seed = 123;
  EXPECT_EQ(generate_scene(cfg), generate_scene(cfg));
  SceneConfig other = cfg;
  other.seed = 124;
  EXPECT_NE(generate_scene(cfg), generate_scene(other));
}

TEST(Scene, StaticObjectCentroidIsStable) {
  const auto cfg = isolated({car(8, 3, 0.4)}, 4);
  const auto scene = generate_scene(cfg);
  const auto ref = centroid(scene.frames[0]);
  for (const auto& f : scene.frames) {
    const auto c = centroid(f);
    EXPECT_LT(std::hypot(c.first - ref.first, c.second - ref.second), 3 * cfg.noise_sigma);
  }
}

TEST(Scene, MovingObjectCentroidAdvancesByVelocityTimesInterval) {
  const auto cfg = isolated({car(8, 3, 1.1, 2.0, 0.0)}, 4);
  const auto scene = generate_scene(cfg);
  for (std::size_t i = 1; i < scene.frames.size(); ++i) {
    const auto a = centroid(scene.frames[i - 1]);
    const auto b = centroid(scene.frames[i]);
    EXPECT_NEAR(b.first - a.first, 1.0, 3 * cfg.noise_sigma);
    EXPECT_NEAR(b.second - a.second, 0.0, 3 * cfg.noise_sigma);
  }
}

TEST(Scene, TextRoundTripKeepsEverything) {
  SceneConfig cfg;
  cfg.seed = 5;
  cfg.k = 2;
  const auto scene = generate_scene(cfg);
  std::vector<std::vector<int>> sem;
  for (int age = 2; age >= 0; --age) sem.push_back(inject_frame(scene, age, TieBreak::FirstByIndex).classes);
  std::stringstream ss;
  write_scene(ss, scene, &sem);
  std::vector<std::vector<int>> back;
  const auto read = read_scene(ss, &back);
  EXPECT_EQ(read, scene);
  EXPECT_EQ(back, sem);
}

TEST(Semantic, RotatedBoxMatchesAxisSwap) {
  ObjectTrack box = car(1.0, -2.0, std::numbers::pi / 2);
  CounterRng rng(3, 0);
  int inside = 0;
  for (int i = 0; i < 1000; ++i) {
    const Point p{rng.uniform(-2, 4), rng.uniform(-5, 1), rng.uniform(-0.5, 2.0), 0.5, 0};
    // A quarter turn swaps the footprint's extents.
    const bool oracle = std::abs(p.x - 1.0) <= 0.9 && std::abs(p.y + 2.0) <= 2.0 && std::abs(p.z - 0.8) <= 0.8;
    ASSERT_EQ(point_in_box(p, box), oracle) << i;
    inside += oracle;
  }
  EXPECT_GT(inside, 50);
}

TEST(Semantic, CarContainingTenOfFiftyPoints) {
  const ObjectTrack box = car(0, 0, 0.7);
  CounterRng rng(4, 0);
  PointCloud cloud;
  const double c = std::cos(0.7), s = std::sin(0.7);
  for (int i = 0; i < 10; ++i) {
    const double lx = rng.uniform(-1.9, 1.9), ly = rng.uniform(-0.8, 0.8);
    cloud.points.push_back({c * lx - s * ly, s * lx + c * ly, rng.uniform(0.1, 1.5), 0.3, 0});
  }
  while (cloud.size() < 50) {
    const Point p{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(0, 2), 0.1, 0};
    if (!in_box_by_corners(p, box)) cloud.points.push_back(p);
  }
  const auto inj = inject(cloud, {box});
  for (std::size_t i = 0; i < cloud.size(); ++i) EXPECT_EQ(inj.classes[i], i < 10 ? 1 : 0) << i;
  EXPECT_EQ(inj.strip(), cloud);
}

TEST(Semantic, GeneratedScenesMatchBruteForce) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SceneConfig cfg;
    cfg.seed = seed;
    cfg.k = 3;
    const auto scene = generate_scene(cfg);
    for (int age = 0; age <= 3; ++age) {
      const auto gt = scene.gt_at_age(age);
      const auto inj = inject_frame(scene, age);
      const auto& cloud = scene.frame_at_age(age);
      ASSERT_EQ(inj.points, cloud.points);
      std::size_t labelled = 0;
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        int expect = 0;
        for (const auto& b : gt)
          if (in_box_by_corners(cloud.points[i], b)) expect = b.class_id;
        ASSERT_EQ(inj.classes[i], expect) << "seed " << seed << " age " << age << " point " << i;
        labelled += expect != 0;
      }
      EXPECT_GT(labelled, 0u);
    }
  }
}

TEST(Semantic, ContestedPointNeedsTieBreak) {
  ObjectTrack a = car(0, 0, 0);
  ObjectTrack b = car(1, 0, 0);
  b.class_id = 2;
  PointCloud cloud;
  cloud.points.push_back({0.5, 0, 0.8, 0.2, 0});
  EXPECT_THROW(inject(cloud, {a, b}), TieBreakError);
  EXPECT_EQ(inject(cloud, {a, b}, TieBreak::FirstByIndex).classes[0], 1);
  EXPECT_EQ(inject(cloud, {b, a}, TieBreak::FirstByIndex).classes[0], 2);
}
