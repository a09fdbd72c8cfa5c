#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

namespace stf {

/// Raised for scene configurations that cannot produce a valid sequence.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One LiDAR return. dt is the time lag to the newest frame in seconds.
struct Point {
  double x = 0, y = 0, z = 0;
  double r = 0;
  double dt = 0;

  bool operator==(const Point&) const = default;
};

struct PointCloud {
  std::vector<Point> points;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  bool operator==(const PointCloud&) const = default;
};

struct BoxSize {
  double length = 0, width = 0, height = 0;
  bool operator==(const BoxSize&) const = default;
};

/// Box centre (x, y, z) and heading.
struct Pose {
  double x = 0, y = 0, z = 0, yaw = 0;
  bool operator==(const Pose&) const = default;
};

struct ObjectTrack {
  int class_id = 1;
  BoxSize size;
  Pose pose;  // at the newest frame
  double vx = 0, vy = 0;
  int points_per_frame = 1;

  bool operator==(const ObjectTrack&) const = default;
};

/// Pose of a constant-velocity track `dt` seconds before the newest frame.
Pose pose_at(const ObjectTrack& track, double dt);

/// The track as it stood `dt` seconds before the newest frame.
ObjectTrack track_at(const ObjectTrack& track, double dt);

struct SceneConfig {
  int num_objects = 5;
  /// Unnormalised class probabilities; entry i is class i+1.
  std::vector<double> class_mix{0.6, 0.4};
  /// Side of the square area, centred on the sensor, in metres.
  double area_extent = 32.0;
  /// Uniform ground returns per square metre.
  double clutter_density = 0.15;
  /// Object-shaped returns per 100 square metres that last one frame, redrawn every frame.
  double ghost_density = 0.5;
  int ghost_points = 20;
  int points_per_object = 20;
  /// Number of preceding frames; the sequence holds k + 1 frames.
  int k = 3;
  double frame_interval = 0.5;
  double max_speed = 1.0;
  double noise_sigma = 0.02;
  double sensor_height = 1.8;
  std::uint64_t seed = 0;
  /// When non-empty, these objects are used as given instead of random
  /// placement, and num_objects is ignored.
  std::vector<ObjectTrack> tracks;
};

struct SceneSequence {
  /// Oldest to newest; frames[k] is the current frame (dt == 0).
  std::vector<PointCloud> frames;
  /// Object states at the newest frame.
  std::vector<ObjectTrack> gt;
  double frame_interval = 0.5;
  std::uint64_t seed = 0;

  int k() const noexcept { return static_cast<int>(frames.size()) - 1; }
  const PointCloud& current() const { return frames.back(); }
  /// Frame captured `age` steps before the newest one.
  const PointCloud& frame_at_age(int age) const;
  /// Ground-truth boxes moved back to the frame of the given age.
  std::vector<ObjectTrack> gt_at_age(int age) const;

  bool operator==(const SceneSequence&) const = default;
};

/// Class templates (length, width, height) and mean reflectance.
struct ClassTemplate {
  BoxSize size;
  double reflectance;
};
const std::vector<ClassTemplate>& class_templates();

SceneSequence generate_scene(const SceneConfig& cfg);

/// True when the two boxes' footprints overlap (separating-axis test).
bool footprints_overlap(const ObjectTrack& a, const ObjectTrack& b, double gap = 0.0);

// Text serialisation. Point rows carry a sixth column when `semantic` is
// supplied (one class id per point per frame).
void write_scene(std::ostream& os, const SceneSequence& scene,
                 const std::vector<std::vector<int>>* semantic = nullptr);
void write_scene(const std::filesystem::path& path, const SceneSequence& scene,
                 const std::vector<std::vector<int>>* semantic = nullptr);
SceneSequence read_scene(std::istream& is, std::vector<std::vector<int>>* semantic = nullptr);
SceneSequence read_scene(const std::filesystem::path& path,
                         std::vector<std::vector<int>>* semantic = nullptr);

}  // namespace stf
