#pragma once

#include <stdexcept>
#include <vector>

#include "stf/scene.hpp"

namespace stf {

/// A point cloud with one class id per point; 0 is background.
struct InjectedPointCloud {
  std::vector<Point> points;
  std::vector<int> classes;

  std::size_t size() const noexcept { return points.size(); }
  /// The base cloud with the class channel removed.
  PointCloud strip() const { return PointCloud{points}; }
};

class TieBreakError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TieBreak {
  Error,         // a point inside two boxes is an error
  FirstByIndex,  // the lowest-index box wins
};

/// Oriented 3D box membership, boundary inclusive.
bool point_in_box(const Point& p, const ObjectTrack& box);

/// Labels every point with the class of the box containing it, or 0.
/// `gt` must hold the boxes as they stood at the cloud's capture time.
InjectedPointCloud inject(const PointCloud& cloud, const std::vector<ObjectTrack>& gt,
                          TieBreak tie_break = TieBreak::Error);

/// Injects the frame of the given age using boxes moved back to that frame.
InjectedPointCloud inject_frame(const SceneSequence& scene, int age,
                                TieBreak tie_break = TieBreak::Error);

}  // namespace stf
