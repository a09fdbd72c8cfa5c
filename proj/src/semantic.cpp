#include "stf/semantic.hpp"

#include <cmath>

namespace stf {

bool point_in_box(const Point& p, const ObjectTrack& box) {
  const double dx = p.x - box.pose.x;
  const double dy = p.y - box.pose.y;
  const double dz = p.z - box.pose.z;
  const double c = std::cos(box.pose.yaw), s = std::sin(box.pose.yaw);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= box.size.length / 2 && std::abs(ly) <= box.size.width / 2 &&
         std::abs(dz) <= box.size.height / 2;
}

InjectedPointCloud inject(const PointCloud& cloud, const std::vector<ObjectTrack>& gt,
                          TieBreak tie_break) {
  InjectedPointCloud out;
  out.points = cloud.points;
  out.classes.assign(cloud.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    int owner = -1;
    for (std::size_t b = 0; b < gt.size(); ++b) {
      if (!point_in_box(cloud.points[i], gt[b])) continue;
      if (owner < 0) {
        owner = static_cast<int>(b);
        if (tie_break == TieBreak::FirstByIndex) break;
      } else {
        throw TieBreakError("point " + std::to_string(i) + " lies in boxes " + std::to_string(owner) +
                            " and " + std::to_string(b));
      }
    }
    if (owner >= 0) out.classes[i] = gt[static_cast<std::size_t>(owner)].class_id;
  }
  return out;
}

InjectedPointCloud inject_frame(const SceneSequence& scene, int age, TieBreak tie_break) {
  return inject(scene.frame_at_age(age), scene.gt_at_age(age), tie_break);
}

}  // namespace stf
