#include "ivoa/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ivoa::monitor {

void GridSpec::validate() const {
  if (x_min >= x_max) throw std::invalid_argument("grid requires x_min < x_max");
  if (y_min >= y_max) throw std::invalid_argument("grid requires y_min < y_max");
  if (step <= 0) throw std::invalid_argument("grid step must be positive");
  if (safety_radius <= 0) throw std::invalid_argument("safety radius must be positive");
}

int GridSpec::size_x() const {
  return static_cast<int>(std::floor((x_max - x_min) / step + 1e-9)) + 1;
}

int GridSpec::size_y() const {
  return static_cast<int>(std::floor((y_max - y_min) / step + 1e-9)) + 1;
}

Vec3 GridSpec::point(int ix, int iy) const {
  return Vec3(x_min + ix * step, y_min + iy * step, 0.0);
}

namespace {
constexpr double kMaxGroundReach = 30.0;  // ignore near-horizon intersections
}

DepthMonitor::DepthMonitor(const Image& depth, const StereoRig& rig, HeightBand band,
                           int patch_half_px)
    : rig_(rig), band_(band), patch_half_px_(patch_half_px),
      cam_height_(rig.camera_center_robot().z()) {
  const auto& intr = rig.intrinsics;
  const geometry::RigidTransform robot_from_cam = rig.cam_from_robot.inverse();
  const Vec3 right_center =
      rig.camera_center_robot() + rig.baseline * robot_from_cam.rotation.col(0);

  std::vector<Vec3> points;
  std::vector<Vec3> expected;
  points.reserve(static_cast<std::size_t>(depth.width()) * depth.height() / 4);
  expected.reserve(points.capacity());

  zbuf_right_.assign(static_cast<std::size_t>(intr.width) * intr.height,
                     std::numeric_limits<float>::infinity());

  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      const geometry::Pixel px{x + 0.5, y + 0.5};
      const float range = depth.at(x, y);
      if (range > kNoDepthReturn) {
        const Vec3 dir = geometry::pixel_ray(px, intr);
        const Vec3 p = robot_from_cam.apply(dir * static_cast<double>(range));
        points.push_back(p);
        // z-buffer the return in the right view for the occlusion test
        const Vec3 cam_r = rig.robot_to_right_cam(p);
        if (cam_r.z() > 0) {
          const geometry::Pixel rp = geometry::project_to_camera(cam_r, intr);
          const int rx = static_cast<int>(rp.u), ry = static_cast<int>(rp.v);
          if (rx >= 0 && rx < intr.width && ry >= 0 && ry < intr.height) {
            float& zb = zbuf_right_[static_cast<std::size_t>(ry) * intr.width + rx];
            zb = std::min(zb, static_cast<float>((p - right_center).norm()));
          }
        }
      }
      const auto g = geometry::left_pixel_to_ground(px, rig);
      if (g && g->head<2>().norm() < kMaxGroundReach) expected.push_back(*g);
    }
  }
  index_ = PointIndex(std::move(points));
  expected_ground_ = PointIndex(std::move(expected));

  // right-view ground intersections, split into visible / blocked
  std::vector<Vec3> expected_right;
  std::vector<Vec3> blocked_right;
  const geometry::Mat3 cam_to_robot = robot_from_cam.rotation;
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const Vec3 dir = cam_to_robot * geometry::pixel_ray({x + 0.5, y + 0.5}, intr);
      if (dir.z() >= -1e-12) continue;
      const double t = -right_center.z() / dir.z();
      const Vec3 g = right_center + t * dir;
      if (g.head<2>().norm() >= kMaxGroundReach) continue;
      expected_right.push_back(g);
      const float zb = zbuf_right_[static_cast<std::size_t>(y) * intr.width + x];
      if (zb < t - kBlockSlack) blocked_right.push_back(g);
    }
  }
  expected_ground_right_ = PointIndex(std::move(expected_right));
  blocked_ground_right_ = PointIndex(std::move(blocked_right));
}

double DepthMonitor::observe_radius(const Vec3& p, double radius) const {
  // ground span a matching patch can reach at the far edge of the disc,
  // dominated by the row direction on a near-horizontal ground plane
  const double x_probe = std::abs(p.x()) + radius;
  const double span = patch_half_px_ * x_probe * x_probe /
                      (rig_.intrinsics.fy * std::max(cam_height_, 1e-6));
  return radius + span + 0.03;
}

std::optional<bool> DepthMonitor::is_obstacle_free(const Vec3& p, double radius) const {
  bool occupied = false;
  index_.visit_disc(p, radius, [&](const Vec3& q) {
    if ((q.z() >= band_.h_obs && q.z() <= band_.z_max) || q.z() < -band_.h_obs) {
      occupied = true;
      return false;
    }
    return true;
  });
  if (occupied) return false;

  // observability: everything a patch matcher would probe around the disc
  // must be ground that both cameras actually see
  const double obs_radius = observe_radius(p, radius);
  int ground_support = 0;
  index_.visit_disc(p, obs_radius, [&](const Vec3& q) {
    if (std::abs(q.z()) <= band_.h_obs) ++ground_support;
    return true;
  });
  int expected = 0;
  expected_ground_.visit_disc(p, obs_radius, [&](const Vec3&) {
    ++expected;
    return true;
  });
  if (expected < kMinExpected) return std::nullopt;
  if (ground_support < kMinCoverage * expected) return std::nullopt;

  // the right camera must see it too, else stereo cannot be supervised
  int expected_r = 0, blocked_r = 0;
  expected_ground_right_.visit_disc(p, obs_radius, [&](const Vec3&) {
    ++expected_r;
    return true;
  });
  blocked_ground_right_.visit_disc(p, obs_radius, [&](const Vec3&) {
    ++blocked_r;
    return true;
  });
  if (expected_r < kMinExpected) return std::nullopt;
  if (expected_r - blocked_r < kMinCoverage * expected_r) return std::nullopt;
  return true;
}

std::optional<bool> is_obstacle_free_monitor(const Image& depth, const StereoRig& rig,
                                             const Vec3& p, double radius,
                                             HeightBand band) {
  return DepthMonitor(depth, rig, band).is_obstacle_free(p, radius);
}

bool geometric_oracle(const worldsim::Scene& scene, const Vec3& p_world, double radius) {
  for (const auto& b : scene.boxes) {
    const double dx = std::max({b.x_min() - p_world.x(), 0.0, p_world.x() - b.x_max()});
    const double dy = std::max({b.y_min() - p_world.y(), 0.0, p_world.y() - b.y_max()});
    if (dx * dx + dy * dy <= radius * radius) return false;
  }
  return true;
}

}  // namespace ivoa::monitor
