#pragma once

#include <optional>
#include <vector>

#include "ivoa/geometry.hpp"
#include "ivoa/image.hpp"
#include "ivoa/pointgrid.hpp"
#include "ivoa/worldsim.hpp"

namespace ivoa::monitor {

using geometry::StereoRig;
using geometry::Vec3;

// Query lattice on the ground plane in front of the robot, robot frame.
// Lattice points are x_min + i*step (and likewise for y); ordering is
// row-major with x as the slow index.
struct GridSpec {
  double x_min = 1.0, x_max = 3.0;
  double y_min = -0.9, y_max = 0.9;
  double step = 0.1;
  double safety_radius = 0.10;

  void validate() const;
  int size_x() const;
  int size_y() const;
  int size() const { return size_x() * size_y(); }
  Vec3 point(int ix, int iy) const;
  Vec3 point(int k) const { return point(k / size_y(), k % size_y()); }
};

// Vertical band that counts as an obstacle; shared with the dense backend so
// monitor and perception answer the same question.
struct HeightBand {
  double h_obs = 0.15;  // below: ground clutter; above (negated): hole
  double z_max = 2.0;   // above: overhang, ignored
};

// Ground-truth obstacle decisions from the rendered depth image. Converts
// the depth raster to a robot-frame cloud once and answers point queries.
class DepthMonitor {
 public:
  // patch_half_px: half window of the stereo matcher whose queries this
  // monitor supervises; the observability test widens by the ground span
  // such a patch can touch, so every pixel the matcher compares is actually
  // visible to both cameras wherever the monitor commits to an answer.
  DepthMonitor(const Image& depth, const StereoRig& rig, HeightBand band = {},
               int patch_half_px = 4);

  // false = obstacle (or hole) within `radius` of p; nullopt = the query
  // neighborhood is not sufficiently observed (occluded or outside the view).
  //
  // "Sufficiently observed" means both cameras can actually supervise the
  // disc: (a) ground-level returns inside the disc match the pixel count
  // whose rays would reach the disc on a bare ground plane, and (b) the
  // right camera's view of the disc is not blocked by closer geometry
  // (checked against a right-view z-buffer of the depth returns). Hidden box
  // sides, occlusion shadows and half-occluded strips fail this test instead
  // of being wrongly reported free; labeling skips such queries, matching
  // the assumption that query points lie in the field of view of the
  // cameras.
  std::optional<bool> is_obstacle_free(const Vec3& p, double radius) const;

  std::size_t point_count() const { return index_.size(); }

  static constexpr double kMinCoverage = 0.99;
  static constexpr int kMinExpected = 6;
  static constexpr double kBlockSlack = 0.05;  // meters in front of the ground hit

 private:
  PointIndex index_;             // all depth returns
  PointIndex expected_ground_;   // left-view per-pixel ground intersections
  PointIndex expected_ground_right_;  // same for the right camera
  PointIndex blocked_ground_right_;   // right ground pixels hidden by geometry
  std::vector<float> zbuf_right_;     // nearest return range per right pixel
  StereoRig rig_;
  HeightBand band_;
  int patch_half_px_ = 4;
  double cam_height_ = 0.0;

  double observe_radius(const Vec3& p, double radius) const;
};

// One-shot form of the monitor query.
std::optional<bool> is_obstacle_free_monitor(const Image& depth, const StereoRig& rig,
                                             const Vec3& p, double radius,
                                             HeightBand band = {});

// Exact scene-level answer used only by tests and agreement stats: obstacle
// iff some box footprint intersects the closed disc around p (world frame).
bool geometric_oracle(const worldsim::Scene& scene, const Vec3& p_world, double radius);

}  // namespace ivoa::monitor
