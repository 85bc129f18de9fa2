#include <doctest.h>

#include <cmath>

#include "ivoa/monitor.hpp"
#include "ivoa/worldsim.hpp"
#include "test_util.hpp"

using namespace ivoa;
using namespace ivoa::monitor;
using namespace ivoa::worldsim;
using geometry::Pose;
using geometry::StereoRig;
using geometry::Vec3;

namespace {

Scene scene_with_box(double cx, double cy, double size, SurfaceKind kind,
                     double height = 0.45) {
  Scene s;
  s.ground_seed = 4;
  BoxObstacle b;
  b.cx = cx;
  b.cy = cy;
  b.size_x = size;
  b.size_y = size;
  b.size_z = height;
  b.kind = kind;
  b.texture_seed = 12;
  s.boxes.push_back(b);
  return s;
}

}  // namespace

TEST_CASE("gridspec lattice arithmetic") {
  GridSpec g;
  g.x_min = 1.0;
  g.x_max = 3.0;
  g.y_min = -0.9;
  g.y_max = 0.9;
  g.step = 0.1;
  g.validate();
  CHECK(g.size_x() == 21);
  CHECK(g.size_y() == 19);
  CHECK(g.size() == 399);
  const Vec3 first = g.point(0);
  CHECK(first.x() == doctest::Approx(1.0));
  CHECK(first.y() == doctest::Approx(-0.9));
  const Vec3 last = g.point(g.size() - 1);
  CHECK(last.x() == doctest::Approx(3.0));
  CHECK(last.y() == doctest::Approx(0.9));

  GridSpec bad = g;
  bad.step = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.x_min = bad.x_max;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("monitor sees free space on an empty scene") {
  const StereoRig rig = ivoa_test::default_rig();
  Scene s;
  s.ground_seed = 2;
  const Frame f = render_frame(s, rig, Pose::at_position(0, 0), 1);
  const DepthMonitor mon(f.depth, rig);

  GridSpec grid;
  int in_view = 0;
  for (int k = 0; k < grid.size(); ++k) {
    const auto free = mon.is_obstacle_free(grid.point(k), grid.safety_radius);
    if (!free) continue;
    ++in_view;
    CHECK(*free);
  }
  CHECK(in_view > 200);
}

TEST_CASE("monitor detects a box and matches the oracle exactly") {
  const StereoRig rig = ivoa_test::default_rig();
  const Scene s = scene_with_box(2.03, 0.06, 0.5, SurfaceKind::LambertianTextured);
  const Pose pose = Pose::at_position(0, 0);
  const Frame f = render_frame(s, rig, pose, 1);
  const DepthMonitor mon(f.depth, rig);

  GridSpec grid;
  int in_view = 0, agree = 0, occupied_seen = 0;
  for (int k = 0; k < grid.size(); ++k) {
    const Vec3 p = grid.point(k);
    const auto free = mon.is_obstacle_free(p, grid.safety_radius);
    if (!free) continue;
    ++in_view;
    const bool oracle = geometric_oracle(s, pose.robot_to_world(p), grid.safety_radius);
    if (*free == oracle) ++agree;
    if (!*free) ++occupied_seen;
  }
  CHECK(in_view > 200);
  CHECK(occupied_seen > 5);
  CHECK(agree == in_view);  // sigma = 0: agreement must be exact
}

TEST_CASE("monitor sees through reflective ground") {
  const StereoRig rig = ivoa_test::default_rig();
  Scene s;
  s.ground_seed = 2;
  GroundRegion disc;
  disc.shape = RegionShape::Disc;
  disc.cx = 1.8;
  disc.cy = 0.0;
  disc.radius = 0.35;
  disc.kind = SurfaceKind::ReflectiveGround;
  disc.texture_seed = 5;
  s.regions.push_back(disc);
  const Frame f = render_frame(s, rig, Pose::at_position(0, 0), 1);

  const auto free = is_obstacle_free_monitor(f.depth, rig, Vec3(1.8, 0, 0), 0.10);
  REQUIRE(free.has_value());
  CHECK(*free);
}

TEST_CASE("monitor output is independent of surface kind") {
  const StereoRig rig = ivoa_test::default_rig();
  const Pose pose = Pose::at_position(0, 0);
  const Scene textured = scene_with_box(2.03, 0.0, 0.45, SurfaceKind::LambertianTextured);
  const Scene flat = scene_with_box(2.03, 0.0, 0.45, SurfaceKind::Textureless);
  const DepthMonitor mon_a(render_frame(textured, rig, pose, 1).depth, rig);
  const DepthMonitor mon_b(render_frame(flat, rig, pose, 1).depth, rig);

  GridSpec grid;
  for (int k = 0; k < grid.size(); ++k) {
    const Vec3 p = grid.point(k);
    CHECK(mon_a.is_obstacle_free(p, grid.safety_radius) ==
          mon_b.is_obstacle_free(p, grid.safety_radius));
  }
}

TEST_CASE("occluded ground behind a tall box is out of view") {
  const StereoRig rig = ivoa_test::default_rig();
  // camera sits at 0.35 m; a 1 m tall box hides both its top and the ground behind
  const Scene s = scene_with_box(1.8, 0.0, 0.5, SurfaceKind::LambertianTextured, 1.0);
  const Frame f = render_frame(s, rig, Pose::at_position(0, 0), 1);
  const DepthMonitor mon(f.depth, rig);

  const auto behind = mon.is_obstacle_free(Vec3(2.45, 0.0, 0.0), 0.10);
  CHECK(!behind.has_value());
}

TEST_CASE("geometric oracle semantics") {
  Scene empty;
  CHECK(geometric_oracle(empty, Vec3(1.0, 0, 0), 0.1));

  const Scene s = scene_with_box(2.0, 0.0, 0.4, SurfaceKind::LambertianTextured);
  CHECK(!geometric_oracle(s, Vec3(2.0, 0, 0), 0.1));  // centered on box
  CHECK(!geometric_oracle(s, Vec3(1.8 - 0.1 + 1e-6, 0, 0), 0.1));  // just inside reach
  CHECK(geometric_oracle(s, Vec3(1.8 - 0.1 - 1e-6, 0, 0), 0.1));   // radius + eps away
}
