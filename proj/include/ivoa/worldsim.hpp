#pragma once

#include <cstdint>
#include <vector>

#include "ivoa/geometry.hpp"
#include "ivoa/image.hpp"

namespace ivoa::worldsim {

using geometry::Pose;
using geometry::StereoRig;
using geometry::Vec3;

enum class SurfaceKind {
  LambertianTextured,  // seeded procedural texture, photo-consistent
  Textureless,         // constant mid intensity; starves any matcher
  ReflectiveGround,    // mirror-like: view-dependent pattern, breaks stereo
  DarkStripe,          // near-black constant band
};

const char* to_string(SurfaceKind k);
SurfaceKind surface_kind_from_string(const std::string& s);

enum class RegionShape { Disc, Rect };

// Ground-plane region overriding the base ground appearance. Later entries
// override earlier ones where they overlap.
struct GroundRegion {
  RegionShape shape = RegionShape::Disc;
  double cx = 0.0, cy = 0.0;      // disc center
  double radius = 0.0;            // disc
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;  // rect
  SurfaceKind kind = SurfaceKind::LambertianTextured;
  std::uint64_t texture_seed = 0;

  bool contains(double x, double y) const;
};

// Axis-aligned box resting on (or above) the ground, world frame.
struct BoxObstacle {
  double cx = 0.0, cy = 0.0;      // footprint center
  double size_x = 0.3, size_y = 0.3, size_z = 0.3;
  double base_z = 0.0;
  SurfaceKind kind = SurfaceKind::LambertianTextured;
  std::uint64_t texture_seed = 0;

  double x_min() const { return cx - size_x / 2; }
  double x_max() const { return cx + size_x / 2; }
  double y_min() const { return cy - size_y / 2; }
  double y_max() const { return cy + size_y / 2; }
  double z_max() const { return base_z + size_z; }
};

struct Scene {
  SurfaceKind ground_kind = SurfaceKind::LambertianTextured;
  std::uint64_t ground_seed = 1;
  std::vector<GroundRegion> regions;
  std::vector<BoxObstacle> boxes;
  // Mirror image plane for ReflectiveGround: the reflection looks like a
  // texture plane at z = -reflected_plane_depth seen through the ground.
  double reflected_plane_depth = 0.25;

  void validate() const;  // boxes must not extend below the ground
};

// One synchronized observation. Depth is Euclidean range (meters) along the
// left-camera pixel ray, kNoDepthReturn where the ray escapes the scene.
struct Frame {
  Image left;
  Image right;
  Image depth;
  Pose pose;
  int frame_id = 0;
};

Frame render_frame(const Scene& scene, const StereoRig& rig, const Pose& pose,
                   std::uint64_t noise_seed, double noise_sigma = 0.0,
                   int frame_id = 0);

// Exact range along a world-space ray; used by the renderer and exposed for
// analytic checks. Returns kNoDepthReturn when nothing is hit.
float ray_range(const Scene& scene, const Vec3& origin_w, const Vec3& dir_w);

// Recorded extents of planted failure surfaces, world frame.
struct DiscExtent {
  double cx, cy, radius;
};
struct RectExtent {
  double x_min, x_max, y_min, y_max;
  SurfaceKind kind;
};
struct PlantedExtents {
  std::vector<DiscExtent> reflective;       // FP plants (sparse backend)
  std::vector<RectExtent> wall_footprints;  // FN plants (textureless / dark)
  std::vector<RectExtent> box_footprints;   // textured, detectable obstacles
};
PlantedExtents planted_extents(const Scene& scene);

// Randomized scene generation for sessions. Counts are inclusive ranges.
struct SceneTemplate {
  int textured_boxes_min = 1, textured_boxes_max = 2;
  int textureless_walls_min = 0, textureless_walls_max = 1;
  int dark_walls_min = 0, dark_walls_max = 1;
  int reflective_discs_min = 1, reflective_discs_max = 2;
  double place_x_min = 1.2, place_x_max = 3.8;
  double place_y_min = -0.8, place_y_max = 0.8;
  double min_separation = 0.35;  // gap between object bounding circles
  void validate() const;
};

Scene make_scene(const SceneTemplate& tmpl, std::uint64_t seed);

struct SessionSpec {
  StereoRig rig;
  int frames = 10;
  double step = 0.1;           // forward travel per frame, meters
  Scene scene;
  double noise_sigma = 0.0;    // depth noise, meters
};

struct Session {
  Scene scene;
  std::vector<Frame> frames;
};

// Straight trajectory along world +x starting at the origin. Deterministic
// given (spec, seed); frames may be rendered in parallel by the caller via
// render_frame since everything here is pure.
Session make_session(const SessionSpec& spec, std::uint64_t seed, int jobs = 1);

}  // namespace ivoa::worldsim
