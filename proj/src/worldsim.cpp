#include "ivoa/worldsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ivoa/common.hpp"
#include "ivoa/parallel.hpp"
#include "ivoa/rng.hpp"

namespace ivoa::worldsim {

const char* to_string(SurfaceKind k) {
  switch (k) {
    case SurfaceKind::LambertianTextured: return "lambertian";
    case SurfaceKind::Textureless: return "textureless";
    case SurfaceKind::ReflectiveGround: return "reflective";
    case SurfaceKind::DarkStripe: return "dark";
  }
  return "?";
}

SurfaceKind surface_kind_from_string(const std::string& s) {
  if (s == "lambertian") return SurfaceKind::LambertianTextured;
  if (s == "textureless") return SurfaceKind::Textureless;
  if (s == "reflective") return SurfaceKind::ReflectiveGround;
  if (s == "dark") return SurfaceKind::DarkStripe;
  throw ConfigError("unknown surface kind: " + s);
}

bool GroundRegion::contains(double x, double y) const {
  if (shape == RegionShape::Disc) {
    const double dx = x - cx, dy = y - cy;
    return dx * dx + dy * dy <= radius * radius;
  }
  return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
}

void Scene::validate() const {
  for (const auto& b : boxes) {
    if (b.base_z < 0.0)
      throw std::invalid_argument("box extends below the ground plane");
    if (b.size_x <= 0 || b.size_y <= 0 || b.size_z <= 0)
      throw std::invalid_argument("box sizes must be positive");
  }
  if (reflected_plane_depth <= 0.0)
    throw std::invalid_argument("reflected plane depth must be positive");
}

namespace {

// -------- procedural texture: seeded multi-octave value noise --------

double lattice_value(std::uint64_t seed, std::int64_t xi, std::int64_t yi) {
  const std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(xi) * 0x9e3779b97f4a7c15ULL ^
                                             static_cast<std::uint64_t>(yi) + 0x7f4a7c159e3779b9ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto xi = static_cast<std::int64_t>(fx);
  const auto yi = static_cast<std::int64_t>(fy);
  const double tx = smooth(x - fx), ty = smooth(y - fy);
  const double v00 = lattice_value(seed, xi, yi);
  const double v10 = lattice_value(seed, xi + 1, yi);
  const double v01 = lattice_value(seed, xi, yi + 1);
  const double v11 = lattice_value(seed, xi + 1, yi + 1);
  return (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 +
         (1 - tx) * ty * v01 + tx * ty * v11;
}

// octaves at 1x/2x/4x the base frequency
double fractal_noise(std::uint64_t seed, double x, double y, double base_scale) {
  const double n1 = value_noise(seed, x / base_scale, y / base_scale);
  const double n2 = value_noise(seed ^ 0x5851f42d4c957f2dULL, 2 * x / base_scale,
                                2 * y / base_scale);
  const double n3 = value_noise(seed ^ 0x14057b7ef767814fULL, 4 * x / base_scale,
                                4 * y / base_scale);
  return 0.5 * n1 + 0.3 * n2 + 0.2 * n3;
}

constexpr double kGroundScale = 0.45;
constexpr double kBoxScale = 0.035;
constexpr double kReflectionScale = 0.18;
constexpr float kSky = 0.35f;

float ground_shade(const Scene& scene, SurfaceKind kind, std::uint64_t seed,
                   const geometry::Vec3& hit, const geometry::Vec3& dir) {
  switch (kind) {
    case SurfaceKind::LambertianTextured:
      return static_cast<float>(
          0.30 + 0.50 * fractal_noise(seed, hit.x(), hit.y(), kGroundScale));
    case SurfaceKind::Textureless:
      return 0.55f;
    case SurfaceKind::DarkStripe:
      return 0.04f;
    case SurfaceKind::ReflectiveGround: {
      // continue the ray through the ground to the mirror-image plane; both
      // cameras then observe a coherent virtual scene below the floor, which
      // is what defeats ground-plane patch verification
      const double dz = dir.z();
      if (dz >= -1e-12) return 0.55f;
      const double t = -scene.reflected_plane_depth / dz;
      const double vx = hit.x() + t * dir.x();
      const double vy = hit.y() + t * dir.y();
      return static_cast<float>(
          0.08 + 0.87 * fractal_noise(seed, vx, vy, kReflectionScale));
    }
  }
  return 0.5f;
}

float box_shade(const BoxObstacle& box, int face_axis, const geometry::Vec3& hit) {
  switch (box.kind) {
    case SurfaceKind::Textureless:
      return 0.55f;
    case SurfaceKind::DarkStripe:
      return 0.04f;
    case SurfaceKind::ReflectiveGround:  // not meaningful on boxes; render flat
      return 0.55f;
    case SurfaceKind::LambertianTextured:
      break;
  }
  double a, b;
  if (face_axis == 0) {
    a = hit.y(); b = hit.z();
  } else if (face_axis == 1) {
    a = hit.x(); b = hit.z();
  } else {
    a = hit.x(); b = hit.y();
  }
  return static_cast<float>(
      0.20 + 0.70 * fractal_noise(box.texture_seed, a, b, kBoxScale));
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int box_index = -1;   // -1: ground
  int face_axis = -1;
};

bool intersect_box(const BoxObstacle& box, const geometry::Vec3& o,
                   const geometry::Vec3& d, double& t_hit, int& face_axis) {
  const double lo[3] = {box.x_min(), box.y_min(), box.base_z};
  const double hi[3] = {box.x_max(), box.y_max(), box.z_max()};
  double t_near = 0.0, t_far = std::numeric_limits<double>::infinity();
  int near_axis = -1;
  for (int a = 0; a < 3; ++a) {
    const double da = d[a], oa = o[a];
    if (std::abs(da) < 1e-15) {
      if (oa < lo[a] || oa > hi[a]) return false;
      continue;
    }
    double t0 = (lo[a] - oa) / da;
    double t1 = (hi[a] - oa) / da;
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      near_axis = a;
    }
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return false;
  }
  if (near_axis < 0 || t_near <= 1e-9) return false;  // origin inside or degenerate
  t_hit = t_near;
  face_axis = near_axis;
  return true;
}

Hit cast_ray(const Scene& scene, const geometry::Vec3& o, const geometry::Vec3& d) {
  Hit best;
  if (d.z() < -1e-12) {
    const double t = -o.z() / d.z();
    if (t > 1e-9) {
      best.t = t;
      best.box_index = -1;
      best.face_axis = 2;
    }
  }
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    double t;
    int axis;
    if (intersect_box(scene.boxes[i], o, d, t, axis) && t < best.t) {
      best.t = t;
      best.box_index = static_cast<int>(i);
      best.face_axis = axis;
    }
  }
  return best;
}

float shade_hit(const Scene& scene, const Hit& hit, const geometry::Vec3& o,
                const geometry::Vec3& d) {
  if (!std::isfinite(hit.t)) return kSky;
  const geometry::Vec3 p = o + hit.t * d;
  if (hit.box_index >= 0)
    return box_shade(scene.boxes[hit.box_index], hit.face_axis, p);
  SurfaceKind kind = scene.ground_kind;
  std::uint64_t seed = scene.ground_seed;
  for (const auto& region : scene.regions) {
    if (region.contains(p.x(), p.y())) {
      kind = region.kind;
      seed = region.texture_seed;
    }
  }
  return ground_shade(scene, kind, seed, p, d);
}

}  // namespace

float ray_range(const Scene& scene, const Vec3& origin_w, const Vec3& dir_w) {
  const Hit hit = cast_ray(scene, origin_w, dir_w);
  return std::isfinite(hit.t) ? static_cast<float>(hit.t) : kNoDepthReturn;
}

Frame render_frame(const Scene& scene, const StereoRig& rig, const Pose& pose,
                   std::uint64_t noise_seed, double noise_sigma, int frame_id) {
  scene.validate();
  rig.validate();
  const auto& intr = rig.intrinsics;

  const geometry::RigidTransform robot_from_cam = rig.cam_from_robot.inverse();
  const geometry::RigidTransform world_from_robot = pose.robot_from_world.inverse();
  const geometry::Mat3 cam_to_world =
      world_from_robot.rotation * robot_from_cam.rotation;

  const Vec3 left_center_robot = rig.camera_center_robot();
  const Vec3 right_center_robot =
      left_center_robot + rig.baseline * robot_from_cam.rotation.col(0);
  const Vec3 left_center_w = world_from_robot.apply(left_center_robot);
  const Vec3 right_center_w = world_from_robot.apply(right_center_robot);
  if (left_center_w.z() <= 0.0 || right_center_w.z() <= 0.0)
    throw std::invalid_argument("degenerate pose: camera at or below the ground");

  Frame frame;
  frame.pose = pose;
  frame.frame_id = frame_id;
  frame.left = Image(intr.width, intr.height);
  frame.right = Image(intr.width, intr.height);
  frame.depth = Image(intr.width, intr.height, kNoDepthReturn);

  Rng depth_noise(derive_seed(noise_seed, static_cast<std::uint64_t>(frame_id), 0xd));

  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const geometry::Pixel px{x + 0.5, y + 0.5};
      const Vec3 dir = (cam_to_world * geometry::pixel_ray(px, intr)).normalized();

      const Hit hl = cast_ray(scene, left_center_w, dir);
      frame.left.at(x, y) = shade_hit(scene, hl, left_center_w, dir);
      if (std::isfinite(hl.t)) {
        double range = hl.t;
        if (noise_sigma > 0.0)
          range = std::max(0.05, range + noise_sigma * depth_noise.gaussian());
        frame.depth.at(x, y) = static_cast<float>(range);
      }

      const Hit hr = cast_ray(scene, right_center_w, dir);
      frame.right.at(x, y) = shade_hit(scene, hr, right_center_w, dir);
    }
  }
  return frame;
}

PlantedExtents planted_extents(const Scene& scene) {
  PlantedExtents out;
  for (const auto& r : scene.regions) {
    if (r.kind != SurfaceKind::ReflectiveGround) continue;
    if (r.shape == RegionShape::Disc)
      out.reflective.push_back({r.cx, r.cy, r.radius});
    else
      out.reflective.push_back({(r.x_min + r.x_max) / 2, (r.y_min + r.y_max) / 2,
                                std::max(r.x_max - r.x_min, r.y_max - r.y_min) / 2});
  }
  for (const auto& b : scene.boxes) {
    const RectExtent e{b.x_min(), b.x_max(), b.y_min(), b.y_max(), b.kind};
    if (b.kind == SurfaceKind::Textureless || b.kind == SurfaceKind::DarkStripe)
      out.wall_footprints.push_back(e);
    else if (b.kind == SurfaceKind::LambertianTextured)
      out.box_footprints.push_back(e);
  }
  return out;
}

void SceneTemplate::validate() const {
  auto range_ok = [](int lo, int hi) { return lo >= 0 && hi >= lo; };
  if (!range_ok(textured_boxes_min, textured_boxes_max) ||
      !range_ok(textureless_walls_min, textureless_walls_max) ||
      !range_ok(dark_walls_min, dark_walls_max) ||
      !range_ok(reflective_discs_min, reflective_discs_max))
    throw ConfigError("scene template count ranges must satisfy 0 <= min <= max");
  if (place_x_min >= place_x_max || place_y_min >= place_y_max)
    throw ConfigError("scene template placement region is empty");
  if (min_separation < 0) throw ConfigError("min_separation must be >= 0");
}

namespace {

struct Placed {
  double x, y, r;  // bounding circle
};

bool try_place(Rng& rng, const SceneTemplate& tmpl, double obj_radius,
               std::vector<Placed>& placed, double& out_x, double& out_y) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    const double x = rng.uniform(tmpl.place_x_min, tmpl.place_x_max);
    const double y = rng.uniform(tmpl.place_y_min, tmpl.place_y_max);
    bool ok = true;
    for (const auto& p : placed) {
      const double dx = x - p.x, dy = y - p.y;
      const double need = p.r + obj_radius + tmpl.min_separation;
      if (dx * dx + dy * dy < need * need) {
        ok = false;
        break;
      }
    }
    if (ok) {
      placed.push_back({x, y, obj_radius});
      out_x = x;
      out_y = y;
      return true;
    }
  }
  return false;
}

}  // namespace

Scene make_scene(const SceneTemplate& tmpl, std::uint64_t seed) {
  tmpl.validate();
  Rng rng(derive_seed(seed, 0x5ce11e, 0));
  Scene scene;
  scene.ground_seed = derive_seed(seed, 0x9014d, 1);
  std::vector<Placed> placed;

  const int n_boxes = rng.uniform_int(tmpl.textured_boxes_min, tmpl.textured_boxes_max);
  const int n_flat = rng.uniform_int(tmpl.textureless_walls_min, tmpl.textureless_walls_max);
  const int n_dark = rng.uniform_int(tmpl.dark_walls_min, tmpl.dark_walls_max);
  const int n_refl = rng.uniform_int(tmpl.reflective_discs_min, tmpl.reflective_discs_max);

  auto add_wall = [&](SurfaceKind kind, std::uint64_t salt) {
    BoxObstacle w;
    w.size_y = rng.uniform(1.4, 2.2);   // long side across the path
    w.size_x = rng.uniform(0.10, 0.20);
    w.size_z = rng.uniform(0.40, 0.70);
    w.kind = kind;
    w.texture_seed = derive_seed(seed, salt, placed.size());
    double x, y;
    if (try_place(rng, tmpl, std::hypot(w.size_x, w.size_y) / 2, placed, x, y)) {
      w.cx = x;
      w.cy = y;
      scene.boxes.push_back(w);
    }
  };

  for (int i = 0; i < n_boxes; ++i) {
    BoxObstacle b;
    b.size_x = rng.uniform(0.30, 0.55);
    b.size_y = rng.uniform(0.30, 0.55);
    b.size_z = rng.uniform(0.30, 0.55);
    b.kind = SurfaceKind::LambertianTextured;
    b.texture_seed = derive_seed(seed, 0xb0c5, i);
    double x, y;
    if (try_place(rng, tmpl, std::hypot(b.size_x, b.size_y) / 2, placed, x, y)) {
      b.cx = x;
      b.cy = y;
      scene.boxes.push_back(b);
    }
  }
  for (int i = 0; i < n_flat; ++i) add_wall(SurfaceKind::Textureless, 0xf1a7);
  for (int i = 0; i < n_dark; ++i) add_wall(SurfaceKind::DarkStripe, 0xda44);
  for (int i = 0; i < n_refl; ++i) {
    GroundRegion g;
    g.shape = RegionShape::Disc;
    g.radius = rng.uniform(0.25, 0.40);
    g.kind = SurfaceKind::ReflectiveGround;
    g.texture_seed = derive_seed(seed, 0x4ef1, i);
    double x, y;
    if (try_place(rng, tmpl, g.radius, placed, x, y)) {
      g.cx = x;
      g.cy = y;
      scene.regions.push_back(g);
    }
  }
  scene.validate();
  return scene;
}

Session make_session(const SessionSpec& spec, std::uint64_t seed, int jobs) {
  if (spec.frames <= 0) throw std::invalid_argument("session needs at least one frame");
  if (spec.step < 0) throw std::invalid_argument("step must be non-negative");
  spec.scene.validate();

  Session session;
  session.scene = spec.scene;
  session.frames.resize(spec.frames);
  parallel_for(session.frames.size(), jobs, [&](std::size_t i) {
    const Pose pose = Pose::at_position(static_cast<double>(i) * spec.step, 0.0);
    session.frames[i] = render_frame(spec.scene, spec.rig, pose, seed,
                                     spec.noise_sigma, static_cast<int>(i));
  });
  return session;
}

}  // namespace ivoa::worldsim
