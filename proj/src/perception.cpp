#include "ivoa/perception.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ivoa/common.hpp"
#include "ivoa/parallel.hpp"

namespace ivoa::perception {

const char* to_string(BackendKind k) {
  return k == BackendKind::SparseConvex ? "sparse" : "dense";
}

BackendKind backend_from_string(const std::string& s) {
  if (s == "sparse") return BackendKind::SparseConvex;
  if (s == "dense") return BackendKind::DenseBM;
  throw ConfigError("unknown backend kind: " + s);
}

void MatcherParams::validate() const {
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("matcher window must be odd and >= 3");
  if (tau <= 0) throw std::invalid_argument("match threshold tau must be positive");
  if (n_samples < 1) throw std::invalid_argument("need at least one sample point");
  if (trim_keep <= 0 || trim_keep > 1)
    throw std::invalid_argument("trim_keep must be in (0, 1]");
  if (disparity_min < 1 || disparity_max < disparity_min)
    throw std::invalid_argument("disparity search range must satisfy 1 <= min <= max");
  if (lr_tolerance < 0) throw std::invalid_argument("lr_tolerance must be >= 0");
  if (band.h_obs <= 0 || band.z_max <= band.h_obs)
    throw std::invalid_argument("height band must satisfy 0 < h_obs < z_max");
}

namespace {

// center + 4 compass points on the disc rim; n_samples > 5 adds diagonals
std::vector<Vec3> sample_pattern(const Vec3& p, double radius, int n_samples) {
  static const double dirs[8][2] = {{1, 0},  {-1, 0}, {0, 1},  {0, -1},
                                    {.7071067811865476, .7071067811865476},
                                    {-.7071067811865476, .7071067811865476},
                                    {.7071067811865476, -.7071067811865476},
                                    {-.7071067811865476, -.7071067811865476}};
  std::vector<Vec3> pts;
  pts.reserve(n_samples);
  pts.push_back(p);
  for (int i = 0; i + 1 < n_samples && i < 8; ++i)
    pts.emplace_back(p.x() + radius * dirs[i][0], p.y() + radius * dirs[i][1], 0.0);
  return pts;
}

// Ground-induced correspondence of one left-image coordinate; nullopt when
// the pixel ray misses the ground or the match lands outside the right image.
std::optional<geometry::Pixel> ground_correspondence(const StereoRig& rig,
                                                     double ul, double vl) {
  const auto g = geometry::left_pixel_to_ground({ul, vl}, rig);
  if (!g) return std::nullopt;
  const Vec3 cam_r = rig.robot_to_right_cam(*g);
  if (cam_r.z() <= 0) return std::nullopt;
  return geometry::project_to_camera(cam_r, rig.intrinsics);
}

}  // namespace

bool query_in_view(const StereoRig& rig, const Vec3& p, double radius,
                   const MatcherParams& params) {
  const int h = params.half_window();
  const auto& intr = rig.intrinsics;
  for (const Vec3& q : sample_pattern(p, radius, params.n_samples)) {
    const Vec3 cam = rig.robot_to_cam(q);
    if (cam.z() <= 0) return false;
    const geometry::Pixel c = geometry::project_to_camera(cam, intr);
    // entire left patch must be bilinear-sampleable
    if (c.u - h < 0.5 || c.u + h > intr.width - 0.5 || c.v - h < 0.5 ||
        c.v + h > intr.height - 0.5)
      return false;
    for (int dv = -h; dv <= h; ++dv) {
      for (int du = -h; du <= h; ++du) {
        const auto match = ground_correspondence(rig, c.u + du, c.v + dv);
        if (!match || match->u < 0.5 || match->u > intr.width - 0.5 ||
            match->v < 0.5 || match->v > intr.height - 0.5)
          return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------- sparse --

SparseGroundChecker::SparseGroundChecker(const Image& left, const Image& right,
                                         const StereoRig& rig, MatcherParams params)
    : left_(left), right_(right), rig_(rig), params_(params) {
  params_.validate();
  rig_.validate();
}

std::optional<double> SparseGroundChecker::sample_score(const Vec3& q) const {
  const Vec3 cam = rig_.robot_to_cam(q);
  if (cam.z() <= 0) return std::nullopt;
  const geometry::Pixel c = geometry::project_to_camera(cam, rig_.intrinsics);
  const int h = params_.half_window();

  std::vector<double> diffs;
  diffs.reserve(static_cast<std::size_t>(params_.window) * params_.window);
  for (int dv = -h; dv <= h; ++dv) {
    for (int du = -h; du <= h; ++du) {
      const double ul = c.u + du, vl = c.v + dv;
      const auto lv = left_.sample(ul, vl);
      if (!lv) return std::nullopt;
      const auto match = ground_correspondence(rig_, ul, vl);
      if (!match) {
        diffs.push_back(1.0);  // above the horizon: nothing to verify against
        continue;
      }
      const auto rv = right_.sample(match->u, match->v);
      if (!rv) return std::nullopt;
      diffs.push_back(std::abs(double(*lv) - double(*rv)));
    }
  }
  const std::size_t keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(params_.trim_keep * diffs.size())));
  std::nth_element(diffs.begin(), diffs.begin() + (keep - 1), diffs.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) sum += diffs[i];
  return sum / static_cast<double>(keep);
}

std::optional<bool> SparseGroundChecker::is_obstacle_free(const Vec3& p,
                                                          double radius) const {
  for (const Vec3& q : sample_pattern(p, radius, params_.n_samples)) {
    const auto score = sample_score(q);
    if (!score) return std::nullopt;
    if (*score > params_.tau) return false;  // ground not verified: occupied
  }
  return true;
}

// ----------------------------------------------------------------- dense --

DenseBlockMatcher::DenseBlockMatcher(const Image& left, const Image& right,
                                     const StereoRig& rig, MatcherParams params)
    : rig_(rig), params_(params), width_(left.width()), height_(left.height()) {
  params_.validate();
  rig_.validate();
  if (left.width() != right.width() || left.height() != right.height())
    throw std::invalid_argument("stereo pair dimensions differ");

  const int w = width_, hgt = height_;
  const int half = params_.half_window();
  const int d_min = params_.disparity_min, d_max = params_.disparity_max;
  const int planes = d_max - d_min + 1;
  const float inf = std::numeric_limits<float>::infinity();
  const double window_px = static_cast<double>(params_.window) * params_.window;

  // cost volume of windowed mean absolute differences, +inf where the window
  // is not fully inside both images
  std::vector<float> cost(static_cast<std::size_t>(planes) * w * hgt, inf);
  std::vector<double> integral(static_cast<std::size_t>(w + 1) * (hgt + 1));
  auto integral_at = [&](int x, int y) -> double& {
    return integral[static_cast<std::size_t>(y) * (w + 1) + x];
  };

  for (int d = d_min; d <= d_max; ++d) {
    // integral image of |L(x,y) - R(x-d,y)| over the overlap x >= d
    for (int x = 0; x <= w; ++x) integral_at(x, 0) = 0.0;
    for (int y = 1; y <= hgt; ++y) {
      integral_at(0, y) = 0.0;
      double row = 0.0;
      for (int x = 1; x <= w; ++x) {
        const int ix = x - 1, iy = y - 1;
        if (ix >= d) row += std::abs(left.at(ix, iy) - right.at(ix - d, iy));
        integral_at(x, y) = integral_at(x, y - 1) + row;
      }
    }
    float* plane = cost.data() + static_cast<std::size_t>(d - d_min) * w * hgt;
    for (int y = half; y < hgt - half; ++y) {
      for (int x = half + d; x < w - half; ++x) {
        const double sum = integral_at(x + half + 1, y + half + 1) -
                           integral_at(x - half, y + half + 1) -
                           integral_at(x + half + 1, y - half) +
                           integral_at(x - half, y - half);
        plane[static_cast<std::size_t>(y) * w + x] = static_cast<float>(sum / window_px);
      }
    }
  }

  auto cost_at = [&](int x, int y, int d) -> float {
    return cost[(static_cast<std::size_t>(d - d_min) * hgt + y) * w + x];
  };

  // winner-take-all for the right image: best disparity per right pixel
  std::vector<std::int16_t> best_right(static_cast<std::size_t>(w) * hgt, -1);
  for (int y = half; y < hgt - half; ++y) {
    for (int xr = half; xr < w - half; ++xr) {
      float best = inf;
      int best_d = -1;
      for (int d = d_min; d <= d_max; ++d) {
        const int xl = xr + d;
        if (xl >= w - half) break;
        const float c = cost_at(xl, y, d);
        if (c < best) {
          best = c;
          best_d = d;
        }
      }
      if (best_d >= 0 && best <= params_.tau)
        best_right[static_cast<std::size_t>(y) * w + xr] = static_cast<std::int16_t>(best_d);
    }
  }

  disparity_.assign(static_cast<std::size_t>(w) * hgt, -1.0f);
  std::vector<Vec3> points;
  const geometry::RigidTransform robot_from_cam = rig_.cam_from_robot.inverse();

  for (int y = half; y < hgt - half; ++y) {
    for (int x = half + d_min; x < w - half; ++x) {
      float best = inf, second = inf;
      int best_d = -1;
      for (int d = d_min; d <= d_max && d <= x - half; ++d) {
        const float c = cost_at(x, y, d);
        if (c < best) {
          best = c;
          best_d = d;
        }
      }
      if (best_d < 0 || best > params_.tau) continue;
      for (int d = d_min; d <= d_max && d <= x - half; ++d) {
        if (std::abs(d - best_d) <= 1) continue;
        second = std::min(second, cost_at(x, y, d));
      }
      // flat-cost regions (textureless) produce no unique winner
      if (second - best < params_.uniqueness_margin) continue;
      const int xr = x - best_d;
      const int dr = best_right[static_cast<std::size_t>(y) * w + xr];
      if (dr < 0 || std::abs(dr - best_d) > params_.lr_tolerance) continue;

      disparity_[static_cast<std::size_t>(y) * w + x] = static_cast<float>(best_d);
      const double z = geometry::disparity_to_depth(best_d, rig_);
      const Vec3 cam = geometry::back_project({x + 0.5, y + 0.5}, z, rig_.intrinsics);
      points.push_back(robot_from_cam.apply(cam));
    }
  }
  cloud_ = PointIndex(std::move(points));
}

std::optional<bool> DenseBlockMatcher::is_obstacle_free(const Vec3& p,
                                                        double radius) const {
  if (!query_in_view(rig_, p, radius, params_)) return std::nullopt;
  bool occupied = false;
  cloud_.visit_disc(p, radius, [&](const Vec3& q) {
    if ((q.z() >= params_.band.h_obs && q.z() <= params_.band.z_max) ||
        q.z() < -params_.band.h_obs) {
      occupied = true;
      return false;
    }
    return true;
  });
  return !occupied;
}

// ------------------------------------------------------------------ misc --

std::unique_ptr<StereoChecker> make_checker(BackendKind kind, const Image& left,
                                            const Image& right, const StereoRig& rig,
                                            const MatcherParams& params) {
  if (kind == BackendKind::SparseConvex)
    return std::make_unique<SparseGroundChecker>(left, right, rig, params);
  return std::make_unique<DenseBlockMatcher>(left, right, rig, params);
}

std::optional<bool> is_obstacle_free_sparse(const Image& left, const Image& right,
                                            const StereoRig& rig, const Vec3& p,
                                            double radius, const MatcherParams& params) {
  if (!query_in_view(rig, p, radius, params)) return std::nullopt;
  return SparseGroundChecker(left, right, rig, params).is_obstacle_free(p, radius);
}

std::optional<bool> is_obstacle_free_dense(const Image& left, const Image& right,
                                           const StereoRig& rig, const Vec3& p,
                                           double radius, const MatcherParams& params) {
  return DenseBlockMatcher(left, right, rig, params).is_obstacle_free(p, radius);
}

ObstacleGrid build_obstacle_grid(BackendKind kind, const MatcherParams& params,
                                 const worldsim::Frame& frame, const StereoRig& rig,
                                 const monitor::GridSpec& grid, int jobs) {
  grid.validate();
  const auto checker = make_checker(kind, frame.left, frame.right, rig, params);
  ObstacleGrid out;
  out.spec = grid;
  out.cells.assign(static_cast<std::size_t>(grid.size()), CellStatus::Skipped);
  parallel_for(out.cells.size(), jobs, [&](std::size_t k) {
    const Vec3 p = grid.point(static_cast<int>(k));
    if (!query_in_view(rig, p, grid.safety_radius, params)) return;
    const auto free = checker->is_obstacle_free(p, grid.safety_radius);
    if (!free) return;
    out.cells[k] = *free ? CellStatus::Free : CellStatus::Occupied;
  });
  return out;
}

void write_grid_csv(const ObstacleGrid& grid, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "x,y,status\n";
  char buf[96];
  for (int ix = 0; ix < grid.spec.size_x(); ++ix) {
    for (int iy = 0; iy < grid.spec.size_y(); ++iy) {
      const Vec3 p = grid.spec.point(ix, iy);
      const CellStatus s = grid.at(ix, iy);
      const char* name = s == CellStatus::Free      ? "free"
                         : s == CellStatus::Occupied ? "occupied"
                                                      : "skipped";
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%s\n", p.x(), p.y(), name);
      out << buf;
    }
  }
  atomic_write_text(path, out.str());
}

}  // namespace ivoa::perception
