#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ivoa/geometry.hpp"
#include "ivoa/image.hpp"
#include "ivoa/monitor.hpp"
#include "ivoa/pointgrid.hpp"
#include "ivoa/worldsim.hpp"

namespace ivoa::perception {

using geometry::StereoRig;
using geometry::Vec3;

enum class BackendKind {
  SparseConvex,  // samples ground points, verifies them by patch matching
  DenseBM,       // full block-matching reconstruction, then geometric test
};

const char* to_string(BackendKind k);
BackendKind backend_from_string(const std::string& s);

struct MatcherParams {
  int window = 9;                  // odd, >= 3
  double tau = 0.02;               // per-pixel mean abs intensity difference
  int n_samples = 5;               // sparse: center + 4 compass points
  double trim_keep = 1.0;          // fraction of best pixel diffs kept in a patch score
  int disparity_min = 2;
  int disparity_max = 72;
  double lr_tolerance = 1.0;       // px, left-right consistency
  double uniqueness_margin = 0.012;  // second-best SAD must lose by this much
  monitor::HeightBand band;        // obstacle height band shared with the monitor

  void validate() const;
  int half_window() const { return (window - 1) / 2; }
};

// Per-frame obstacle checker; both backends answer the same query.
class StereoChecker {
 public:
  virtual ~StereoChecker() = default;
  // true = obstacle free, false = occupied, nullopt = out of view
  virtual std::optional<bool> is_obstacle_free(const Vec3& p, double radius) const = 0;
};

// Field-of-view gate shared by backends and the label generator: every
// sample point around p must have its full matching patch visible in both
// cameras (via the ground-plane correspondence). Purely geometric.
bool query_in_view(const StereoRig& rig, const Vec3& p, double radius,
                   const MatcherParams& params);

// Convex-world ground verification. For each sampled ground point the left
// patch is compared against the right image at the exact ground-induced
// correspondence of each patch pixel; a point passes when the trimmed mean
// absolute difference stays below tau. Any failed sample marks the query
// occupied: either an object occludes the ground or the ground does not look
// the same from both cameras.
class SparseGroundChecker : public StereoChecker {
 public:
  SparseGroundChecker(const Image& left, const Image& right, const StereoRig& rig,
                      MatcherParams params);
  std::optional<bool> is_obstacle_free(const Vec3& p, double radius) const override;

  // Trimmed matching score for one ground point; nullopt when the patch is
  // not fully visible in both cameras.
  std::optional<double> sample_score(const Vec3& ground_point) const;

 private:
  const Image& left_;
  const Image& right_;
  StereoRig rig_;
  MatcherParams params_;
};

// Winner-take-all SAD block matching with uniqueness and left-right checks,
// back-projected into a robot-frame cloud. Occupied when reconstructed
// points within the query disc fall inside the obstacle height band, or
// below -h_obs (a hole).
class DenseBlockMatcher : public StereoChecker {
 public:
  DenseBlockMatcher(const Image& left, const Image& right, const StereoRig& rig,
                    MatcherParams params);
  std::optional<bool> is_obstacle_free(const Vec3& p, double radius) const override;

  const PointIndex& cloud() const { return cloud_; }
  // disparity in pixels, < 0 where invalid
  const std::vector<float>& disparity() const { return disparity_; }

 private:
  StereoRig rig_;
  MatcherParams params_;
  int width_ = 0, height_ = 0;
  std::vector<float> disparity_;
  PointIndex cloud_;
};

std::unique_ptr<StereoChecker> make_checker(BackendKind kind, const Image& left,
                                            const Image& right, const StereoRig& rig,
                                            const MatcherParams& params);

// One-shot conveniences matching the checker semantics.
std::optional<bool> is_obstacle_free_sparse(const Image& left, const Image& right,
                                            const StereoRig& rig, const Vec3& p,
                                            double radius,
                                            const MatcherParams& params = {});
std::optional<bool> is_obstacle_free_dense(const Image& left, const Image& right,
                                           const StereoRig& rig, const Vec3& p,
                                           double radius,
                                           const MatcherParams& params = {});

enum class CellStatus { Free, Occupied, Skipped };

struct ObstacleGrid {
  monitor::GridSpec spec;
  std::vector<CellStatus> cells;  // row-major, x slow (see GridSpec)

  CellStatus at(int ix, int iy) const { return cells[ix * spec.size_y() + iy]; }
};

ObstacleGrid build_obstacle_grid(BackendKind kind, const MatcherParams& params,
                                 const worldsim::Frame& frame, const StereoRig& rig,
                                 const monitor::GridSpec& grid, int jobs = 1);

// CSV: x,y,status with status in {free, occupied, skipped}
void write_grid_csv(const ObstacleGrid& grid, const std::filesystem::path& path);

}  // namespace ivoa::perception
