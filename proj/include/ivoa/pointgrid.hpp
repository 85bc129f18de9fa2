#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "ivoa/geometry.hpp"

namespace ivoa {

// Robot-frame point cloud bucketed on the ground plane for fast disc queries.
class PointIndex {
 public:
  PointIndex() = default;
  explicit PointIndex(std::vector<geometry::Vec3> points, double bin = 0.25)
      : points_(std::move(points)), bin_(bin) {
    if (points_.empty()) return;
    double min_x = 1e30, min_y = 1e30, max_x = -1e30, max_y = -1e30;
    for (const auto& p : points_) {
      min_x = std::min(min_x, p.x());
      max_x = std::max(max_x, p.x());
      min_y = std::min(min_y, p.y());
      max_y = std::max(max_y, p.y());
    }
    origin_x_ = min_x;
    origin_y_ = min_y;
    nx_ = static_cast<int>((max_x - min_x) / bin_) + 1;
    ny_ = static_cast<int>((max_y - min_y) / bin_) + 1;
    cells_.resize(static_cast<std::size_t>(nx_) * ny_);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const int bx = static_cast<int>((points_[i].x() - origin_x_) / bin_);
      const int by = static_cast<int>((points_[i].y() - origin_y_) / bin_);
      cells_[static_cast<std::size_t>(bx) * ny_ + by].push_back(static_cast<int>(i));
    }
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<geometry::Vec3>& points() const { return points_; }

  // Calls visit(point) for every point with xy-distance <= radius from p.
  // Stops early when visit returns false.
  template <typename Visitor>
  void visit_disc(const geometry::Vec3& p, double radius, Visitor&& visit) const {
    if (points_.empty()) return;
    const int reach = static_cast<int>(radius / bin_) + 1;
    const int cbx = static_cast<int>((p.x() - origin_x_) / bin_);
    const int cby = static_cast<int>((p.y() - origin_y_) / bin_);
    const double r2 = radius * radius;
    for (int bx = cbx - reach; bx <= cbx + reach; ++bx) {
      if (bx < 0 || bx >= nx_) continue;
      for (int by = cby - reach; by <= cby + reach; ++by) {
        if (by < 0 || by >= ny_) continue;
        for (const int idx : cells_[static_cast<std::size_t>(bx) * ny_ + by]) {
          const auto& q = points_[idx];
          const double dx = q.x() - p.x(), dy = q.y() - p.y();
          if (dx * dx + dy * dy > r2) continue;
          if (!visit(q)) return;
        }
      }
    }
  }

 private:
  std::vector<geometry::Vec3> points_;
  std::vector<std::vector<int>> cells_;
  double bin_ = 0.25;
  double origin_x_ = 0, origin_y_ = 0;
  int nx_ = 0, ny_ = 0;
};

}  // namespace ivoa
