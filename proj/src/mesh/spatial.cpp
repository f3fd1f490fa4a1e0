#include "softgrasp/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "softgrasp/error.hpp"

namespace softgrasp {

PointGrid::PointGrid(const std::vector<Vec3>& points, double cell_size) : points_(points), cell_(cell_size) {
  if (!(cell_ > 0.0)) throw Error("invalid_argument", "grid cell size must be positive");
  lo_.setConstant(std::numeric_limits<long>::max());
  hi_.setConstant(std::numeric_limits<long>::min());
  for (size_t i = 0; i < points_.size(); ++i) {
    const auto c = cell_of(points_[i]);
    lo_ = lo_.min(c);
    hi_ = hi_.max(c);
  }
  for (size_t i = 0; i < points_.size(); ++i) {
    const auto c = cell_of(points_[i]);
    cells_[key(c[0], c[1], c[2])].push_back(static_cast<int>(i));
  }
}

PointGrid::CellIndex PointGrid::cell_of(const Vec3& p) const {
  return CellIndex(static_cast<long>(std::floor(p.x() / cell_)), static_cast<long>(std::floor(p.y() / cell_)),
                        static_cast<long>(std::floor(p.z() / cell_)));
}

PointGrid::Key PointGrid::key(long ix, long iy, long iz) const {
  const Key ny = hi_[1] - lo_[1] + 1, nz = hi_[2] - lo_[2] + 1;
  return ((ix - lo_[0]) * ny + (iy - lo_[1])) * nz + (iz - lo_[2]);
}

std::vector<int> PointGrid::within(const Vec3& q, double radius) const {
  std::vector<int> out;
  if (points_.empty() || radius < 0.0) return out;
  const auto a = cell_of(q - Vec3::Constant(radius)).max(lo_);
  const auto b = cell_of(q + Vec3::Constant(radius)).min(hi_);
  for (long ix = a[0]; ix <= b[0]; ++ix)
    for (long iy = a[1]; iy <= b[1]; ++iy)
      for (long iz = a[2]; iz <= b[2]; ++iz) {
        auto it = cells_.find(key(ix, iy, iz));
        if (it == cells_.end()) continue;
        for (int i : it->second)
          if ((points_[i] - q).norm() <= radius) out.push_back(i);
      }
  std::sort(out.begin(), out.end());
  return out;
}

std::pair<int, double> PointGrid::nearest(const Vec3& q) const {
  if (points_.empty()) throw Error("empty_surface", "nearest query on empty point set");
  const auto c = cell_of(q);
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  // Largest ring that can still contain grid cells.
  const long max_ring = ((c - lo_).abs().max((c - hi_).abs())).maxCoeff();
  auto visit = [&](long ix, long iy, long iz) {
    if (ix < lo_[0] || ix > hi_[0] || iy < lo_[1] || iy > hi_[1] || iz < lo_[2] || iz > hi_[2]) return;
    auto it = cells_.find(key(ix, iy, iz));
    if (it == cells_.end()) return;
    for (int i : it->second) {
      const double d = (points_[i] - q).norm();
      if (d < best_d || (d == best_d && i < best)) {
        best_d = d;
        best = i;
      }
    }
  };
  for (long r = 0; r <= max_ring; ++r) {
    for (long ix = c[0] - r; ix <= c[0] + r; ++ix)
      for (long iy = c[1] - r; iy <= c[1] + r; ++iy) {
        const bool edge = std::abs(ix - c[0]) == r || std::abs(iy - c[1]) == r;
        if (edge) {
          for (long iz = c[2] - r; iz <= c[2] + r; ++iz) visit(ix, iy, iz);
        } else {
          visit(ix, iy, c[2] - r);
          if (r > 0) visit(ix, iy, c[2] + r);
        }
      }
    // Anything in ring r+1 is at least r cells away.
    if (best >= 0 && best_d < static_cast<double>(r) * cell_) break;
  }
  return {best, best_d};
}

}  // namespace softgrasp
