#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "softgrasp/mesh.hpp"

namespace softgrasp {

/// Uniform hash grid over a fixed point set for radius and nearest queries.
class PointGrid {
 public:
  PointGrid(const std::vector<Vec3>& points, double cell_size);

  /// Indices of points with |p - q| <= radius, ascending.
  std::vector<int> within(const Vec3& q, double radius) const;

  /// Index of the nearest point (lowest index on ties) and its distance.
  std::pair<int, double> nearest(const Vec3& q) const;

  const std::vector<Vec3>& points() const { return points_; }

 private:
  using Key = std::int64_t;
  using CellIndex = Eigen::Array<long, 3, 1>;
  Key key(long ix, long iy, long iz) const;
  CellIndex cell_of(const Vec3& p) const;

  std::vector<Vec3> points_;
  double cell_;
  CellIndex lo_, hi_;
  std::unordered_map<Key, std::vector<int>> cells_;
};

}  // namespace softgrasp
