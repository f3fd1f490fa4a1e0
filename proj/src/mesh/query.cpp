#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "softgrasp/error.hpp"
#include "softgrasp/mesh.hpp"
#include "softgrasp/spatial.hpp"

namespace softgrasp::mesh {

std::vector<Vec3> sample_surface(const TriMesh& surface, int samples, std::uint64_t seed) {
  if (surface.tris.empty()) throw Error("empty_surface", "cannot sample an empty surface");
  if (samples < 1) throw Error("invalid_argument", "samples must be >= 1");
  std::vector<double> cumulative(surface.tris.size());
  double total = 0.0;
  for (size_t t = 0; t < surface.tris.size(); ++t) {
    const auto& tri = surface.tris[t];
    total += 0.5 * (surface.vertices[tri[1]] - surface.vertices[tri[0]])
                       .cross(surface.vertices[tri[2]] - surface.vertices[tri[0]])
                       .norm();
    cumulative[t] = total;
  }
  if (!(total > 0.0)) throw Error("empty_surface", "surface has zero area");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec3> pts;
  pts.reserve(samples);
  for (int s = 0; s < samples; ++s) {
    const double pick = uni(rng) * total;
    size_t t = std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin();
    t = std::min(t, cumulative.size() - 1);
    const double r1 = std::sqrt(uni(rng)), r2 = uni(rng);
    const auto& tri = surface.tris[t];
    pts.push_back((1 - r1) * surface.vertices[tri[0]] + r1 * (1 - r2) * surface.vertices[tri[1]] +
                  r1 * r2 * surface.vertices[tri[2]]);
  }
  return pts;
}

namespace {

double mean_nearest(const std::vector<Vec3>& from, const PointGrid& to) {
  double sum = 0.0;
  for (const auto& p : from) sum += to.nearest(p).second;
  return sum / static_cast<double>(from.size());
}

double grid_cell_for(const std::vector<Vec3>& pts) {
  Eigen::AlignedBox3d box;
  for (const auto& p : pts) box.extend(p);
  const double diag = box.diagonal().norm();
  const double cell = diag / std::cbrt(static_cast<double>(pts.size()));
  return cell > 0.0 ? cell : 1.0;
}

}  // namespace

double chamfer_distance(const TriMesh& a, const TriMesh& b, int samples, std::uint64_t seed) {
  if (a.tris.empty() || b.tris.empty()) throw Error("empty_surface", "chamfer distance needs two nonempty surfaces");
  const auto pa = sample_surface(a, samples, seed);
  const auto pb = sample_surface(b, samples, seed);
  const PointGrid ga(pa, grid_cell_for(pa));
  const PointGrid gb(pb, grid_cell_for(pb));
  return 1000.0 * 0.5 * (mean_nearest(pa, gb) + mean_nearest(pb, ga));
}

std::optional<double> intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                                         const Vec3& c) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-300) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (!(t > kRayMinT)) return std::nullopt;
  return t;
}

// ---------------------------------------------------------------------------

SurfaceBvh::SurfaceBvh(const TetMesh& mesh) : surface_(surface_mesh(mesh)) { build(); }

SurfaceBvh::SurfaceBvh(TriMesh surface) : surface_(std::move(surface)) { build(); }

void SurfaceBvh::build() {
  order_.resize(surface_.tris.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.clear();
  if (order_.empty()) return;
  std::vector<Vec3> centroids(surface_.tris.size());
  for (size_t t = 0; t < surface_.tris.size(); ++t) {
    const auto& tri = surface_.tris[t];
    centroids[t] = (surface_.vertices[tri[0]] + surface_.vertices[tri[1]] + surface_.vertices[tri[2]]) / 3.0;
  }
  nodes_.reserve(2 * order_.size());
  build_node(0, static_cast<int>(order_.size()), centroids);
}

int SurfaceBvh::build_node(int begin, int end, std::vector<Vec3>& centroids) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box, cbox;
  for (int i = begin; i < end; ++i) {
    for (int v : surface_.tris[order_[i]]) box.extend(surface_.vertices[v]);
    cbox.extend(centroids[order_[i]]);
  }
  // Pad so that rays grazing a face are never culled by rounding.
  const double pad = 1e-9 * (1.0 + box.diagonal().norm());
  box.min().array() -= pad;
  box.max().array() += pad;
  nodes_[id].box = box;

  if (end - begin <= 4) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  int axis = 0;
  cbox.diagonal().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    const double ca = centroids[a][axis], cb = centroids[b][axis];
    return ca != cb ? ca < cb : a < b;
  });
  const int left = build_node(begin, mid, centroids);
  const int right = build_node(mid, end, centroids);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

namespace {

// Entry parameter of a ray into a box, or +inf on a miss.
double box_entry(const Eigen::AlignedBox3d& box, const Vec3& o, const Vec3& d) {
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (d[i] == 0.0) {
      if (o[i] < box.min()[i] || o[i] > box.max()[i]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double t1 = (box.min()[i] - o[i]) / d[i];
    double t2 = (box.max()[i] - o[i]) / d[i];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
  }
  if (tmax < tmin || tmax < 0.0) return std::numeric_limits<double>::infinity();
  return std::max(tmin, 0.0);
}

}  // namespace

std::optional<RayHit> SurfaceBvh::raycast(const Vec3& origin, const Vec3& dir) const {
  if (nodes_.empty()) return std::nullopt;
  double best_t = std::numeric_limits<double>::infinity();
  int best_tri = -1;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if (box_entry(node.box, origin, dir) > best_t) continue;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int t = order_[i];
        const auto& tri = surface_.tris[t];
        auto hit = intersect_triangle(origin, dir, surface_.vertices[tri[0]], surface_.vertices[tri[1]],
                                      surface_.vertices[tri[2]]);
        if (hit && (*hit < best_t || (*hit == best_t && t < best_tri))) {
          best_t = *hit;
          best_tri = t;
        }
      }
    } else {
      stack.push_back(node.right);
      stack.push_back(node.left);
    }
  }
  if (best_tri < 0) return std::nullopt;
  return RayHit{origin + best_t * dir, best_tri, best_t};
}

std::optional<RayHit> raycast(const TetMesh& mesh, const Vec3& origin, const Vec3& dir) {
  return SurfaceBvh(mesh).raycast(origin, dir);
}

}  // namespace softgrasp::mesh
