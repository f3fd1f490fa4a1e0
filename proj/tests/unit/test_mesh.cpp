#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "softgrasp/error.hpp"
#include "softgrasp/mesh.hpp"
#include "softgrasp/spatial.hpp"

using namespace softgrasp;
using namespace softgrasp::mesh;

namespace {

const char* kSingleTet =
    R"({"id":"t","elastic_modulus_pa":1e5,"vertices":[[0,0,0],[1,0,0],[0,1,0],[0,0,1]],"tets":[[0,1,2,3]]})";

// Unit cube split into 12 tets around a centre vertex.
TetMesh steiner_cube() {
  std::vector<Vec3> v;
  for (int i = 0; i < 8; ++i) v.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
  v.emplace_back(0.5, 0.5, 0.5);
  const int faces[6][4] = {{0, 1, 3, 2}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 3, 7, 6}, {0, 2, 6, 4}, {1, 3, 7, 5}};
  std::vector<Tet> tets;
  for (const auto& f : faces) {
    tets.push_back({f[0], f[1], f[2], 8});
    tets.push_back({f[0], f[2], f[3], 8});
  }
  return TetMesh::create("steiner", 1e5, v, tets);
}

std::map<std::array<int, 3>, int> face_counts(const TetMesh& m) {
  std::map<std::array<int, 3>, int> count;
  for (const auto& t : m.tets())
    for (int skip = 0; skip < 4; ++skip) {
      std::array<int, 3> f;
      int k = 0;
      for (int i = 0; i < 4; ++i)
        if (i != skip) f[k++] = t[i];
      std::sort(f.begin(), f.end());
      ++count[f];
    }
  return count;
}

std::optional<RayHit> brute_raycast(const TriMesh& s, const Vec3& o, const Vec3& d) {
  std::optional<RayHit> best;
  for (size_t i = 0; i < s.tris.size(); ++i) {
    const auto& t = s.tris[i];
    const auto hit = intersect_triangle(o, d, s.vertices[t[0]], s.vertices[t[1]], s.vertices[t[2]]);
    if (hit && (!best || *hit < best->t)) best = RayHit{o + *hit * d, static_cast<int>(i), *hit};
  }
  return best;
}

double brute_mean_nearest(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double sum = 0.0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) best = std::min(best, (p - q).norm());
    sum += best;
  }
  return sum / static_cast<double>(a.size());
}

}  // namespace

TEST(TetMesh, SingleTetFromJson) {
  const auto m = parse_mesh_json(kSingleTet);
  EXPECT_EQ(m.surface_tris().size(), 4u);
  EXPECT_EQ(extract_surface(m).size(), 4u);
  EXPECT_TRUE(interior_vertices(m).empty());
  EXPECT_NEAR(m.volume(), 1.0 / 6.0, 1e-15);
}

TEST(TetMesh, IndexAndVolumeErrors) {
  try {
    parse_mesh_json(R"({"id":"t","elastic_modulus_pa":1,"vertices":[[0,0,0],[1,0,0],[0,1,0],[0,0,1]],"tets":[[0,1,2,99]]})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "index_error");
  }
  try {
    parse_mesh_json(R"({"id":"t","elastic_modulus_pa":1,"vertices":[[0,0,0],[1,0,0],[2,0,0],[0,0,1]],"tets":[[0,1,2,3]]})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "degenerate_tet");
  }
  EXPECT_THROW(parse_mesh_json("{not json"), Error);
}

TEST(TetMesh, NegativeOrientationIsCanonicalised) {
  const auto m = parse_mesh_json(
      R"({"id":"t","elastic_modulus_pa":1e5,"vertices":[[0,0,0],[1,0,0],[0,1,0],[0,0,1]],"tets":[[1,0,2,3]]})");
  EXPECT_GT(m.tet_volume(0), 0.0);
  EXPECT_NEAR(m.volume(), 1.0 / 6.0, 1e-15);
}

TEST(TetMesh, CubeSurfaceCount) {
  const auto m = generate_primitive(PrimitiveKind::cuboid, {1, 1, 1}, 2);
  EXPECT_EQ(m.surface_tris().size(), 48u);
}

TEST(TetMesh, SteinerVertexIsInterior) {
  const auto m = steiner_cube();
  EXPECT_EQ(interior_vertices(m), std::vector<int>{8});
  EXPECT_EQ(extract_surface(m).size(), 8u);
  EXPECT_NEAR(m.volume(), 1.0, 1e-12);
}

TEST(TetMesh, FaceOnceRuleOnPrimitives) {
  for (auto kind : {PrimitiveKind::cuboid, PrimitiveKind::cylinder, PrimitiveKind::ellipsoid, PrimitiveKind::annulus}) {
    const Vec3 dims = kind == PrimitiveKind::annulus ? Vec3(0.02, 0.04, 0.03) : Vec3(0.04, 0.03, 0.05);
    const auto m = generate_primitive(kind, dims, 6);
    size_t once = 0;
    for (const auto& [face, n] : face_counts(m)) {
      ASSERT_TRUE(n == 1 || n == 2) << to_string(kind);
      once += n == 1;
    }
    EXPECT_EQ(once, m.surface_tris().size()) << to_string(kind);
    double vol = 0.0;
    for (int t = 0; t < m.tet_count(); ++t) {
      EXPECT_GT(m.tet_volume(t), kMinTetVolume);
      vol += m.tet_volume(t);
    }
    EXPECT_NEAR(vol, m.volume(), 1e-15);
    // Surface and interior partition the vertices.
    EXPECT_EQ(extract_surface(m).size() + interior_vertices(m).size(), static_cast<size_t>(m.vertex_count()));
  }
}

TEST(Primitives, CuboidCornersAndVolume) {
  const auto m = generate_primitive(PrimitiveKind::cuboid, {0.1, 0.1, 0.1}, 2);
  for (int i = 0; i < 8; ++i) {
    const Vec3 c((i & 1) ? 0.05 : -0.05, (i & 2) ? 0.05 : -0.05, (i & 4) ? 0.05 : -0.05);
    const bool found = std::any_of(m.vertices().begin(), m.vertices().end(),
                                   [&](const Vec3& v) { return (v - c).norm() < 1e-9; });
    EXPECT_TRUE(found) << c.transpose();
  }
  EXPECT_NEAR(m.volume(), 1e-3, 1e-15);
}

TEST(Primitives, EllipsoidSurfaceOnImplicitSurface) {
  const Vec3 a(0.03, 0.03, 0.05);
  const int res = 8;
  const auto m = generate_primitive(PrimitiveKind::ellipsoid, a, res);
  const double h = 2 * a.maxCoeff() / res;
  for (int v : extract_surface(m)) {
    const Vec3& p = m.vertices()[v];
    // Distance to the surface along the ray from the centre.
    const double r = std::sqrt((p.array() / a.array()).square().sum());
    EXPECT_LE(std::abs(1.0 - r) * p.norm() / r, h) << p.transpose();
  }
  EXPECT_GT(interior_vertices(m).size(), 0u);
}

TEST(Primitives, InvalidParameters) {
  EXPECT_THROW(generate_primitive(PrimitiveKind::annulus, {0.05, 0.04, 0.03}, 6), Error);
  EXPECT_THROW(generate_primitive(PrimitiveKind::cuboid, {0.05, -0.04, 0.03}, 6), Error);
  EXPECT_THROW(generate_primitive(PrimitiveKind::cuboid, {0.05, 0.04, 0.03}, 1), Error);
  EXPECT_THROW(parse_primitive_kind("torus"), Error);
}

TEST(MeshIo, RoundTrip) {
  const auto m = generate_primitive(PrimitiveKind::cylinder, {0.02, 0.03, 0.04}, 5, 3e5, "cyl");
  const auto back = parse_mesh_json(mesh_to_json(m));
  EXPECT_EQ(back.id(), "cyl");
  EXPECT_EQ(back.elastic_modulus(), 3e5);
  EXPECT_EQ(back.vertices(), m.vertices());
  EXPECT_EQ(back.tets(), m.tets());
  const std::string path = ::testing::TempDir() + "/cyl.json.gz";
  save_mesh(m, path);
  EXPECT_EQ(load_mesh(path).vertices(), m.vertices());
}

TEST(Raycast, CubeCentreAlongX) {
  const auto m = generate_primitive(PrimitiveKind::cuboid, {0.1, 0.1, 0.1}, 4);
  const auto hit = raycast(m, Vec3::Zero(), Vec3::UnitX());
  ASSERT_TRUE(hit);
  EXPECT_NEAR(hit->point.x(), 0.05, 1e-12);
  EXPECT_NEAR(hit->t, 0.05, 1e-12);
  EXPECT_FALSE(raycast(m, Vec3(0.2, 0, 0), Vec3::UnitX()));
}

TEST(Raycast, MatchesAllTriangleScan) {
  const auto m = generate_primitive(PrimitiveKind::ellipsoid, {0.03, 0.02, 0.04}, 7);
  const SurfaceBvh bvh(m);
  const auto surf = surface_mesh(m);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  int hits = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 o(0.05 * n(rng), 0.05 * n(rng), 0.05 * n(rng));
    // Half the rays aim near the object, half go anywhere.
    const Vec3 aim = i % 2 ? Vec3(0.02 * n(rng), 0.02 * n(rng), 0.02 * n(rng)) - o : Vec3(n(rng), n(rng), n(rng));
    const Vec3 d = aim.normalized();
    const auto a = bvh.raycast(o, d);
    const auto b = brute_raycast(surf, o, d);
    ASSERT_EQ(a.has_value(), b.has_value()) << i;
    if (!a) continue;
    ++hits;
    EXPECT_EQ(a->t, b->t) << i;
    EXPECT_EQ(a->point, b->point) << i;
  }
  EXPECT_GT(hits, 300);
}

TEST(Chamfer, IdenticalIsZeroAndSymmetric) {
  const auto a = surface_mesh(generate_primitive(PrimitiveKind::cuboid, {0.1, 0.1, 0.1}, 3));
  const auto b = surface_mesh(generate_primitive(PrimitiveKind::ellipsoid, {0.05, 0.04, 0.06}, 6));
  EXPECT_EQ(chamfer_distance(a, a, 512, 1), 0.0);
  EXPECT_DOUBLE_EQ(chamfer_distance(a, b, 512, 1), chamfer_distance(b, a, 512, 1));
  EXPECT_THROW(chamfer_distance(a, TriMesh{}, 16), Error);
}

TEST(Chamfer, ScaledCuboidMatchesBruteForce) {
  const auto m = generate_primitive(PrimitiveKind::cuboid, {0.1, 0.06, 0.04}, 4);
  auto a = surface_mesh(m);
  auto b = a;
  for (auto& v : b.vertices) v *= 2.0;
  const int samples = 700;
  const auto pa = sample_surface(a, samples, 9);
  const auto pb = sample_surface(b, samples, 9);
  const double brute = 1000.0 * 0.5 * (brute_mean_nearest(pa, pb) + brute_mean_nearest(pb, pa));
  EXPECT_NEAR(chamfer_distance(a, b, samples, 9), brute, 1e-12);
}

TEST(Chamfer, OffsetSpheresWithinOffset) {
  const auto s = surface_mesh(generate_primitive(PrimitiveKind::ellipsoid, {1, 1, 1}, 10));
  auto t = s;
  for (auto& v : t.vertices) v.x() += 1e-3;
  EXPECT_LE(chamfer_distance(s, t, 4096, 2), 1.0);
}

TEST(PointGrid, WithinAndNearestMatchScan) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> pts(500);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  const PointGrid grid(pts, 0.17);
  for (int i = 0; i < 200; ++i) {
    const Vec3 q(1.3 * u(rng), 1.3 * u(rng), 1.3 * u(rng));
    const double r = 0.3 * std::abs(u(rng));
    std::vector<int> expect;
    int best = 0;
    for (int k = 0; k < 500; ++k) {
      if ((pts[k] - q).norm() <= r) expect.push_back(k);
      if ((pts[k] - q).norm() < (pts[best] - q).norm()) best = k;
    }
    EXPECT_EQ(grid.within(q, r), expect);
    EXPECT_EQ(grid.nearest(q).first, best);
  }
}
