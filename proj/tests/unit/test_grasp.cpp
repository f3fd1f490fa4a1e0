#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "softgrasp/error.hpp"
#include "softgrasp/grasp.hpp"

using namespace softgrasp;
using namespace softgrasp::grasp;

namespace {

mesh::TetMesh box(double wx = 0.04) {
  return mesh::generate_primitive(mesh::PrimitiveKind::cuboid, {wx, 0.04, 0.04}, 8);
}

// Pairs by scanning every gripper/object vertex combination.
std::vector<std::pair<int, int>> brute_pairs(const mesh::TetMesh& m, const PosedGripper& g, double eps) {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < g.vertex_count(); ++i)
    for (int v = 0; v < m.vertex_count(); ++v)
      if ((g.vertices[i] - m.vertices()[v]).norm() <= eps) out.emplace_back(i, v);
  return out;
}

Pose random_pose(std::mt19937_64& rng, double spread) {
  std::normal_distribution<double> n(0, 1);
  Pose T;
  T.rotation = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
  T.translation = spread * Vec3(n(rng), n(rng), n(rng));
  return T;
}

}  // namespace

TEST(Pose, PerturbedIsLocalIncrement) {
  std::mt19937_64 rng(1);
  const Pose T = random_pose(rng, 0.1);
  Vec6 d;
  d << 0.01, -0.02, 0.005, 0.1, -0.2, 0.3;
  const Pose P = T.perturbed(d);
  const Vec3 q(0.02, -0.01, 0.03);
  const Vec3 expect = T.apply(Eigen::AngleAxisd(d.tail<3>().norm(), d.tail<3>().normalized()) * q + d.head<3>());
  EXPECT_LE((P.apply(q) - expect).norm(), 1e-14);
  EXPECT_LE((T.perturbed(Vec6::Zero()).apply(q) - T.apply(q)).norm(), 1e-15);
  EXPECT_LE((T.apply_inverse(T.apply(q)) - q).norm(), 1e-15);
}

TEST(Gripper, PadsAreMirrorImages) {
  const GripperModel g;
  const auto a = g.canonical_pad(0), b = g.canonical_pad(1);
  ASSERT_EQ(a.vertices.size(), 25u);
  for (size_t i = 0; i < a.vertices.size(); ++i) {
    EXPECT_DOUBLE_EQ(a.vertices[i].x(), -b.vertices[i].x());
    EXPECT_EQ(a.vertices[i].tail<2>(), b.vertices[i].tail<2>());
  }
  EXPECT_DOUBLE_EQ(g.closing_axis().norm(), 1.0);
  GripperModel bad;
  bad.pad_resolution = 1;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(JointClosure, CenteredCuboidIsSymmetric) {
  const double w = 0.04;
  const auto m = box(w);
  const GripperModel g;
  const auto p = compute_joint_closure(m, g, Pose{});
  EXPECT_NEAR(p[0], (g.w_open - w) / 2, 1e-12);
  EXPECT_NEAR(p[1], (g.w_open - w) / 2, 1e-12);
}

TEST(JointClosure, OffsetAlongClosingAxis) {
  const auto m = box();
  const GripperModel g;
  Pose T;
  T.translation = Vec3(0.001, 0, 0);
  const auto a = compute_joint_closure(m, g, Pose{});
  const auto b = compute_joint_closure(m, g, T);
  EXPECT_NEAR((b[0] - b[1]) - (a[0] - a[1]), -0.002, 1e-12);
  EXPECT_NEAR(a[0] + a[1], b[0] + b[1], 1e-12);
}

TEST(JointClosure, MissAndTooLarge) {
  const auto m = box();
  const GripperModel g;
  Pose past;
  past.translation = Vec3(0, 0.2, 0);
  try {
    compute_joint_closure(m, g, past);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "grasp_miss");
  }
  EXPECT_THROW(compute_joint_closure(box(0.1), g, Pose{}), Error);
}

TEST(JointClosure, InvariantUnderJointRigidTransform) {
  const auto m = mesh::generate_primitive(mesh::PrimitiveKind::ellipsoid, {0.02, 0.015, 0.025}, 6);
  std::mt19937_64 rng(2);
  const GripperModel g;
  for (int i = 0; i < 10; ++i) {
    const Pose T = random_pose(rng, 0.002);
    const Pose W = random_pose(rng, 0.5);
    auto v = m.vertices();
    for (auto& p : v) p = W.apply(p);
    const auto moved = mesh::TetMesh::create("m", 1e5, v, m.tets());
    const auto a = compute_joint_closure(m, g, T);
    const auto b = compute_joint_closure(moved, g, W.compose(T));
    EXPECT_NEAR(a[0], b[0], 1e-12);
    EXPECT_NEAR(a[1], b[1], 1e-12);
  }
}

TEST(Contacts, PadOnCubeFaceMatchesScan) {
  const auto m = box();
  const GripperModel g;
  const auto p = compute_joint_closure(m, g, Pose{});
  const auto posed = pose_gripper(g, Pose{}, p);
  const auto c = find_contacts(m, posed, 0.005);
  EXPECT_EQ(c.pairs, brute_pairs(m, posed, 0.005));
  EXPECT_TRUE(c.both_fingers());
  // Every pad vertex lies on a face and finds a partner.
  std::vector<bool> seen(posed.vertex_count(), false);
  for (const auto& [gv, ov] : c.pairs) seen[gv] = true;
  for (bool s : seen) EXPECT_TRUE(s);
}

TEST(Contacts, RandomPosesMatchScanAndGrowWithEpsilon) {
  const auto m = mesh::generate_primitive(mesh::PrimitiveKind::cylinder, {0.02, 0.02, 0.04}, 8);
  const GripperModel g;
  std::mt19937_64 rng(3);
  int checked = 0;
  for (int i = 0; i < 40; ++i) {
    const Pose T = random_pose(rng, 0.005);
    std::array<double, 2> p;
    try {
      p = compute_joint_closure(m, g, T);
    } catch (const Error&) {
      continue;
    }
    const auto posed = pose_gripper(g, T, p);
    size_t last = 0;
    for (double eps : {0.002, 0.004, 0.008}) {
      const auto expect = brute_pairs(m, posed, eps);
      if (expect.empty()) {
        EXPECT_THROW(find_contacts(m, posed, eps), Error);
        continue;
      }
      const auto c = find_contacts(m, posed, eps);
      EXPECT_EQ(c.pairs, expect);
      EXPECT_GE(c.pairs.size(), last);
      last = c.pairs.size();
      for (const auto& [gv, ov] : c.pairs) EXPECT_LE((posed.vertices[gv] - m.vertices()[ov]).norm(), eps);
    }
    ++checked;
  }
  EXPECT_GT(checked, 10);
}

TEST(Contacts, ZeroEpsilonFindsNothingGenerically) {
  const auto m = mesh::generate_primitive(mesh::PrimitiveKind::ellipsoid, {0.02, 0.015, 0.025}, 6);
  const GripperModel g;
  Pose T;
  T.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()));
  const auto posed = pose_gripper(g, T, compute_joint_closure(m, g, T));
  try {
    find_contacts(m, posed, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "no_contact");
  }
}

TEST(Sampler, CountDeterminismAndValidity) {
  const auto m = box();
  const GripperModel g;
  const auto a = sample_antipodal(m, g, 25, 4, 7);
  const auto b = sample_antipodal(m, g, 25, 4, 7);
  ASSERT_EQ(a.size(), 100u);
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].T.rotation.coeffs(), b[i].T.rotation.coeffs());
    EXPECT_EQ(a[i].T.translation, b[i].T.translation);
    EXPECT_EQ(a[i].p_g, b[i].p_g);
    EXPECT_GE(a[i].p_g[0], 0.0);
    EXPECT_LE(a[i].p_g[0], g.w_open);
    EXPECT_EQ(a[i].F_g, kMaxGraspForce);
    EXPECT_TRUE(find_contacts(m, pose_gripper(g, a[i].T, a[i].p_g)).both_fingers());
  }
  // Rotations about the axis are a quarter turn apart.
  for (int k = 1; k < 4; ++k) {
    const double angle = a[0].T.rotation.angularDistance(a[k].T.rotation);
    EXPECT_NEAR(std::min(angle, 2 * M_PI - angle), k == 2 ? M_PI : M_PI / 2, 1e-9);
  }
}

TEST(Sampler, AxisIsAntipodal) {
  const auto m = mesh::generate_primitive(mesh::PrimitiveKind::ellipsoid, {0.025, 0.025, 0.025}, 10);
  const GripperModel g;
  const double h = 0.05 / 10;
  for (const auto& s : sample_antipodal_detailed(m, g, 10, 2, 11)) {
    const Vec3 axis = s.pose.T.R().col(0);
    EXPECT_NEAR(axis.dot(-s.surface_normal), 1.0, 1e-12);
    // Both contact points on the axis through the pose centre.
    for (const Vec3& p : {s.contact_point, s.opposite_point}) {
      const Vec3 rel = p - s.pose.T.translation;
      EXPECT_LE((rel - rel.dot(axis) * axis).norm(), 1e-9);
    }
    // Sphere: the axis passes near the centre (facet normals deviate by
    // at most about an element).
    const Vec3 c = s.pose.T.translation;
    EXPECT_LE((c - c.dot(axis) * axis).norm(), 2 * h);
  }
}

TEST(Sampler, ExhaustionOnHugeObject) {
  const auto m = mesh::generate_primitive(mesh::PrimitiveKind::cuboid, {0.3, 0.3, 0.3}, 3);
  try {
    sample_antipodal(m, GripperModel{}, 2, 4, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "sampler_exhausted");
  }
}

TEST(GraspJson, RoundTrip) {
  const auto grasps = sample_antipodal(box(), GripperModel{}, 3, 2, 5);
  const auto [id, back] = grasps_from_json(grasps_to_json("box", grasps));
  EXPECT_EQ(id, "box");
  ASSERT_EQ(back.size(), grasps.size());
  for (size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].T.translation, grasps[i].T.translation);
    EXPECT_EQ(back[i].p_g, grasps[i].p_g);
  }
  EXPECT_THROW(grasps_from_json(R"({"object_id":"x","grasps":[{"T":[1,0,0],"p_g":[0,0],"F_g":1}]})"), Error);
}
