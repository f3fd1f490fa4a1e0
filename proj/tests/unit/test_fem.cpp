#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "softgrasp/error.hpp"
#include "softgrasp/fem.hpp"
#include "softgrasp/grasp.hpp"

using namespace softgrasp;
using namespace softgrasp::fem;

namespace {

mesh::TetMesh regular_tet() {
  std::vector<Vec3> v = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  return mesh::TetMesh::create("reg", 1e5, v, {{0, 1, 2, 3}});
}

// Lattice with jittered vertices: irregular but valid tets.
mesh::TetMesh jittered(int res, double amount, std::uint64_t seed) {
  const auto base = mesh::generate_primitive(mesh::PrimitiveKind::cuboid, {1, 1, 1}, res);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amount, amount);
  auto v = base.vertices();
  for (auto& p : v) p += Vec3(u(rng), u(rng), u(rng));
  return mesh::TetMesh::create("jit", 1e5, v, base.tets());
}

Mat3 random_sym(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1e3);
  Mat3 a;
  for (int i = 0; i < 9; ++i) a.data()[i] = n(rng);
  return 0.5 * (a + a.transpose());
}

// Consistent nodal loads for a uniform traction on the face x = x0.
void end_traction(const mesh::TetMesh& m, double x0, double fx, ContactLoad& load) {
  double area = 0.0;
  std::vector<std::pair<mesh::Tri, double>> tris;
  for (const auto& t : m.surface_tris()) {
    const auto& a = m.vertices()[t[0]];
    const auto& b = m.vertices()[t[1]];
    const auto& c = m.vertices()[t[2]];
    if (std::abs(a.x() - x0) > 1e-12 || std::abs(b.x() - x0) > 1e-12 || std::abs(c.x() - x0) > 1e-12) continue;
    const double ar = 0.5 * (b - a).cross(c - a).norm();
    tris.push_back({t, ar});
    area += ar;
  }
  for (const auto& [t, ar] : tris)
    for (int v : t) load.node_forces.try_emplace(v, Vec3::Zero()).first->second += Vec3(fx * ar / (3.0 * area), 0, 0);
}

grasp::ContactAssignment two_sided_contact(const mesh::TetMesh& m) {
  grasp::ContactAssignment c;
  double xmin = 1e9, xmax = -1e9;
  for (const auto& p : m.vertices()) xmin = std::min(xmin, p.x()), xmax = std::max(xmax, p.x());
  for (int v = 0; v < m.vertex_count(); ++v) {
    const auto& p = m.vertices()[v];
    if (std::abs(p.y()) > 0.011 || std::abs(p.z()) > 0.011) continue;
    if (p.x() == xmin) c.per_finger_object_nodes[0].push_back(v);
    if (p.x() == xmax) c.per_finger_object_nodes[1].push_back(v);
  }
  c.closing_dirs = {Vec3::UnitX(), Vec3(-Vec3::UnitX())};
  return c;
}

}  // namespace

TEST(VonMises, ClosedFormCases) {
  Mat3 s = Mat3::Zero();
  s(0, 0) = 7.0;
  EXPECT_NEAR(von_mises(s), 7.0, 1e-14);
  EXPECT_NEAR(von_mises(3.0 * Mat3::Identity()), 0.0, 1e-14);
  s.setZero();
  s(0, 1) = s(1, 0) = 2.0;
  EXPECT_NEAR(von_mises(s), 2.0 * std::sqrt(3.0), 1e-14);
}

TEST(VonMises, RotationInvariant) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 100; ++i) {
    const Mat3 s = random_sym(rng);
    const Mat3 R = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
    const double a = von_mises(s), b = von_mises(R * s * R.transpose());
    EXPECT_LE(std::abs(a - b), 1e-10 * a);
  }
}

TEST(Stiffness, RegularTetHasSixRigidModes) {
  const auto m = regular_tet();
  const Eigen::MatrixXd K(assemble_stiffness(m, {1e5, 0.3}));
  EXPECT_LE((K - K.transpose()).cwiseAbs().maxCoeff(), 1e-9 * K.cwiseAbs().maxCoeff());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
  const double top = es.eigenvalues().maxCoeff();
  int zero = 0;
  for (int i = 0; i < 12; ++i) {
    EXPECT_GE(es.eigenvalues()(i), -1e-9 * top);
    zero += std::abs(es.eigenvalues()(i)) < 1e-9 * top;
  }
  EXPECT_EQ(zero, 6);
}

TEST(Stiffness, LinearInModulus) {
  const auto m = jittered(2, 0.05, 1);
  const Eigen::MatrixXd a(assemble_stiffness(m, {1e5, 0.0}));
  const Eigen::MatrixXd b(assemble_stiffness(m, {2e5, 0.0}));
  EXPECT_LE((b - 2.0 * a).cwiseAbs().maxCoeff(), 1e-9 * a.cwiseAbs().maxCoeff());
}

TEST(Stiffness, RigidModesCarryNoForce) {
  const auto m = jittered(2, 0.08, 2);
  const auto K = assemble_stiffness(m, {1e5, 0.3});
  const Eigen::MatrixXd modes = rigid_body_modes(m);
  ASSERT_EQ(modes.cols(), 6);
  EXPECT_LE((modes.transpose() * modes - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-12);
  for (int k = 0; k < 6; ++k) EXPECT_LE((K * modes.col(k)).norm(), 1e-10 * 1e5);
  Eigen::VectorXd t = Eigen::VectorXd::Zero(3 * m.vertex_count());
  for (int v = 0; v < m.vertex_count(); ++v) t.segment<3>(3 * v) = Vec3(0.3, -0.2, 0.5);
  EXPECT_LE((K * t).norm(), 1e-10 * 1e5);
}

TEST(Material, Validation) {
  EXPECT_THROW((Material{0.0, 0.3}).validate(), Error);
  EXPECT_THROW((Material{1e5, 0.5}).validate(), Error);
  EXPECT_NO_THROW((Material{1e5, 0.0}).validate());
}

TEST(VertexAverage, UniformAndSharedCases) {
  const auto m = jittered(2, 0.05, 3);
  std::mt19937_64 rng(3);
  const Mat3 s = random_sym(rng);
  for (const auto& v : vertex_average_stress(m, std::vector<SymTensor>(m.tet_count(), s)))
    EXPECT_LE((v - s).cwiseAbs().maxCoeff(), 1e-9);

  // Two tets sharing a face: the shared vertices average A and B.
  std::vector<Vec3> p = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, -1}};
  const auto two = mesh::TetMesh::create("two", 1, p, {{0, 1, 2, 3}, {0, 2, 1, 4}});
  const Mat3 A = random_sym(rng), B = random_sym(rng);
  const auto avg = vertex_average_stress(two, {A, B});
  EXPECT_LE((avg[0] - 0.5 * (A + B)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((avg[3] - A).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((avg[4] - B).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(VertexAverage, MatchesIncidenceScan) {
  const auto m = mesh::generate_primitive(mesh::PrimitiveKind::ellipsoid, {0.03, 0.02, 0.04}, 6);
  std::mt19937_64 rng(4);
  std::vector<SymTensor> e(m.tet_count());
  for (auto& s : e) s = random_sym(rng);
  const auto got = vertex_average_stress(m, e);
  for (int v = 0; v < m.vertex_count(); ++v) {
    Mat3 sum = Mat3::Zero();
    int n = 0;
    for (int t = 0; t < m.tet_count(); ++t)
      for (int k : m.tets()[t])
        if (k == v) sum += e[t], ++n;
    ASSERT_GT(n, 0);
    EXPECT_EQ(got[v], sum / n) << v;
  }
}

TEST(VertexAverage, IsolatedVertexAndSizeErrors) {
  std::vector<Vec3> p = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {5, 5, 5}};
  const auto m = mesh::TetMesh::create("iso", 1, p, {{0, 1, 2, 3}});
  try {
    vertex_average_stress(m, {Mat3::Identity()});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "isolated_vertex");
  }
}

TEST(Solve, ZeroLoadGivesZeroFields) {
  const auto m = mesh::generate_primitive(mesh::PrimitiveKind::cuboid, {0.06, 0.04, 0.03}, 4);
  const auto out = solve_equilibrium(m, {1e5, 0.3}, ContactLoad{});
  for (int v = 0; v < m.vertex_count(); ++v) {
    EXPECT_EQ(out.stress[v], 0.0);
    EXPECT_EQ(out.displacement[v].norm(), 0.0);
  }
}

TEST(Solve, AxialBarMatchesAnalytic) {
  const double L = 0.1, w = 0.02, E = 1e6, F = 10.0, A = w * w;
  const auto m = mesh::generate_primitive(mesh::PrimitiveKind::cuboid, {L, w, w}, 20, E);
  ContactLoad load;
  end_traction(m, L / 2, F, load);
  end_traction(m, -L / 2, -F, load);
  load.total_force = F;
  const auto out = solve_equilibrium(m, {E, 0.0}, load);
  double right = 0, left = 0, mid = 0;
  int nr = 0, nl = 0, nm = 0;
  for (int v = 0; v < m.vertex_count(); ++v) {
    const double x = m.vertices()[v].x();
    if (std::abs(x - L / 2) < 1e-12) right += out.displacement[v].x(), ++nr;
    if (std::abs(x + L / 2) < 1e-12) left += out.displacement[v].x(), ++nl;
    if (std::abs(x) < 1e-12) mid += out.stress[v], ++nm;
  }
  const double elongation = right / nr - left / nl;
  EXPECT_NEAR(elongation, F * L / (E * A), 0.05 * F * L / (E * A));
  EXPECT_NEAR(mid / nm, F / A, 0.05 * F / A);
}

class ContactSolve : public ::testing::Test {
 protected:
  mesh::TetMesh mesh = mesh::generate_primitive(mesh::PrimitiveKind::cuboid, {0.06, 0.04, 0.03}, 6);
  grasp::ContactAssignment contact = two_sided_contact(mesh);
  Material mat{1e5, 0.3};
};

TEST_F(ContactSolve, LoadIsBalancedAndCarriesGraspForce) {
  const auto load = make_contact_load(mesh, contact, 15.0);
  EXPECT_EQ(load.total_force, 15.0);
  EXPECT_LE(load.net_force().norm(), 1e-9);
  EXPECT_LE(load.net_torque(mesh, mesh.centroid()).norm(), 1e-9);
  double push = 0.0;
  for (int f = 0; f < 2; ++f)
    for (int v : contact.per_finger_object_nodes[f]) push += load.node_forces.at(v).dot(contact.closing_dirs[f]);
  EXPECT_NEAR(push, 15.0, 1e-9);
}

TEST_F(ContactSolve, EquilibriumProperties) {
  const auto load = make_contact_load(mesh, contact, 15.0);
  SolveStats stats;
  const auto out = solve_equilibrium(mesh, mat, load, {}, &stats);
  EXPECT_LE(stats.relative_residual, 1e-8);
  const int n = mesh.vertex_count();
  Eigen::VectorXd u(3 * n), f = Eigen::VectorXd::Zero(3 * n);
  for (int v = 0; v < n; ++v) u.segment<3>(3 * v) = out.displacement[v];
  for (const auto& [v, fv] : load.node_forces) f.segment<3>(3 * v) = fv;
  // Rigid-mode free.
  const Eigen::MatrixXd modes = rigid_body_modes(mesh);
  EXPECT_LE((modes.transpose() * u).cwiseAbs().maxCoeff(), 1e-9);
  // Energy consistency.
  const auto K = assemble_stiffness(mesh, mat);
  const double uku = u.dot(K * u), fu = f.dot(u);
  EXPECT_NEAR(uku, fu, 1e-6 * std::abs(fu));
  for (int v = 0; v < n; ++v) {
    EXPECT_GE(out.stress[v], 0.0);
    EXPECT_DOUBLE_EQ(out.deformation_mag[v], out.displacement[v].norm());
  }
}

TEST_F(ContactSolve, HomogeneousInForceAndInverseInModulus) {
  const auto base = solve_equilibrium(mesh, mat, make_contact_load(mesh, contact, 5.0));
  const auto twice = solve_equilibrium(mesh, mat, make_contact_load(mesh, contact, 10.0));
  const auto stiff = solve_equilibrium(mesh, {2e5, 0.3}, make_contact_load(mesh, contact, 5.0));
  const double smax = *std::max_element(base.stress.begin(), base.stress.end());
  double dmax = 0;
  for (const auto& d : base.displacement) dmax = std::max(dmax, d.norm());
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    EXPECT_NEAR(twice.stress[v], 2 * base.stress[v], 1e-6 * smax);
    EXPECT_LE((twice.displacement[v] - 2 * base.displacement[v]).norm(), 1e-6 * dmax);
    EXPECT_LE((stiff.displacement[v] - 0.5 * base.displacement[v]).norm(), 1e-6 * dmax);
    EXPECT_NEAR(stiff.stress[v], base.stress[v], 1e-6 * smax);  // stress is independent of E
  }
}

TEST_F(ContactSolve, TrajectoryScalesOneSolve) {
  const auto traj = run_grasp_trajectory(mesh, mat, contact, 15.0, 50);
  ASSERT_EQ(traj.size(), 50u);
  for (int k = 0; k < 50; ++k) EXPECT_NEAR(traj[k].force_level, 0.3 * (k + 1), 1e-12);
  const auto full = solve_equilibrium(mesh, mat, make_contact_load(mesh, contact, 15.0));
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    EXPECT_EQ(traj[49].stress[v], full.stress[v]);
    EXPECT_EQ(traj[49].displacement[v], full.displacement[v]);
    EXPECT_NEAR(traj[24].stress[v], 0.5 * traj[49].stress[v], 1e-12 * (1 + full.stress[v]));
    EXPECT_LE((traj[24].displacement[v] - 0.5 * traj[49].displacement[v]).norm(), 1e-12);
  }
}

TEST(Solve, NonConvergenceIsReported) {
  const auto m = mesh::generate_primitive(mesh::PrimitiveKind::cuboid, {0.06, 0.04, 0.03}, 6);
  const auto c = two_sided_contact(m);
  SolverOptions opts;
  opts.max_iterations = 2;
  try {
    solve_equilibrium(m, {1e5, 0.3}, make_contact_load(m, c, 15.0), opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "cg_not_converged");
  }
}
