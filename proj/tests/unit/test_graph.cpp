#include <gtest/gtest.h>

#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"

using namespace softgrasp;
using namespace softgrasp::graph;

namespace {

struct Sample {
  mesh::TetMesh mesh;
  grasp::PosedGripper gripper;
  grasp::ContactAssignment contacts;
};

Sample posed_sample(std::uint64_t seed, double E = 1e5) {
  auto m = fixtures::small_box(4, E);
  const auto g = fixtures::small_gripper();
  const auto pose = fixtures::some_grasp(m, g, seed);
  auto posed = grasp::pose_gripper(g, pose.T, pose.p_g);
  auto c = grasp::find_contacts(m, posed);
  return {std::move(m), std::move(posed), std::move(c)};
}

using EdgeMap = std::map<std::pair<int, int>, Eigen::RowVectorXd>;

EdgeMap edge_map(const std::vector<int>& s, const std::vector<int>& r, const Matrix& f) {
  EdgeMap out;
  for (size_t e = 0; e < s.size(); ++e) out[{s[e], r[e]}] = f.row(static_cast<Eigen::Index>(e));
  return out;
}

Eigen::RowVectorXd edge_row(const Vec3& xs, const Vec3& xr, double scalar) {
  Eigen::RowVectorXd row(kEdgeFeatures);
  const Vec3 d = xr - xs;
  row << d.x(), d.y(), d.z(), d.norm(), scalar;
  return row;
}

}  // namespace

TEST(BuildGraph, SingleTetWithTwoPadVerticesByHand) {
  const double a = 0.01, E = 2e5, F = 3.0;
  const std::vector<Vec3> tv{{0, 0, 0}, {a, 0, 0}, {0, a, 0}, {0, 0, a}};
  const auto m = mesh::TetMesh::create("tet", E, tv, {{0, 1, 2, 3}});

  grasp::PosedGripper pg;
  pg.vertices = {Vec3(-0.001, 0.002, 0.002), Vec3(-0.001, 0.004, 0.002)};
  pg.local_vertices = pg.vertices;
  pg.finger = {0, 0};
  pg.edges = {{0, 1}};
  pg.closing_dirs = {Vec3::UnitX(), Vec3(-Vec3::UnitX())};
  pg.local_closing_dirs = pg.closing_dirs;
  grasp::ContactAssignment c;
  c.pairs = {{0, 0}, {1, 2}};

  BuildOptions opts;
  opts.recenter = false;
  const auto g = build_graph(m, pg, c, F, opts);

  ASSERT_EQ(g.node_count(), 6);
  Matrix nodes = Matrix::Zero(6, kNodeFeatures);
  for (int v = 0; v < 4; ++v) {
    nodes(v, kTypeSurface) = 1;
    nodes.row(v).segment<3>(kNodePosCol) = tv[v].transpose();
  }
  for (int k = 0; k < 2; ++k) {
    nodes(4 + k, kTypeGripper) = 1;
    nodes.row(4 + k).segment<3>(kNodePosCol) = pg.vertices[k].transpose();
    nodes.row(4 + k).segment<3>(kNodeClosingCol) = Vec3::UnitX().transpose();
  }
  EXPECT_EQ(g.node_features, nodes);

  EdgeMap mesh_expect;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (i != j) mesh_expect[{i, j}] = edge_row(tv[i], tv[j], E);
  mesh_expect[{4, 5}] = edge_row(pg.vertices[0], pg.vertices[1], 0.0);
  mesh_expect[{5, 4}] = edge_row(pg.vertices[1], pg.vertices[0], 0.0);
  const auto mesh_got = edge_map(g.mesh_senders, g.mesh_receivers, g.mesh_features);
  ASSERT_EQ(mesh_got.size(), mesh_expect.size());
  for (const auto& [k, row] : mesh_expect) EXPECT_LE((mesh_got.at(k) - row).norm(), 1e-15) << k.first << "," << k.second;

  const EdgeMap contact_expect{{{4, 0}, edge_row(pg.vertices[0], tv[0], F / 2)},
                               {{0, 4}, edge_row(tv[0], pg.vertices[0], F / 2)},
                               {{5, 2}, edge_row(pg.vertices[1], tv[2], F / 2)},
                               {{2, 5}, edge_row(tv[2], pg.vertices[1], F / 2)}};
  const auto contact_got = edge_map(g.contact_senders, g.contact_receivers, g.contact_features);
  ASSERT_EQ(contact_got.size(), 4u);
  for (const auto& [k, row] : contact_expect) EXPECT_LE((contact_got.at(k) - row).norm(), 1e-15);

  c.pairs.clear();
  EXPECT_THROW(build_graph(m, pg, c, F), Error);
}

TEST(BuildGraph, StructuralInvariants) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = posed_sample(seed);
    const double F = 7.5;
    const auto g = build_graph(s.mesh, s.gripper, s.contacts, F);

    for (int i = 0; i < g.node_count(); ++i) {
      EXPECT_EQ(g.node_features.row(i).head<3>().sum(), 1.0);
      for (int c = 0; c < 3; ++c) EXPECT_TRUE(g.node_features(i, c) == 0.0 || g.node_features(i, c) == 1.0);
      const bool gripper = i >= g.object_nodes;
      EXPECT_EQ(g.node_features(i, kTypeGripper) == 1.0, gripper);
      EXPECT_NEAR(g.node_features.row(i).segment<3>(kNodeClosingCol).norm(), gripper ? 1.0 : 0.0, 1e-12);
    }
    for (int v = 0; v < g.object_nodes; ++v)
      EXPECT_EQ(g.node_features(v, kTypeSurface) == 1.0, s.mesh.is_surface_vertex(v));

    // Consecutive directed pairs are reverses with negated displacement.
    for (const auto* set : {&g.mesh_features, &g.contact_features}) {
      const auto& S = set == &g.mesh_features ? g.mesh_senders : g.contact_senders;
      const auto& R = set == &g.mesh_features ? g.mesh_receivers : g.contact_receivers;
      ASSERT_EQ(S.size() % 2, 0u);
      for (size_t e = 0; e < S.size(); e += 2) {
        EXPECT_EQ(S[e], R[e + 1]);
        EXPECT_EQ(R[e], S[e + 1]);
        const auto fwd = set->row(e), rev = set->row(e + 1);
        EXPECT_EQ(fwd.head<3>(), -rev.head<3>());
        EXPECT_EQ(fwd.tail<2>(), rev.tail<2>());
      }
    }

    // Modulus only on edges between object vertices; zero on pad edges.
    for (int e = 0; e < g.mesh_edge_count(); ++e) {
      const bool object = g.mesh_senders[e] < g.object_nodes;
      EXPECT_EQ(object, g.mesh_receivers[e] < g.object_nodes);
      EXPECT_EQ(g.mesh_features(e, kEdgeScalarCol), object ? s.mesh.elastic_modulus() : 0.0);
    }

    // Contact edges join a gripper node to an object node; force sums to 2F.
    double total = 0.0;
    for (int e = 0; e < g.contact_edge_count(); ++e) {
      EXPECT_NE(g.contact_senders[e] < g.object_nodes, g.contact_receivers[e] < g.object_nodes);
      EXPECT_DOUBLE_EQ(g.contact_features(e, kEdgeScalarCol), F / static_cast<double>(s.contacts.pairs.size()));
      total += g.contact_features(e, kEdgeScalarCol);
    }
    EXPECT_NEAR(total, 2 * F, 1e-12);
  }
}

TEST(BuildGraph, CountsIndependentOfForce) {
  const auto s = posed_sample(4);
  const auto a = build_graph(s.mesh, s.gripper, s.contacts, 1.0);
  const auto b = build_graph(s.mesh, s.gripper, s.contacts, 15.0);
  EXPECT_EQ(a.mesh_senders, b.mesh_senders);
  EXPECT_EQ(a.contact_senders, b.contact_senders);
  EXPECT_EQ(a.node_features, b.node_features);
  EXPECT_EQ(a.mesh_features, b.mesh_features);
  EXPECT_EQ(a.contact_features.leftCols(4), b.contact_features.leftCols(4));
}

TEST(BuildGraph, TranslationCovariance) {
  const auto s = posed_sample(5);
  const Vec3 shift(0.3, -0.2, 0.1);
  auto v = s.mesh.vertices();
  for (auto& p : v) p += shift;
  const auto moved = mesh::TetMesh::create("m", s.mesh.elastic_modulus(), v, s.mesh.tets());
  auto pg = s.gripper;
  for (auto& p : pg.vertices) p += shift;

  const auto a = build_graph(s.mesh, s.gripper, s.contacts, 5.0);
  const auto b = build_graph(moved, pg, s.contacts, 5.0);
  EXPECT_LE((a.node_features - b.node_features).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((a.mesh_features.leftCols(4) - b.mesh_features.leftCols(4)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a.mesh_features.col(kEdgeScalarCol), b.mesh_features.col(kEdgeScalarCol));
  EXPECT_LE((a.contact_features - b.contact_features).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((b.origin - a.origin - shift).norm(), 1e-12);

  BuildOptions raw;
  raw.recenter = false;
  const auto c = build_graph(moved, pg, s.contacts, 5.0, raw);
  for (int i = 0; i < c.node_count(); ++i)
    EXPECT_LE((c.node_features.row(i).segment<3>(kNodePosCol) - a.node_features.row(i).segment<3>(kNodePosCol) -
               (a.origin + shift).transpose())
                  .norm(),
              1e-12);
}

TEST(BuildGraph, LogModulus) {
  const auto s = posed_sample(6, 1e5);
  BuildOptions o;
  o.log_modulus = true;
  const auto g = build_graph(s.mesh, s.gripper, s.contacts, 5.0, o);
  EXPECT_DOUBLE_EQ(g.mesh_features(0, kEdgeScalarCol), 5.0);
}

TEST(ForceFeature, SetAndAblations) {
  const auto s = posed_sample(7);
  auto g = build_graph(s.mesh, s.gripper, s.contacts, 10.0);
  const double c = g.contact_pair_count();

  set_grasp_force(g, 0.5);
  for (int e = 0; e < g.contact_edge_count(); ++e) EXPECT_DOUBLE_EQ(g.contact_features(e, kEdgeScalarCol), 0.5 / c);
  set_grasp_force(g, 15.0);
  for (int e = 0; e < g.contact_edge_count(); ++e) EXPECT_DOUBLE_EQ(g.contact_features(e, kEdgeScalarCol), 15.0 / c);

  auto nd = g;
  apply_force_ablation(nd, ForceValue::non_distributed, ForceLocation::contact_edges);
  for (int e = 0; e < nd.contact_edge_count(); ++e) EXPECT_EQ(nd.contact_features(e, kEdgeScalarCol), 15.0);

  auto an = g;
  apply_force_ablation(an, ForceValue::distributed, ForceLocation::all_nodes);
  ASSERT_EQ(an.node_features.cols(), kNodeFeatures + 1);
  EXPECT_TRUE((an.node_features.col(kNodeForceCol).array() == 15.0).all());
  EXPECT_TRUE((an.contact_features.col(kEdgeScalarCol).array() == 0.0).all());
  EXPECT_EQ(an.node_features.leftCols(kNodeFeatures), g.node_features);
  set_grasp_force(an, 0.5);
  EXPECT_TRUE((an.node_features.col(kNodeForceCol).array() == 0.5).all());
}

TEST(DisplaceObjectNodes, RefreshesGeometry) {
  const auto s = posed_sample(8);
  auto g = build_graph(s.mesh, s.gripper, s.contacts, 5.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1e-3);
  std::vector<Vec3> d(g.object_nodes);
  for (auto& x : d) x = Vec3(n(rng), n(rng), n(rng));
  displace_object_nodes(g, d);

  auto v = s.mesh.vertices();
  for (size_t i = 0; i < v.size(); ++i) v[i] += d[i];
  const auto moved = mesh::TetMesh::create("m", s.mesh.elastic_modulus(), v, s.mesh.tets());
  BuildOptions o;
  o.recenter = false;
  auto h = build_graph(moved, s.gripper, s.contacts, 5.0, o);
  // Same positions up to the original origin shift.
  for (int i = 0; i < h.node_count(); ++i)
    h.node_features.row(i).segment<3>(kNodePosCol) -= g.origin.transpose();
  EXPECT_LE((g.node_features - h.node_features).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((g.mesh_features.leftCols(4) - h.mesh_features.leftCols(4)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((g.contact_features - h.contact_features).cwiseAbs().maxCoeff(), 1e-12);
  d.pop_back();
  EXPECT_THROW(displace_object_nodes(g, d), Error);
}

TEST(GraphJson, RoundTripIsBitExact) {
  const auto s = posed_sample(9);
  auto g = build_graph(s.mesh, s.gripper, s.contacts, 7.0);
  for (auto* graph : {&g}) {
    const auto back = graph_from_json(nlohmann::json::parse(to_json(*graph).dump()));
    EXPECT_EQ(back.node_features, graph->node_features);
    EXPECT_EQ(back.mesh_senders, graph->mesh_senders);
    EXPECT_EQ(back.mesh_receivers, graph->mesh_receivers);
    EXPECT_EQ(back.mesh_features, graph->mesh_features);
    EXPECT_EQ(back.contact_senders, graph->contact_senders);
    EXPECT_EQ(back.contact_features, graph->contact_features);
    EXPECT_EQ(back.origin, graph->origin);
    EXPECT_EQ(back.grasp_force, graph->grasp_force);
  }
  auto j = to_json(g);
  j["nodes"].erase(0);
  EXPECT_THROW(graph_from_json(j), Error);
  EXPECT_THROW(graph_from_json(nlohmann::json::object()), Error);
}

TEST(NormStats, ZScoreAndConstantChannel) {
  std::vector<MultiGraph> graphs;
  std::vector<TargetFields> targets;
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    const auto s = posed_sample(seed);
    graphs.push_back(build_graph(s.mesh, s.gripper, s.contacts, 5.0 + seed));
    TargetFields t = TargetFields::Random(graphs.back().object_nodes, 4);
    t.col(0) = t.col(0) * 1e3 + Eigen::VectorXd::Constant(t.rows(), 2e3);
    targets.push_back(t);
  }
  std::vector<const MultiGraph*> gp;
  std::vector<const TargetFields*> tp;
  for (size_t i = 0; i < graphs.size(); ++i) gp.push_back(&graphs[i]), tp.push_back(&targets[i]);
  const auto st = fit_norm_stats(gp, tp);

  // One-hot type channels pass through.
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(st.node.mean(c), 0.0);
    EXPECT_EQ(st.node.std(c), 1.0);
  }

  // Pooled z-scored features have mean 0 and std 1 on varying channels.
  std::vector<MultiGraph> z = graphs;
  for (auto& g : z) apply_norm(g, st);
  auto pooled = [](const std::vector<MultiGraph>& gs, auto get) {
    Eigen::Index rows = 0;
    for (const auto& g : gs) rows += get(g).rows();
    Matrix out(rows, get(gs[0]).cols());
    rows = 0;
    for (const auto& g : gs) out.middleRows(rows, get(g).rows()) = get(g), rows += get(g).rows();
    return out;
  };
  const Matrix mz = pooled(z, [](const MultiGraph& g) -> const Matrix& { return g.mesh_features; });
  for (int c = 0; c < kEdgeFeatures; ++c) {
    const double mean = mz.col(c).mean();
    const double sd = std::sqrt((mz.col(c).array() - mean).square().mean());
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(sd, 1.0, 1e-9);
  }
  const Matrix nz = pooled(z, [](const MultiGraph& g) -> const Matrix& { return g.node_features; });
  for (int c = kNodePosCol; c < kNodePosCol + 3; ++c) EXPECT_NEAR(nz.col(c).mean(), 0.0, 1e-9);

  // A constant channel gets the std floor instead of dividing by zero.
  std::vector<MultiGraph> flat = {graphs[0]};
  flat[0].contact_features.col(kEdgeScalarCol).setConstant(3.0);
  const auto fs = fit_norm_stats({&flat[0]}, {});
  EXPECT_EQ(fs.contact_edge.std(kEdgeScalarCol), kStdFloor);
  EXPECT_EQ(fs.target.mean, Eigen::VectorXd::Zero(4));

  // Order of the training set does not matter.
  std::vector<const MultiGraph*> rev(gp.rbegin(), gp.rend());
  std::vector<const TargetFields*> trev(tp.rbegin(), tp.rend());
  const auto sr = fit_norm_stats(rev, trev);
  EXPECT_LE((sr.mesh_edge.mean - st.mesh_edge.mean).cwiseAbs().maxCoeff(), 1e-12 * st.mesh_edge.mean.norm());
  EXPECT_LE((sr.target.std - st.target.std).cwiseAbs().maxCoeff(), 1e-12 * st.target.std.norm());

  // Inverse restores the raw features.
  auto back = z[0];
  invert_norm(back, st);
  EXPECT_LE((back.mesh_features - graphs[0].mesh_features).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((back.node_features - graphs[0].node_features).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NormStats, IdentityJsonAndMismatch) {
  const auto id = ChannelStats::identity(5);
  const Matrix x = Matrix::Random(7, 5);
  EXPECT_EQ(normalize_rows(x, id), x);
  EXPECT_EQ(denormalize_rows(x, id), x);

  NormStats s{ChannelStats::identity(kNodeFeatures), ChannelStats::identity(kEdgeFeatures),
              ChannelStats::identity(kEdgeFeatures), ChannelStats::identity(4)};
  s.target.mean << 1, 2, 3, 4;
  s.target.std << 0.5, 0.25, 0.125, 1e-7;
  const auto back = norm_stats_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(back.target.mean, s.target.mean);
  EXPECT_EQ(back.target.std, s.target.std);

  const auto smp = posed_sample(10);
  auto g = build_graph(smp.mesh, smp.gripper, smp.contacts, 5.0);
  apply_force_ablation(g, ForceValue::distributed, ForceLocation::all_nodes);
  try {
    apply_norm(g, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "shape_mismatch");
  }
  EXPECT_THROW(normalize_rows(Matrix::Zero(2, 3), id), Error);
  EXPECT_THROW(channel_stats_from_json(nlohmann::json{{"mean", {1, 2}}, {"std", {1}}}), Error);
}
