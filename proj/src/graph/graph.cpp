#include "softgrasp/graph.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "softgrasp/error.hpp"

namespace softgrasp::graph {

namespace {

void push_edge_pair(std::vector<int>& senders, std::vector<int>& receivers, std::vector<double>& feats, int i, int j,
                    const Vec3& xi, const Vec3& xj, double scalar) {
  const Vec3 d = xj - xi;
  const double dist = d.norm();
  senders.push_back(i);
  receivers.push_back(j);
  feats.insert(feats.end(), {d.x(), d.y(), d.z(), dist, scalar});
  senders.push_back(j);
  receivers.push_back(i);
  feats.insert(feats.end(), {-d.x(), -d.y(), -d.z(), dist, scalar});
}

Matrix to_matrix(const std::vector<double>& flat, int cols) {
  const int rows = static_cast<int>(flat.size()) / cols;
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = flat[static_cast<size_t>(r) * cols + c];
  return m;
}

Vec3 node_pos(const MultiGraph& g, int i) { return g.node_features.row(i).segment<3>(kNodePosCol).transpose(); }

void refresh_edges(const MultiGraph& g, const std::vector<int>& s, const std::vector<int>& r, Matrix& feats) {
  for (size_t e = 0; e < s.size(); ++e) {
    const Vec3 d = node_pos(g, r[e]) - node_pos(g, s[e]);
    feats.row(e).segment<3>(kEdgeDispCol) = d.transpose();
    feats(e, kEdgeDistCol) = d.norm();
  }
}

}  // namespace

MultiGraph build_graph(const mesh::TetMesh& mesh, const grasp::PosedGripper& gripper,
                       const grasp::ContactAssignment& contacts, double grasp_force, const BuildOptions& opts) {
  if (contacts.pairs.empty()) throw Error("no_contact", "graph needs at least one contact pair");
  MultiGraph g;
  g.object_nodes = mesh.vertex_count();
  g.gripper_nodes = gripper.vertex_count();
  g.grasp_force = grasp_force;
  g.elastic_modulus = mesh.elastic_modulus();
  g.origin = opts.recenter ? mesh.centroid() : Vec3::Zero();

  const int n = g.node_count();
  std::vector<Vec3> pos(n);
  g.node_features = Matrix::Zero(n, kNodeFeatures);
  for (int v = 0; v < g.object_nodes; ++v) {
    pos[v] = mesh.vertices()[v] - g.origin;
    g.node_features(v, mesh.is_surface_vertex(v) ? kTypeSurface : kTypeInterior) = 1.0;
    g.node_features.row(v).segment<3>(kNodePosCol) = pos[v].transpose();
  }
  for (int k = 0; k < g.gripper_nodes; ++k) {
    const int v = g.gripper_node(k);
    pos[v] = gripper.vertices[k] - g.origin;
    g.node_features(v, kTypeGripper) = 1.0;
    g.node_features.row(v).segment<3>(kNodePosCol) = pos[v].transpose();
    g.node_features.row(v).segment<3>(kNodeClosingCol) = gripper.closing_dirs[gripper.finger[k]].transpose();
  }

  const double modulus = opts.log_modulus ? std::log10(mesh.elastic_modulus()) : mesh.elastic_modulus();
  std::vector<double> feats;
  for (const auto& [i, j] : mesh::unique_edges(mesh))
    push_edge_pair(g.mesh_senders, g.mesh_receivers, feats, i, j, pos[i], pos[j], modulus);
  for (const auto& [a, b] : gripper.edges) {
    const int i = g.gripper_node(a), j = g.gripper_node(b);
    push_edge_pair(g.mesh_senders, g.mesh_receivers, feats, i, j, pos[i], pos[j], 0.0);
  }
  g.mesh_features = to_matrix(feats, kEdgeFeatures);

  feats.clear();
  const double per_edge = grasp_force / static_cast<double>(contacts.pairs.size());
  for (const auto& [gv, ov] : contacts.pairs) {
    const int i = g.gripper_node(gv);
    push_edge_pair(g.contact_senders, g.contact_receivers, feats, i, ov, pos[i], pos[ov], per_edge);
  }
  g.contact_features = to_matrix(feats, kEdgeFeatures);
  return g;
}

void set_grasp_force(MultiGraph& g, double grasp_force, ForceValue value) {
  g.grasp_force = grasp_force;
  if (g.node_features.cols() > kNodeFeatures) {
    g.node_features.col(kNodeForceCol).setConstant(grasp_force);
    return;
  }
  const double c = static_cast<double>(std::max(1, g.contact_pair_count()));
  g.contact_features.col(kEdgeScalarCol)
      .setConstant(value == ForceValue::distributed ? grasp_force / c : grasp_force);
}

void apply_force_ablation(MultiGraph& g, ForceValue value, ForceLocation location) {
  if (location == ForceLocation::all_nodes) {
    if (g.node_features.cols() == kNodeFeatures) {
      g.node_features.conservativeResize(Eigen::NoChange, kNodeFeatures + 1);
    }
    g.node_features.col(kNodeForceCol).setConstant(g.grasp_force);
    g.contact_features.col(kEdgeScalarCol).setZero();
    return;
  }
  set_grasp_force(g, g.grasp_force, value);
}

void displace_object_nodes(MultiGraph& g, const std::vector<Vec3>& displacement) {
  if (static_cast<int>(displacement.size()) != g.object_nodes)
    throw Error("shape_mismatch", "displacement count differs from object node count");
  for (int v = 0; v < g.object_nodes; ++v)
    g.node_features.row(v).segment<3>(kNodePosCol) += displacement[v].transpose();
  refresh_edges(g, g.mesh_senders, g.mesh_receivers, g.mesh_features);
  refresh_edges(g, g.contact_senders, g.contact_receivers, g.contact_features);
}

// ---------------------------------------------------------------------------

ChannelStats ChannelStats::identity(int channels) {
  return {Eigen::VectorXd::Zero(channels), Eigen::VectorXd::Ones(channels)};
}

namespace {

struct Accumulator {
  std::vector<long double> sum;
  long count = 0;
  explicit Accumulator(int c) : sum(c, 0.0L) {}
};

template <class RowSource>
ChannelStats fit_channels(int channels, const RowSource& for_each_matrix) {
  // Two passes in extended precision: mean, then population variance.
  Accumulator acc(channels);
  for_each_matrix([&](const Matrix& m, int rows) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < channels; ++c) acc.sum[c] += m(r, c);
    acc.count += rows;
  });
  ChannelStats s = ChannelStats::identity(channels);
  if (acc.count == 0) return s;
  for (int c = 0; c < channels; ++c) s.mean[c] = static_cast<double>(acc.sum[c] / acc.count);
  std::vector<long double> sq(channels, 0.0L);
  for_each_matrix([&](const Matrix& m, int rows) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < channels; ++c) {
        const long double d = static_cast<long double>(m(r, c)) - s.mean[c];
        sq[c] += d * d;
      }
  });
  for (int c = 0; c < channels; ++c)
    s.std[c] = std::max(kStdFloor, static_cast<double>(std::sqrt(sq[c] / acc.count)));
  return s;
}

void check_channels(const Matrix& m, const ChannelStats& s, const char* what) {
  if (m.cols() != s.channels())
    throw Error("shape_mismatch", std::string(what) + " has " + std::to_string(m.cols()) + " channels, stats have " +
                                      std::to_string(s.channels()));
}

}  // namespace

NormStats fit_norm_stats(const std::vector<const MultiGraph*>& graphs, const std::vector<const TargetFields*>& targets) {
  if (graphs.empty()) throw Error("invalid_argument", "normalisation needs at least one training graph");
  const int node_ch = static_cast<int>(graphs.front()->node_features.cols());
  for (const auto* g : graphs)
    if (g->node_features.cols() != node_ch) throw Error("shape_mismatch", "training graphs differ in node channels");
  NormStats s;
  s.node = fit_channels(node_ch, [&](auto&& fn) {
    for (const auto* g : graphs) fn(g->node_features, g->node_count());
  });
  // One-hot node type is passed through unchanged.
  for (int c = 0; c < 3; ++c) {
    s.node.mean[c] = 0.0;
    s.node.std[c] = 1.0;
  }
  s.mesh_edge = fit_channels(kEdgeFeatures, [&](auto&& fn) {
    for (const auto* g : graphs) fn(g->mesh_features, g->mesh_edge_count());
  });
  s.contact_edge = fit_channels(kEdgeFeatures, [&](auto&& fn) {
    for (const auto* g : graphs) fn(g->contact_features, g->contact_edge_count());
  });
  if (!targets.empty()) {
    const int tc = static_cast<int>(targets.front()->cols());
    s.target = fit_channels(tc, [&](auto&& fn) {
      for (const auto* t : targets) fn(*t, static_cast<int>(t->rows()));
    });
  } else {
    s.target = ChannelStats::identity(4);
  }
  return s;
}

Matrix normalize_rows(const Matrix& x, const ChannelStats& s) {
  check_channels(x, s, "matrix");
  return (x.rowwise() - s.mean.transpose()).array().rowwise() / s.std.transpose().array();
}

Matrix denormalize_rows(const Matrix& x, const ChannelStats& s) {
  check_channels(x, s, "matrix");
  return (x.array().rowwise() * s.std.transpose().array()).rowwise() + s.mean.transpose().array();
}

void apply_norm(MultiGraph& g, const NormStats& stats) {
  check_channels(g.node_features, stats.node, "node features");
  check_channels(g.mesh_features, stats.mesh_edge, "mesh edge features");
  check_channels(g.contact_features, stats.contact_edge, "contact edge features");
  g.node_features = normalize_rows(g.node_features, stats.node);
  g.mesh_features = normalize_rows(g.mesh_features, stats.mesh_edge);
  g.contact_features = normalize_rows(g.contact_features, stats.contact_edge);
}

void invert_norm(MultiGraph& g, const NormStats& stats) {
  g.node_features = denormalize_rows(g.node_features, stats.node);
  g.mesh_features = denormalize_rows(g.mesh_features, stats.mesh_edge);
  g.contact_features = denormalize_rows(g.contact_features, stats.contact_edge);
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const ChannelStats& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"std", std::vector<double>(s.std.data(), s.std.data() + s.std.size())}};
}

ChannelStats channel_stats_from_json(const nlohmann::json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("std").get<std::vector<double>>();
  if (mean.size() != sd.size()) throw Error("shape_mismatch", "stats mean/std lengths differ");
  ChannelStats s;
  s.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  s.std = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  return s;
}

nlohmann::json to_json(const NormStats& s) {
  return {{"node", to_json(s.node)},
          {"mesh_edge", to_json(s.mesh_edge)},
          {"contact_edge", to_json(s.contact_edge)},
          {"target", to_json(s.target)}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats s;
  s.node = channel_stats_from_json(j.at("node"));
  s.mesh_edge = channel_stats_from_json(j.at("mesh_edge"));
  s.contact_edge = channel_stats_from_json(j.at("contact_edge"));
  s.target = channel_stats_from_json(j.at("target"));
  return s;
}

namespace {

nlohmann::json edges_to_json(const std::vector<int>& s, const std::vector<int>& r, const Matrix& f) {
  auto arr = nlohmann::json::array();
  for (size_t e = 0; e < s.size(); e += 2) {
    auto row = nlohmann::json::array({s[e], r[e]});
    for (int c = 0; c < f.cols(); ++c) row.push_back(f(static_cast<Eigen::Index>(e), c));
    arr.push_back(std::move(row));
  }
  return arr;
}

void edges_from_json(const nlohmann::json& arr, std::vector<int>& s, std::vector<int>& r, Matrix& f) {
  const size_t m = arr.size();
  s.resize(2 * m);
  r.resize(2 * m);
  f.resize(static_cast<Eigen::Index>(2 * m), kEdgeFeatures);
  for (size_t e = 0; e < m; ++e) {
    const auto& row = arr[e];
    if (row.size() != 2 + kEdgeFeatures) throw Error("parse_error", "edge row has wrong width");
    const int i = row[0].get<int>(), j = row[1].get<int>();
    s[2 * e] = i;
    r[2 * e] = j;
    s[2 * e + 1] = j;
    r[2 * e + 1] = i;
    for (int c = 0; c < kEdgeFeatures; ++c) {
      const double v = row[2 + c].get<double>();
      f(static_cast<Eigen::Index>(2 * e), c) = v;
      f(static_cast<Eigen::Index>(2 * e + 1), c) = c < kEdgeDistCol ? -v : v;
    }
  }
}

}  // namespace

nlohmann::json to_json(const MultiGraph& g) {
  nlohmann::json j;
  j["object_nodes"] = g.object_nodes;
  j["gripper_nodes"] = g.gripper_nodes;
  j["grasp_force"] = g.grasp_force;
  j["elastic_modulus"] = g.elastic_modulus;
  j["origin"] = {g.origin.x(), g.origin.y(), g.origin.z()};
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (int i = 0; i < g.node_features.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (int c = 0; c < g.node_features.cols(); ++c) row.push_back(g.node_features(i, c));
    nodes.push_back(std::move(row));
  }
  j["mesh_edges"] = edges_to_json(g.mesh_senders, g.mesh_receivers, g.mesh_features);
  j["contact_edges"] = edges_to_json(g.contact_senders, g.contact_receivers, g.contact_features);
  return j;
}

MultiGraph graph_from_json(const nlohmann::json& j) {
  try {
    MultiGraph g;
    g.object_nodes = j.at("object_nodes").get<int>();
    g.gripper_nodes = j.at("gripper_nodes").get<int>();
    g.grasp_force = j.at("grasp_force").get<double>();
    g.elastic_modulus = j.at("elastic_modulus").get<double>();
    const auto& o = j.at("origin");
    g.origin = Vec3(o[0].get<double>(), o[1].get<double>(), o[2].get<double>());
    const auto& nodes = j.at("nodes");
    if (static_cast<int>(nodes.size()) != g.node_count()) throw Error("parse_error", "node count mismatch");
    const int cols = nodes.empty() ? kNodeFeatures : static_cast<int>(nodes[0].size());
    g.node_features.resize(g.node_count(), cols);
    for (int i = 0; i < g.node_count(); ++i) {
      if (static_cast<int>(nodes[i].size()) != cols) throw Error("parse_error", "ragged node features");
      for (int c = 0; c < cols; ++c) g.node_features(i, c) = nodes[i][c].get<double>();
    }
    edges_from_json(j.at("mesh_edges"), g.mesh_senders, g.mesh_receivers, g.mesh_features);
    edges_from_json(j.at("contact_edges"), g.contact_senders, g.contact_receivers, g.contact_features);
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse_error", std::string("graph JSON: ") + e.what());
  }
}

}  // namespace softgrasp::graph
