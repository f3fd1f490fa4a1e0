#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "softgrasp/grasp.hpp"
#include "softgrasp/matrix.hpp"
#include "softgrasp/mesh.hpp"

namespace softgrasp::graph {

using softgrasp::Matrix;

// Node feature layout.
inline constexpr int kTypeGripper = 0;
inline constexpr int kTypeSurface = 1;
inline constexpr int kTypeInterior = 2;
inline constexpr int kNodePosCol = 3;
inline constexpr int kNodeClosingCol = 6;
inline constexpr int kNodeFeatures = 9;
inline constexpr int kNodeForceCol = 9;  // only with force on all nodes

// Edge feature layout (mesh and contact edges).
inline constexpr int kEdgeDispCol = 0;
inline constexpr int kEdgeDistCol = 3;
inline constexpr int kEdgeScalarCol = 4;  // modulus (mesh) or force (contact)
inline constexpr int kEdgeFeatures = 5;

enum class ForceValue { distributed, non_distributed };
enum class ForceLocation { contact_edges, all_nodes };

/// Multigraph over object vertices (first) and gripper vertices (after).
/// Undirected edges are stored as consecutive directed pairs (i->j, j->i).
struct MultiGraph {
  int object_nodes = 0;
  int gripper_nodes = 0;
  double grasp_force = 0.0;
  double elastic_modulus = 0.0;
  Vec3 origin = Vec3::Zero();  // object centroid subtracted from positions

  Matrix node_features;  // n x 9 (x 10 with force on nodes)
  std::vector<int> mesh_senders, mesh_receivers;
  Matrix mesh_features;  // m x 5
  std::vector<int> contact_senders, contact_receivers;
  Matrix contact_features;  // c x 5

  int node_count() const { return object_nodes + gripper_nodes; }
  int mesh_edge_count() const { return static_cast<int>(mesh_senders.size()); }
  int contact_edge_count() const { return static_cast<int>(contact_senders.size()); }
  int contact_pair_count() const { return contact_edge_count() / 2; }
  int gripper_node(int g) const { return object_nodes + g; }
};

struct BuildOptions {
  bool recenter = true;       // subtract the object centroid from positions
  bool log_modulus = false;   // modulus channel holds log10(E) instead of E
};

/// Builds the multigraph for an object, a posed gripper and its contacts.
/// Throws Error{"no_contact"} when contacts are empty.
MultiGraph build_graph(const mesh::TetMesh& mesh, const grasp::PosedGripper& gripper,
                       const grasp::ContactAssignment& contacts, double grasp_force, const BuildOptions& opts = {});

/// Replaces the grasp force (contact-edge channel or node channel).
void set_grasp_force(MultiGraph& g, double grasp_force, ForceValue value = ForceValue::distributed);

/// Ablation switches for the force feature. non_distributed writes F_g on
/// every contact edge; all_nodes moves the force into an extra node channel.
void apply_force_ablation(MultiGraph& g, ForceValue value, ForceLocation location);

/// Moves object nodes by `displacement` and refreshes every geometric
/// feature that depends on them (positions, edge displacements, distances).
void displace_object_nodes(MultiGraph& g, const std::vector<Vec3>& displacement);

// ---------------------------------------------------------------------------
// Normalisation

struct ChannelStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static ChannelStats identity(int channels);
  int channels() const { return static_cast<int>(mean.size()); }
};

inline constexpr double kStdFloor = 1e-8;

/// Per-channel z-score statistics, fitted on training data only.
struct NormStats {
  ChannelStats node, mesh_edge, contact_edge;
  ChannelStats target;  // stress, dx, dy, dz (Pa, m)
};

/// Target fields for one sample: per object vertex (stress, dx, dy, dz).
using TargetFields = Matrix;  // object_nodes x 4

NormStats fit_norm_stats(const std::vector<const MultiGraph*>& graphs, const std::vector<const TargetFields*>& targets);

/// z-scores all feature matrices in place. Throws Error{"shape_mismatch"}.
void apply_norm(MultiGraph& g, const NormStats& stats);
void invert_norm(MultiGraph& g, const NormStats& stats);

Matrix normalize_rows(const Matrix& x, const ChannelStats& s);
Matrix denormalize_rows(const Matrix& x, const ChannelStats& s);

nlohmann::json to_json(const ChannelStats& s);
ChannelStats channel_stats_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NormStats& s);
NormStats norm_stats_from_json(const nlohmann::json& j);

// Compact serialization: one entry per undirected edge, expanded on load.
nlohmann::json to_json(const MultiGraph& g);
MultiGraph graph_from_json(const nlohmann::json& j);

}  // namespace softgrasp::graph
