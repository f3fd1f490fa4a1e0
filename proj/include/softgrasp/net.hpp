#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "softgrasp/graph.hpp"
#include "softgrasp/tape.hpp"

namespace softgrasp::nn {

enum class Outputs { both, def_only, stress_only };

struct ModelConfig {
  int latent_size = 128;
  int message_passing_steps = 15;
  int mlp_hidden_layers = 2;
  int mlp_hidden_width = 128;
  int output_dim = 4;

  // Input conventions travel with the model so inference builds the same
  // features the model was trained on.
  graph::ForceValue force_value = graph::ForceValue::distributed;
  graph::ForceLocation force_location = graph::ForceLocation::contact_edges;
  bool log_modulus = false;
  bool multi_step = false;

  void validate() const;
  int node_inputs() const;
  int edge_inputs() const { return graph::kEdgeFeatures; }
  /// Target channels (0 = stress, 1..3 = displacement) predicted by the model.
  std::vector<int> output_channels() const;
  bool predicts_stress() const { return output_dim != 3; }
  bool predicts_displacement() const { return output_dim != 1; }
};

int output_dim_for(Outputs o);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Named weights, config and normalisation statistics.
struct ModelParams {
  ModelConfig config;
  graph::NormStats norm;
  std::map<std::string, Matrix> tensors;

  size_t parameter_count() const;
};

/// Expected tensor shapes for a configuration.
std::map<std::string, std::pair<int, int>> expected_shapes(const ModelConfig& c);

/// Glorot-uniform weights, zero biases, unit layer-norm gains and a zero final
/// decoder layer. Normalisation starts as identity.
ModelParams init_params(const ModelConfig& c, std::uint64_t seed);

/// Throws Error{"shape_mismatch"} or Error{"non_finite"}.
void validate_params(const ModelParams& p);

using ParamVars = std::map<std::string, Var>;

ParamVars bind_params(Tape& tape, const ModelParams& p, bool requires_grad);

/// Normalised input features as tape leaves.
struct GraphInputs {
  Var node, mesh_edge, contact_edge;
};

GraphInputs bind_inputs(Tape& tape, const graph::MultiGraph& normalized, bool requires_grad);

struct ForwardResult {
  Var normalized;  // all nodes x output_dim, z-scored target space
  Var real;        // object nodes x output_dim in Pa and m
};

/// Encode, L residual message-passing blocks, decode. `g` supplies topology
/// and must be normalised with p.norm. Throws Error{"shape_mismatch"} and
/// Error{"non_finite"} naming the offending layer.
ForwardResult forward(Tape& tape, const ModelParams& p, const ParamVars& vars, const graph::MultiGraph& g,
                      const GraphInputs& in);

/// Applies the model's force conventions to a raw graph.
graph::MultiGraph prepare_graph(const ModelConfig& c, graph::MultiGraph raw);

/// Raw graph in, object-node predictions in real units out.
Matrix predict(const ModelParams& p, const graph::MultiGraph& raw);

nlohmann::json to_json(const ModelParams& p);
ModelParams params_from_json(const nlohmann::json& j);
void save_checkpoint(const ModelParams& p, const std::string& path);
ModelParams load_checkpoint(const std::string& path);
/// As above, but the stored config must match `expected` in every dimension.
ModelParams load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace softgrasp::nn
