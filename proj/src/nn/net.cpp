#include "softgrasp/net.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "softgrasp/error.hpp"
#include "softgrasp/io.hpp"

namespace softgrasp::nn {

namespace {

const char* to_string(graph::ForceValue v) { return v == graph::ForceValue::distributed ? "distributed" : "non_distributed"; }
const char* to_string(graph::ForceLocation l) {
  return l == graph::ForceLocation::contact_edges ? "contact_edges" : "all_nodes";
}

graph::ForceValue force_value_from(const std::string& s) {
  if (s == "distributed") return graph::ForceValue::distributed;
  if (s == "non_distributed") return graph::ForceValue::non_distributed;
  throw Error("parse_error", "unknown force value '" + s + "'");
}

graph::ForceLocation force_location_from(const std::string& s) {
  if (s == "contact_edges") return graph::ForceLocation::contact_edges;
  if (s == "all_nodes") return graph::ForceLocation::all_nodes;
  throw Error("parse_error", "unknown force location '" + s + "'");
}

// Layer widths of an MLP: in, hidden..., out.
std::vector<int> mlp_widths(const ModelConfig& c, int in, int out) {
  std::vector<int> w{in};
  for (int i = 0; i < c.mlp_hidden_layers; ++i) w.push_back(c.mlp_hidden_width);
  w.push_back(out);
  return w;
}

struct MlpSpec {
  std::string name;
  int in, out;
  bool layer_norm;
};

std::vector<MlpSpec> mlp_specs(const ModelConfig& c) {
  const int L = c.latent_size;
  std::vector<MlpSpec> s{{"encoder_node", c.node_inputs(), L, true},
                         {"encoder_mesh", c.edge_inputs(), L, true},
                         {"encoder_contact", c.edge_inputs(), L, true}};
  for (int b = 0; b < c.message_passing_steps; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    s.push_back({p + "mesh_edge", 3 * L, L, true});
    s.push_back({p + "contact_edge", 3 * L, L, true});
    s.push_back({p + "node", 3 * L, L, true});
  }
  s.push_back({"decoder", L, c.output_dim, false});
  return s;
}

void check_finite(const Tape& t, Var v, const std::string& layer) {
  if (!t.value(v).allFinite()) throw Error("non_finite", "non-finite activation in " + layer);
}

// Hidden and output layers of an MLP whose first layer has already been
// applied (pre-activation `h`).
Var mlp_tail(Tape& t, const ParamVars& vars, const std::string& name, Var h, int layers, bool layer_norm) {
  for (int i = 1; i < layers; ++i) {
    h = t.relu(h);
    const std::string k = std::to_string(i);
    h = t.linear(h, vars.at(name + ".w" + k), vars.at(name + ".b" + k));
  }
  if (layer_norm) h = t.layer_norm(h, vars.at(name + ".ln_gain"), vars.at(name + ".ln_bias"));
  check_finite(t, h, name);
  return h;
}

Var mlp(Tape& t, const ParamVars& vars, const std::string& name, Var x, int layers, bool layer_norm) {
  Var h = t.linear(x, vars.at(name + ".w0"), vars.at(name + ".b0"));
  return mlp_tail(t, vars, name, h, layers, layer_norm);
}

// Edge update MLP on [e, h_sender, h_receiver]. The first layer is split by
// input block so the node projections are computed once per node rather
// than once per edge; this is the same affine map as on the concatenation.
Var edge_mlp(Tape& t, const ParamVars& vars, const std::string& name, Var e, Var h, const std::vector<int>& senders,
             const std::vector<int>& receivers, int latent, int layers) {
  const Var w0 = vars.at(name + ".w0");
  const Var we = t.slice_rows(w0, 0, latent);
  const Var ws = t.slice_rows(w0, latent, latent);
  const Var wr = t.slice_rows(w0, 2 * latent, latent);
  Var pre = t.linear(e, we, vars.at(name + ".b0"));
  pre = t.add(pre, t.gather_rows(t.matmul(h, ws), senders));
  pre = t.add(pre, t.gather_rows(t.matmul(h, wr), receivers));
  return mlp_tail(t, vars, name, pre, layers, true);
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (latent_size < 1 || message_passing_steps < 1 || mlp_hidden_layers < 0 || mlp_hidden_width < 1)
    throw Error("invalid_config", "model sizes must be positive");
  if (output_dim != 1 && output_dim != 3 && output_dim != 4)
    throw Error("invalid_config", "output_dim must be 1, 3 or 4");
}

int ModelConfig::node_inputs() const {
  return force_location == graph::ForceLocation::all_nodes ? graph::kNodeFeatures + 1 : graph::kNodeFeatures;
}

std::vector<int> ModelConfig::output_channels() const {
  switch (output_dim) {
    case 1: return {0};
    case 3: return {1, 2, 3};
    default: return {0, 1, 2, 3};
  }
}

int output_dim_for(Outputs o) {
  switch (o) {
    case Outputs::stress_only: return 1;
    case Outputs::def_only: return 3;
    default: return 4;
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"latent_size", c.latent_size},
          {"message_passing_steps", c.message_passing_steps},
          {"mlp_hidden_layers", c.mlp_hidden_layers},
          {"mlp_hidden_width", c.mlp_hidden_width},
          {"output_dim", c.output_dim},
          {"force_value", to_string(c.force_value)},
          {"force_location", to_string(c.force_location)},
          {"log_modulus", c.log_modulus},
          {"prediction", c.multi_step ? "multi_step" : "one_step"}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.latent_size = j.value("latent_size", c.latent_size);
    c.message_passing_steps = j.value("message_passing_steps", c.message_passing_steps);
    c.mlp_hidden_layers = j.value("mlp_hidden_layers", c.mlp_hidden_layers);
    c.mlp_hidden_width = j.value("mlp_hidden_width", c.mlp_hidden_width);
    c.output_dim = j.value("output_dim", c.output_dim);
    c.force_value = force_value_from(j.value("force_value", std::string("distributed")));
    c.force_location = force_location_from(j.value("force_location", std::string("contact_edges")));
    c.log_modulus = j.value("log_modulus", false);
    const auto pred = j.value("prediction", std::string("one_step"));
    if (pred != "one_step" && pred != "multi_step") throw Error("parse_error", "unknown prediction mode '" + pred + "'");
    c.multi_step = pred == "multi_step";
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse_error", std::string("model config: ") + e.what());
  }
}

size_t ModelParams::parameter_count() const {
  size_t n = 0;
  for (const auto& [_, m] : tensors) n += static_cast<size_t>(m.size());
  return n;
}

std::map<std::string, std::pair<int, int>> expected_shapes(const ModelConfig& c) {
  c.validate();
  std::map<std::string, std::pair<int, int>> out;
  for (const auto& s : mlp_specs(c)) {
    const auto w = mlp_widths(c, s.in, s.out);
    for (size_t i = 0; i + 1 < w.size(); ++i) {
      out[s.name + ".w" + std::to_string(i)] = {w[i], w[i + 1]};
      out[s.name + ".b" + std::to_string(i)] = {1, w[i + 1]};
    }
    if (s.layer_norm) {
      out[s.name + ".ln_gain"] = {1, s.out};
      out[s.name + ".ln_bias"] = {1, s.out};
    }
  }
  return out;
}

ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p;
  p.config = c;
  p.norm.node = graph::ChannelStats::identity(c.node_inputs());
  p.norm.mesh_edge = graph::ChannelStats::identity(c.edge_inputs());
  p.norm.contact_edge = graph::ChannelStats::identity(c.edge_inputs());
  p.norm.target = graph::ChannelStats::identity(4);
  std::mt19937_64 rng(seed);
  const int last = c.mlp_hidden_layers;
  for (const auto& s : mlp_specs(c)) {
    const auto w = mlp_widths(c, s.in, s.out);
    for (size_t i = 0; i + 1 < w.size(); ++i) {
      Matrix W(w[i], w[i + 1]);
      if (s.name == "decoder" && static_cast<int>(i) == last) {
        W.setZero();
      } else {
        const double a = std::sqrt(6.0 / (w[i] + w[i + 1]));
        std::uniform_real_distribution<double> uni(-a, a);
        for (Eigen::Index r = 0; r < W.rows(); ++r)
          for (Eigen::Index k = 0; k < W.cols(); ++k) W(r, k) = uni(rng);
      }
      p.tensors[s.name + ".w" + std::to_string(i)] = std::move(W);
      p.tensors[s.name + ".b" + std::to_string(i)] = Matrix::Zero(1, w[i + 1]);
    }
    if (s.layer_norm) {
      p.tensors[s.name + ".ln_gain"] = Matrix::Ones(1, s.out);
      p.tensors[s.name + ".ln_bias"] = Matrix::Zero(1, s.out);
    }
  }
  return p;
}

void validate_params(const ModelParams& p) {
  const auto shapes = expected_shapes(p.config);
  for (const auto& [name, shape] : shapes) {
    auto it = p.tensors.find(name);
    if (it == p.tensors.end()) throw Error("shape_mismatch", "missing tensor " + name);
    if (it->second.rows() != shape.first || it->second.cols() != shape.second)
      throw Error("shape_mismatch", "tensor " + name + " is " + std::to_string(it->second.rows()) + "x" +
                                        std::to_string(it->second.cols()) + ", expected " +
                                        std::to_string(shape.first) + "x" + std::to_string(shape.second));
    if (!it->second.allFinite()) throw Error("non_finite", "tensor " + name + " has non-finite entries");
  }
  for (const auto& [name, _] : p.tensors)
    if (!shapes.count(name)) throw Error("shape_mismatch", "unexpected tensor " + name);
  if (p.norm.node.channels() != p.config.node_inputs() || p.norm.mesh_edge.channels() != p.config.edge_inputs() ||
      p.norm.contact_edge.channels() != p.config.edge_inputs() || p.norm.target.channels() != 4)
    throw Error("shape_mismatch", "normalisation statistics do not match the model inputs");
}

ParamVars bind_params(Tape& tape, const ModelParams& p, bool requires_grad) {
  ParamVars vars;
  for (const auto& [name, m] : p.tensors) vars[name] = tape.param(m, requires_grad);
  return vars;
}

GraphInputs bind_inputs(Tape& tape, const graph::MultiGraph& g, bool requires_grad) {
  return {tape.leaf(g.node_features, requires_grad), tape.leaf(g.mesh_features, requires_grad),
          tape.leaf(g.contact_features, requires_grad)};
}

ForwardResult forward(Tape& t, const ModelParams& p, const ParamVars& vars, const graph::MultiGraph& g,
                      const GraphInputs& in) {
  const ModelConfig& c = p.config;
  const int n = g.node_count();
  const int layers = c.mlp_hidden_layers + 1;
  const int L = c.latent_size;
  auto check_cols = [](const Matrix& m, int rows, int cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols)
      throw Error("shape_mismatch", std::string(what) + " features are " + std::to_string(m.rows()) + "x" +
                                        std::to_string(m.cols()) + ", model expects " + std::to_string(rows) + "x" +
                                        std::to_string(cols));
  };
  check_cols(t.value(in.node), n, c.node_inputs(), "node");
  check_cols(t.value(in.mesh_edge), g.mesh_edge_count(), c.edge_inputs(), "mesh-edge");
  check_cols(t.value(in.contact_edge), g.contact_edge_count(), c.edge_inputs(), "contact-edge");

  Var h = mlp(t, vars, "encoder_node", in.node, layers, true);
  Var em = mlp(t, vars, "encoder_mesh", in.mesh_edge, layers, true);
  Var ec = mlp(t, vars, "encoder_contact", in.contact_edge, layers, true);

  for (int b = 0; b < c.message_passing_steps; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    em = t.add(em, edge_mlp(t, vars, pre + "mesh_edge", em, h, g.mesh_senders, g.mesh_receivers, L, layers));
    ec = t.add(ec, edge_mlp(t, vars, pre + "contact_edge", ec, h, g.contact_senders, g.contact_receivers, L, layers));
    const Var agg_m = t.scatter_add_rows(em, g.mesh_receivers, n);
    const Var agg_c = t.scatter_add_rows(ec, g.contact_receivers, n);
    h = t.add(h, mlp(t, vars, pre + "node", t.concat_cols({h, agg_m, agg_c}), layers, true));
  }

  const Var out = mlp(t, vars, "decoder", h, layers, false);
  RowVector scale(c.output_dim), shift(c.output_dim);
  const auto ch = c.output_channels();
  for (int k = 0; k < c.output_dim; ++k) {
    scale(k) = p.norm.target.std(ch[k]);
    shift(k) = p.norm.target.mean(ch[k]);
  }
  const Var real = t.affine_cols(t.slice_rows(out, 0, g.object_nodes), scale, shift);
  check_finite(t, real, "output");
  return {out, real};
}

graph::MultiGraph prepare_graph(const ModelConfig& c, graph::MultiGraph raw) {
  graph::apply_force_ablation(raw, c.force_value, c.force_location);
  if (c.log_modulus) {
    auto col = raw.mesh_features.col(graph::kEdgeScalarCol);
    for (Eigen::Index e = 0; e < col.size(); ++e)
      if (col(e) > 0.0) col(e) = std::log10(col(e));
  }
  return raw;
}

Matrix predict(const ModelParams& p, const graph::MultiGraph& raw) {
  graph::MultiGraph g = prepare_graph(p.config, raw);
  graph::apply_norm(g, p.norm);
  Tape t(false);
  const auto vars = bind_params(t, p, false);
  const auto in = bind_inputs(t, g, false);
  return t.value(forward(t, p, vars, g, in).real);
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const ModelParams& p) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, m] : p.tensors) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      auto row = nlohmann::json::array();
      for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(r, k));
      rows.push_back(std::move(row));
    }
    tensors[name] = std::move(rows);
  }
  return {{"config", to_json(p.config)}, {"norm_stats", graph::to_json(p.norm)}, {"tensors", std::move(tensors)}};
}

ModelParams params_from_json(const nlohmann::json& j) {
  try {
    ModelParams p;
    p.config = model_config_from_json(j.at("config"));
    p.norm = graph::norm_stats_from_json(j.at("norm_stats"));
    for (const auto& [name, rows] : j.at("tensors").items()) {
      const auto r = static_cast<Eigen::Index>(rows.size());
      const auto c = r > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
      Matrix m(r, c);
      for (Eigen::Index i = 0; i < r; ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != c)
          throw Error("shape_mismatch", "tensor " + name + " has ragged rows");
        for (Eigen::Index k = 0; k < c; ++k) m(i, k) = rows[i][k].get<double>();
      }
      p.tensors[name] = std::move(m);
    }
    validate_params(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse_error", std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ModelParams& p, const std::string& path) { io::write_file(path, to_json(p).dump()); }

ModelParams load_checkpoint(const std::string& path) {
  const std::string text = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse_error", "checkpoint " + path + ": " + e.what());
  }
  return params_from_json(j);
}

ModelParams load_checkpoint(const std::string& path, const ModelConfig& expected) {
  ModelParams p = load_checkpoint(path);
  const auto want = expected_shapes(expected);
  const auto have = expected_shapes(p.config);
  if (want != have || p.config.node_inputs() != expected.node_inputs())
    throw Error("shape_mismatch", "checkpoint " + path + " (latent " + std::to_string(p.config.latent_size) + ", L=" +
                                      std::to_string(p.config.message_passing_steps) +
                                      ") does not match the requested configuration (latent " +
                                      std::to_string(expected.latent_size) + ", L=" +
                                      std::to_string(expected.message_passing_steps) + ")");
  return p;
}

}  // namespace softgrasp::nn
