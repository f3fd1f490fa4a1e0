#include "softgrasp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "softgrasp/error.hpp"
#include "softgrasp/io.hpp"

namespace softgrasp::train {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Fisher-Yates with an explicit index draw so the order depends only on the
// engine, not on the standard library's shuffle implementation.
void shuffle(std::vector<int>& v, std::mt19937_64& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

json pose_to_json(const grasp::GraspPose& g) {
  const auto& q = g.T.rotation;
  const auto& t = g.T.translation;
  return {{"T", {q.w(), q.x(), q.y(), q.z(), t.x(), t.y(), t.z()}}, {"p_g", {g.p_g[0], g.p_g[1]}}, {"F_g", g.F_g}};
}

grasp::GraspPose pose_from_json(const json& j) {
  const auto& T = j.at("T");
  if (T.size() != 7) throw Error("parse_error", "grasp T must have 7 entries");
  grasp::GraspPose p;
  p.T.rotation = Eigen::Quaterniond(T[0].get<double>(), T[1].get<double>(), T[2].get<double>(), T[3].get<double>());
  p.T.translation = Vec3(T[4].get<double>(), T[5].get<double>(), T[6].get<double>());
  p.p_g = {j.at("p_g")[0].get<double>(), j.at("p_g")[1].get<double>()};
  p.F_g = j.at("F_g").get<double>();
  return p;
}

const char* outputs_name(nn::Outputs o) {
  switch (o) {
    case nn::Outputs::def_only: return "def_only";
    case nn::Outputs::stress_only: return "stress_only";
    default: return "both";
  }
}

nn::Outputs outputs_from(const std::string& s) {
  if (s == "both") return nn::Outputs::both;
  if (s == "def_only") return nn::Outputs::def_only;
  if (s == "stress_only") return nn::Outputs::stress_only;
  throw Error("parse_error", "unknown outputs mode '" + s + "'");
}

nn::Outputs outputs_of(const nn::ModelConfig& c) {
  return c.output_dim == 1 ? nn::Outputs::stress_only : c.output_dim == 3 ? nn::Outputs::def_only : nn::Outputs::both;
}

std::vector<Vec3> displacement_rows(const graph::TargetFields& f) {
  std::vector<Vec3> d(static_cast<size_t>(f.rows()));
  for (Eigen::Index v = 0; v < f.rows(); ++v) d[v] = f.row(v).segment<3>(1).transpose();
  return d;
}

using GraspKey = std::tuple<std::string, int>;

}  // namespace

// ---------------------------------------------------------------------------

graph::TargetFields expand_outputs(const Matrix& pred, const nn::ModelConfig& c) {
  graph::TargetFields out = Matrix::Constant(pred.rows(), 4, std::numeric_limits<double>::quiet_NaN());
  const auto ch = c.output_channels();
  for (size_t k = 0; k < ch.size(); ++k) out.col(ch[k]) = pred.col(static_cast<Eigen::Index>(k));
  return out;
}

mesh::TetMesh ObjectSpec::build() const { return mesh::generate_primitive(kind, dims, resolution, elastic_modulus, id); }

json to_json(const ObjectSpec& s) {
  return {{"id", s.id},
          {"kind", mesh::to_string(s.kind)},
          {"dims", {s.dims.x(), s.dims.y(), s.dims.z()}},
          {"resolution", s.resolution},
          {"elastic_modulus_pa", s.elastic_modulus}};
}

ObjectSpec object_spec_from_json(const json& j) {
  try {
    ObjectSpec s;
    s.id = j.at("id").get<std::string>();
    s.kind = mesh::parse_primitive_kind(j.at("kind").get<std::string>());
    const auto& d = j.at("dims");
    if (d.size() != 3) throw Error("parse_error", "object dims must have 3 entries");
    s.dims = Vec3(d[0].get<double>(), d[1].get<double>(), d[2].get<double>());
    s.resolution = j.value("resolution", s.resolution);
    s.elastic_modulus = j.value("elastic_modulus_pa", s.elastic_modulus);
    return s;
  } catch (const json::exception& e) {
    throw Error("parse_error", std::string("object spec: ") + e.what());
  }
}

json to_json(const DatasetConfig& c) {
  return {{"grasps_per_object", c.grasps_per_object},
          {"rotations", c.rotations},
          {"substeps", c.substeps},
          {"f_max", c.f_max},
          {"poisson_ratio", c.poisson_ratio},
          {"epsilon", c.epsilon},
          {"seed", c.seed},
          {"gripper",
           {{"pad_width", c.gripper.pad_width},
            {"pad_height", c.gripper.pad_height},
            {"w_open", c.gripper.w_open},
            {"pad_resolution", c.gripper.pad_resolution}}}};
}

DatasetConfig dataset_config_from_json(const json& j) {
  try {
    DatasetConfig c;
    c.grasps_per_object = j.value("grasps_per_object", c.grasps_per_object);
    c.rotations = j.value("rotations", c.rotations);
    c.substeps = j.value("substeps", c.substeps);
    c.f_max = j.value("f_max", c.f_max);
    c.poisson_ratio = j.value("poisson_ratio", c.poisson_ratio);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.seed = j.value("seed", c.seed);
    if (j.contains("gripper")) {
      const auto& g = j["gripper"];
      c.gripper.pad_width = g.value("pad_width", c.gripper.pad_width);
      c.gripper.pad_height = g.value("pad_height", c.gripper.pad_height);
      c.gripper.w_open = g.value("w_open", c.gripper.w_open);
      c.gripper.pad_resolution = g.value("pad_resolution", c.gripper.pad_resolution);
    }
    c.gripper.validate();
    if (c.grasps_per_object < 1 || c.substeps < 1 || c.rotations < 1)
      throw Error("invalid_config", "grasps_per_object, rotations and substeps must be >= 1");
    if (!(c.f_max > 0.0)) throw Error("invalid_config", "f_max must be positive");
    return c;
  } catch (const json::exception& e) {
    throw Error("parse_error", std::string("dataset config: ") + e.what());
  }
}

Dataset generate_dataset(const std::vector<mesh::TetMesh>& objects, const DatasetConfig& cfg) {
  if (cfg.grasps_per_object < 1 || cfg.substeps < 1 || cfg.rotations < 1)
    throw Error("invalid_config", "grasps_per_object, rotations and substeps must be >= 1");
  Dataset out;
  for (size_t o = 0; o < objects.size(); ++o) {
    const auto& mesh = objects[o];
    const std::uint64_t seed = splitmix64(cfg.seed ^ splitmix64(o));
    const int n_points = (cfg.grasps_per_object + cfg.rotations - 1) / cfg.rotations;
    auto grasps = grasp::sample_antipodal(mesh, cfg.gripper, n_points, cfg.rotations, seed, cfg.epsilon, cfg.f_max);
    grasps.resize(static_cast<size_t>(cfg.grasps_per_object));
    const fem::Material mat{mesh.elastic_modulus(), cfg.poisson_ratio};
    for (int gi = 0; gi < cfg.grasps_per_object; ++gi) {
      const auto& pose = grasps[gi];
      const auto posed = grasp::pose_gripper(cfg.gripper, pose.T, pose.p_g);
      const auto contacts = grasp::find_contacts(mesh, posed, cfg.epsilon);
      const auto fields = fem::run_grasp_trajectory(mesh, mat, contacts, cfg.f_max, cfg.substeps);
      const auto base = graph::build_graph(mesh, posed, contacts, cfg.f_max);
      for (int k = 1; k <= cfg.substeps; ++k) {
        const auto& f = fields[k - 1];
        DatasetRecord r;
        r.object_id = mesh.id();
        r.grasp_index = gi;
        r.grasp = pose;
        r.F_g = f.force_level;
        r.grasp.F_g = f.force_level;
        r.substep = k;
        r.substeps = cfg.substeps;
        r.graph = base;
        graph::set_grasp_force(r.graph, f.force_level);
        r.target.resize(mesh.vertex_count(), 4);
        for (int v = 0; v < mesh.vertex_count(); ++v) {
          r.target(v, 0) = f.stress[v];
          r.target.row(v).segment<3>(1) = f.displacement[v].transpose();
        }
        r.elastic_modulus = mesh.elastic_modulus();
        r.poisson_ratio = cfg.poisson_ratio;
        r.seed = cfg.seed;
        out.records.push_back(std::move(r));
      }
    }
  }
  return out;
}

json to_json(const DatasetRecord& r) {
  json stress = json::array(), disp = json::array();
  for (Eigen::Index v = 0; v < r.target.rows(); ++v) {
    stress.push_back(r.target(v, 0));
    disp.push_back({r.target(v, 1), r.target(v, 2), r.target(v, 3)});
  }
  return {{"object_id", r.object_id},
          {"grasp_index", r.grasp_index},
          {"grasp", pose_to_json(r.grasp)},
          {"F_g", r.F_g},
          {"substep", r.substep},
          {"substeps", r.substeps},
          {"graph", graph::to_json(r.graph)},
          {"target", {{"stress", std::move(stress)}, {"displacement", std::move(disp)}}},
          {"metadata",
           {{"elastic_modulus_pa", r.elastic_modulus},
            {"poisson_ratio", r.poisson_ratio},
            {"seed", r.seed},
            {"oracle_version", r.oracle_version},
            // A linear quasistatic oracle cannot produce unstable grasps.
            {"unstable_grasp_filter", "none"}}}};
}

DatasetRecord record_from_json(const json& j) {
  try {
    DatasetRecord r;
    r.object_id = j.at("object_id").get<std::string>();
    r.grasp_index = j.at("grasp_index").get<int>();
    r.grasp = pose_from_json(j.at("grasp"));
    r.F_g = j.at("F_g").get<double>();
    r.substep = j.at("substep").get<int>();
    r.substeps = j.at("substeps").get<int>();
    r.graph = graph::graph_from_json(j.at("graph"));
    const auto& stress = j.at("target").at("stress");
    const auto& disp = j.at("target").at("displacement");
    if (stress.size() != disp.size() || static_cast<int>(stress.size()) != r.graph.object_nodes)
      throw Error("shape_mismatch", "target length differs from object vertex count");
    r.target.resize(static_cast<Eigen::Index>(stress.size()), 4);
    for (size_t v = 0; v < stress.size(); ++v) {
      r.target(v, 0) = stress[v].get<double>();
      for (int c = 0; c < 3; ++c) r.target(v, 1 + c) = disp[v].at(c).get<double>();
    }
    const auto& m = j.at("metadata");
    r.elastic_modulus = m.at("elastic_modulus_pa").get<double>();
    r.poisson_ratio = m.at("poisson_ratio").get<double>();
    r.seed = m.at("seed").get<std::uint64_t>();
    r.oracle_version = m.at("oracle_version").get<std::string>();
    if (!(r.F_g > 0.0) || r.substep < 1 || r.substep > r.substeps)
      throw Error("parse_error", "record force or substep out of range");
    return r;
  } catch (const json::exception& e) {
    throw Error("parse_error", std::string("dataset record: ") + e.what());
  }
}

void write_dataset(const Dataset& d, const std::string& path) {
  std::string text;
  for (const auto& r : d.records) {
    text += to_json(r).dump();
    text += '\n';
  }
  io::write_file(path, text);
}

Dataset read_dataset(const std::string& path) {
  const std::string text = io::read_file(path);
  Dataset d;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error("parse_error", path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    d.records.push_back(record_from_json(j));
  }
  if (d.records.empty()) throw Error("empty_dataset", "dataset " + path + " has no records");
  return d;
}

// ---------------------------------------------------------------------------

void validate_split(const Split& s, int record_count) {
  std::vector<char> seen(static_cast<size_t>(record_count), 0);
  for (const auto* part : {&s.train, &s.test})
    for (int i : *part) {
      if (i < 0 || i >= record_count)
        throw Error("invalid_split", "record index " + std::to_string(i) + " out of range");
      if (seen[i]++) throw Error("invalid_split", "record index " + std::to_string(i) + " listed twice");
    }
}

Split split_by_grasp(const Dataset& d, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error("invalid_argument", "train fraction must lie in (0, 1)");
  std::map<GraspKey, int> group;
  std::vector<int> group_of(d.records.size());
  for (size_t i = 0; i < d.records.size(); ++i) {
    const GraspKey key{d.records[i].object_id, d.records[i].grasp_index};
    auto it = group.emplace(key, static_cast<int>(group.size())).first;
    group_of[i] = it->second;
  }
  std::vector<int> order(group.size());
  for (size_t g = 0; g < order.size(); ++g) order[g] = static_cast<int>(g);
  std::mt19937_64 rng(seed);
  shuffle(order, rng);
  const auto n_train = static_cast<size_t>(std::lround(train_fraction * static_cast<double>(order.size())));
  std::vector<char> is_train(order.size(), 0);
  for (size_t k = 0; k < n_train; ++k) is_train[order[k]] = 1;
  Split s;
  for (size_t i = 0; i < d.records.size(); ++i) (is_train[group_of[i]] ? s.train : s.test).push_back(static_cast<int>(i));
  return s;
}

Split split_by_object(const Dataset& d, const std::vector<std::string>& test_objects) {
  Split s;
  for (size_t i = 0; i < d.records.size(); ++i) {
    const bool test = std::find(test_objects.begin(), test_objects.end(), d.records[i].object_id) != test_objects.end();
    (test ? s.test : s.train).push_back(static_cast<int>(i));
  }
  return s;
}

Split split_by_modulus(const Dataset& d, const std::vector<double>& test_moduli) {
  Split s;
  for (size_t i = 0; i < d.records.size(); ++i) {
    const double E = d.records[i].elastic_modulus;
    bool test = false;
    for (double m : test_moduli) test = test || std::abs(E - m) <= 1e-9 * std::abs(m);
    (test ? s.test : s.train).push_back(static_cast<int>(i));
  }
  return s;
}

json to_json(const Split& s) { return {{"train", s.train}, {"test", s.test}}; }

Split split_from_json(const json& j) {
  try {
    return {j.at("train").get<std::vector<int>>(), j.at("test").get<std::vector<int>>()};
  } catch (const json::exception& e) {
    throw Error("parse_error", std::string("split: ") + e.what());
  }
}

void write_split(const Split& s, const std::string& path) { io::write_file(path, to_json(s).dump()); }

Split read_split(const std::string& path) {
  try {
    return split_from_json(json::parse(io::read_file(path)));
  } catch (const json::exception& e) {
    throw Error("parse_error", "split " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr_start > lr_end && lr_end > 0.0)) throw Error("invalid_config", "need lr_start > lr_end > 0");
  if (epochs < 1) throw Error("invalid_config", "epochs must be >= 1");
  if (batch_size < 1) throw Error("invalid_config", "batch_size must be >= 1");
  if (stop_loss_ratio < 0.0) throw Error("invalid_config", "stop_loss_ratio must be >= 0");
  model.validate();
}

nn::ModelConfig TrainConfig::resolved_model() const {
  nn::ModelConfig m = model;
  m.output_dim = nn::output_dim_for(ablation.outputs);
  m.multi_step = ablation.multi_step;
  m.force_value = ablation.force_value;
  m.force_location = ablation.force_location;
  return m;
}

json to_json(const TrainConfig& c) {
  return {{"lr_start", c.lr_start},
          {"lr_end", c.lr_end},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"stop_loss_ratio", c.stop_loss_ratio},
          {"model", nn::to_json(c.model)},
          {"ablation",
           {{"outputs", outputs_name(c.ablation.outputs)},
            {"prediction", c.ablation.multi_step ? "multi_step" : "one_step"},
            {"force", c.ablation.force_value == graph::ForceValue::distributed ? "distributed" : "non_distributed"},
            {"force_location",
             c.ablation.force_location == graph::ForceLocation::contact_edges ? "contact_edges" : "all_nodes"}}}};
}

TrainConfig train_config_from_json(const json& j) {
  try {
    TrainConfig c;
    c.lr_start = j.value("lr_start", c.lr_start);
    c.lr_end = j.value("lr_end", c.lr_end);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.stop_loss_ratio = j.value("stop_loss_ratio", c.stop_loss_ratio);
    if (j.contains("model")) c.model = nn::model_config_from_json(j["model"]);
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      c.ablation.outputs = outputs_from(a.value("outputs", std::string("both")));
      const auto pred = a.value("prediction", std::string("one_step"));
      if (pred != "one_step" && pred != "multi_step") throw Error("parse_error", "unknown prediction '" + pred + "'");
      c.ablation.multi_step = pred == "multi_step";
      const auto force = a.value("force", std::string("distributed"));
      if (force != "distributed" && force != "non_distributed") throw Error("parse_error", "unknown force '" + force + "'");
      c.ablation.force_value = force == "distributed" ? graph::ForceValue::distributed : graph::ForceValue::non_distributed;
      const auto loc = a.value("force_location", std::string("contact_edges"));
      if (loc != "contact_edges" && loc != "all_nodes") throw Error("parse_error", "unknown force_location '" + loc + "'");
      c.ablation.force_location =
          loc == "contact_edges" ? graph::ForceLocation::contact_edges : graph::ForceLocation::all_nodes;
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error("parse_error", std::string("train config: ") + e.what());
  }
}

double learning_rate(const TrainConfig& c, long step, long total_steps) {
  if (total_steps <= 1) return c.lr_start;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return c.lr_start * std::pow(c.lr_end / c.lr_start, frac);
}

// ---------------------------------------------------------------------------

nn::Var compute_loss(nn::Tape& t, nn::Var pred, const Matrix& target, nn::Outputs outputs) {
  const Matrix& P = t.value(pred);
  const int dim = nn::output_dim_for(outputs);
  if (P.rows() != target.rows() || P.cols() != dim || target.cols() != dim)
    throw Error("shape_mismatch", "loss: prediction " + std::to_string(P.rows()) + "x" + std::to_string(P.cols()) +
                                      " vs target " + std::to_string(target.rows()) + "x" +
                                      std::to_string(target.cols()));
  if (outputs != nn::Outputs::both) return t.mse(pred, target);
  const nn::Var stress = t.mse(t.slice_cols(pred, 0, 1), target.leftCols(1));
  const nn::Var disp = t.mse(t.slice_cols(pred, 1, 3), target.rightCols(3));
  return t.add(stress, disp);
}

double compute_loss(const Matrix& pred, const Matrix& target, nn::Outputs outputs) {
  nn::Tape t(false);
  return t.scalar(compute_loss(t, t.constant(pred), target, outputs));
}

std::vector<RawSample> raw_samples(const Dataset& d, const std::vector<int>& indices, const nn::ModelConfig& model) {
  std::map<std::tuple<std::string, int, int>, int> by_substep;
  if (model.multi_step)
    for (size_t i = 0; i < d.records.size(); ++i)
      by_substep[{d.records[i].object_id, d.records[i].grasp_index, d.records[i].substep}] = static_cast<int>(i);
  std::vector<RawSample> out;
  out.reserve(indices.size());
  for (int idx : indices) {
    const auto& r = d.records.at(static_cast<size_t>(idx));
    RawSample s{r.graph, r.target};
    if (model.multi_step && r.substep > 1) {
      auto it = by_substep.find({r.object_id, r.grasp_index, r.substep - 1});
      if (it == by_substep.end())
        throw Error("missing_record", "multi-step target needs substep " + std::to_string(r.substep - 1) + " of " +
                                          r.object_id + " grasp " + std::to_string(r.grasp_index));
      const auto& prev = d.records[it->second].target;
      graph::displace_object_nodes(s.graph, displacement_rows(prev));
      s.target = r.target - prev;
    }
    s.graph = nn::prepare_graph(model, std::move(s.graph));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PreparedSample> prepare_samples(const std::vector<RawSample>& raw, const nn::ModelParams& p) {
  const auto ch = p.config.output_channels();
  std::vector<PreparedSample> out;
  out.reserve(raw.size());
  for (const auto& s : raw) {
    PreparedSample ps{s.graph, Matrix()};
    graph::apply_norm(ps.graph, p.norm);
    const Matrix z = graph::normalize_rows(s.target, p.norm.target);
    ps.target.resize(z.rows(), static_cast<Eigen::Index>(ch.size()));
    for (size_t k = 0; k < ch.size(); ++k) ps.target.col(static_cast<Eigen::Index>(k)) = z.col(ch[k]);
    out.push_back(std::move(ps));
  }
  return out;
}

namespace {

double sample_loss(const nn::ModelParams& p, const PreparedSample& s) {
  nn::Tape t(false);
  const auto vars = nn::bind_params(t, p, false);
  const auto in = nn::bind_inputs(t, s.graph, false);
  const auto out = nn::forward(t, p, vars, s.graph, in);
  const auto pred = t.slice_rows(out.normalized, 0, s.graph.object_nodes);
  return t.scalar(compute_loss(t, pred, s.target, outputs_of(p.config)));
}

}  // namespace

double mean_loss(const nn::ModelParams& p, const std::vector<PreparedSample>& samples) {
  if (samples.empty()) throw Error("empty_dataset", "no samples to evaluate");
  double total = 0.0;
  for (const auto& s : samples) total += sample_loss(p, s);
  return total / static_cast<double>(samples.size());
}

TrainResult train(const Dataset& d, const std::vector<int>& train_indices, const TrainConfig& cfg,
                  const ProgressFn& progress) {
  cfg.validate();
  if (train_indices.empty()) throw Error("empty_dataset", "training split is empty");
  const nn::ModelConfig model = cfg.resolved_model();
  const nn::Outputs outputs = cfg.ablation.outputs;

  TrainResult res;
  res.params = nn::init_params(model, cfg.seed);
  std::vector<PreparedSample> samples;
  {
    const auto raw = raw_samples(d, train_indices, model);
    std::vector<const graph::MultiGraph*> graphs;
    std::vector<const graph::TargetFields*> targets;
    for (const auto& s : raw) {
      graphs.push_back(&s.graph);
      targets.push_back(&s.target);
    }
    res.params.norm = graph::fit_norm_stats(graphs, targets);
    samples = prepare_samples(raw, res.params);
  }
  res.initial_loss = mean_loss(res.params, samples);

  auto& tensors = res.params.tensors;
  std::map<std::string, Matrix> m1, m2, grad;
  for (const auto& [name, w] : tensors) {
    m1[name] = Matrix::Zero(w.rows(), w.cols());
    m2[name] = Matrix::Zero(w.rows(), w.cols());
    grad[name] = Matrix::Zero(w.rows(), w.cols());
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  const int n = static_cast<int>(samples.size());
  const long batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = batches_per_epoch * cfg.epochs;
  std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x5eedULL));
  std::vector<int> order(n);
  long step = 0;
  bool stopped = false;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = 0; i < n; ++i) order[i] = i;
    shuffle(order, rng);
    double epoch_sum = 0.0;
    for (long b = 0; b < batches_per_epoch; ++b) {
      const int begin = static_cast<int>(b * cfg.batch_size);
      const int end = std::min(n, begin + cfg.batch_size);
      for (auto& [_, g] : grad) g.setZero();
      double batch_loss = 0.0;
      for (int k = begin; k < end; ++k) {
        const auto& s = samples[order[k]];
        nn::Tape t(true);
        const auto vars = nn::bind_params(t, res.params, true);
        const auto in = nn::bind_inputs(t, s.graph, false);
        const auto out = nn::forward(t, res.params, vars, s.graph, in);
        const auto loss = compute_loss(t, t.slice_rows(out.normalized, 0, s.graph.object_nodes), s.target, outputs);
        const double value = t.scalar(loss);
        if (!std::isfinite(value))
          throw Error("non_finite_loss", "non-finite loss at step " + std::to_string(step));
        batch_loss += value;
        t.backward(loss);
        for (const auto& [name, v] : vars)
          if (t.has_grad(v)) grad[name] += t.grad(v);
      }
      const double count = end - begin;
      batch_loss /= count;
      const double lr = learning_rate(cfg, step, total_steps);
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step + 1));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step + 1));
      for (auto& [name, w] : tensors) {
        const Matrix g = grad[name] / count;
        Matrix& a = m1[name];
        Matrix& v = m2[name];
        a = kBeta1 * a + (1.0 - kBeta1) * g;
        v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseAbs2();
        w.array() -= lr * (a.array() / bc1) / ((v.array() / bc2).sqrt() + kEps);
      }
      res.log.push_back({epoch + 1, step, lr, batch_loss});
      epoch_sum += batch_loss;
      ++step;
    }
    const double epoch_loss = epoch_sum / static_cast<double>(batches_per_epoch);
    res.epoch_loss.push_back(epoch_loss);
    if (progress) progress(epoch + 1, epoch_loss);
    // The running mean lags the parameters; confirm with a clean pass.
    const double target = cfg.stop_loss_ratio * res.initial_loss;
    if (cfg.stop_loss_ratio > 0.0 && epoch_loss <= target) {
      res.final_loss = mean_loss(res.params, samples);
      if (res.final_loss <= target) {
        stopped = true;
        break;
      }
    }
  }
  res.steps = step;
  nn::validate_params(res.params);
  if (!stopped) res.final_loss = mean_loss(res.params, samples);
  return res;
}

std::string log_to_csv(const std::vector<LogRow>& log) {
  std::string out = "epoch,step,lr,loss\n";
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%ld,%.9e,%.9e\n", r.epoch, r.step, r.lr, r.loss);
    out += buf;
  }
  return out;
}

std::vector<graph::TargetFields> predict_records(const nn::ModelParams& p, const Dataset& d,
                                                 const std::vector<int>& indices) {
  std::vector<graph::TargetFields> out(indices.size());
  if (!p.config.multi_step) {
    for (size_t i = 0; i < indices.size(); ++i)
      out[i] = expand_outputs(nn::predict(p, d.records.at(static_cast<size_t>(indices[i])).graph), p.config);
    return out;
  }
  // Roll each requested grasp forward from substep 1, feeding back the
  // accumulated predicted displacement.
  std::map<GraspKey, std::map<int, int>> substeps;  // grasp -> substep -> record
  for (size_t i = 0; i < d.records.size(); ++i)
    substeps[{d.records[i].object_id, d.records[i].grasp_index}][d.records[i].substep] = static_cast<int>(i);
  std::map<GraspKey, int> horizon;
  for (int idx : indices) {
    const auto& r = d.records.at(static_cast<size_t>(idx));
    int& h = horizon[{r.object_id, r.grasp_index}];
    h = std::max(h, r.substep);
  }
  std::map<int, graph::TargetFields> rolled;
  for (const auto& [key, last] : horizon) {
    const auto& steps = substeps.at(key);
    graph::TargetFields acc;
    for (int k = 1; k <= last; ++k) {
      auto it = steps.find(k);
      if (it == steps.end())
        throw Error("missing_record", "rollout needs substep " + std::to_string(k) + " of " + std::get<0>(key) +
                                          " grasp " + std::to_string(std::get<1>(key)));
      graph::MultiGraph g = d.records[it->second].graph;
      if (k == 1) acc = graph::TargetFields::Zero(g.object_nodes, 4);
      if (p.config.predicts_displacement()) graph::displace_object_nodes(g, displacement_rows(acc));
      acc += expand_outputs(nn::predict(p, g), p.config);
      rolled[it->second] = acc;
    }
  }
  for (size_t i = 0; i < indices.size(); ++i) out[i] = rolled.at(indices[i]);
  return out;
}

}  // namespace softgrasp::train
