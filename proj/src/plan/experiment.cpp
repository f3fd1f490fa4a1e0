#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "softgrasp/error.hpp"
#include "softgrasp/planner.hpp"

namespace softgrasp::plan {

using nlohmann::json;

namespace {

enum class Level { grasp, modulus, object };

Level level_from(const json& j) {
  if (j.is_number_integer()) {
    switch (j.get<int>()) {
      case 1: return Level::grasp;
      case 2: return Level::modulus;
      case 3: return Level::object;
      default: break;
    }
  } else if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "grasp") return Level::grasp;
    if (s == "modulus") return Level::modulus;
    if (s == "object") return Level::object;
  }
  throw Error("parse_error", "level must be 1|2|3 or grasp|modulus|object");
}

const char* level_name(Level l) {
  return l == Level::grasp ? "grasp" : l == Level::modulus ? "modulus" : "object";
}

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

train::Split make_split(const train::Dataset& d, Level level, const json& cfg, std::uint64_t seed) {
  switch (level) {
    case Level::grasp: return train::split_by_grasp(d, cfg.value("train_fraction", 0.8), seed);
    case Level::modulus: {
      if (!cfg.contains("test_moduli")) throw Error("missing_split", "level 'modulus' needs test_moduli");
      return train::split_by_modulus(d, cfg["test_moduli"].get<std::vector<double>>());
    }
    case Level::object: {
      if (!cfg.contains("test_objects")) throw Error("missing_split", "level 'object' needs test_objects");
      return train::split_by_object(d, cfg["test_objects"].get<std::vector<std::string>>());
    }
  }
  throw Error("missing_split", "unknown level");
}

// Tau and MAE for one group of test records.
json table_row(const nn::ModelParams& p, const train::Dataset& d, const std::vector<int>& ids) {
  const EvalReport r = evaluate(p, d, ids);
  return {{"tau_s", nan_to_null(r.tau_s)},
          {"tau_d", nan_to_null(r.tau_d)},
          {"mae_stress_kpa", nan_to_null(r.error.stress_kpa)},
          {"mae_deformation_mm", nan_to_null(r.error.deformation_mm)},
          {"samples", ids.size()}};
}

std::vector<double> oracle_qs(const std::vector<grasp::GraspPose>& poses, const mesh::TetMesh& mesh,
                              const fem::Material& mat, const GraspSetup& setup, const Objective& o) {
  std::vector<double> q;
  for (const auto& g : poses) q.push_back(oracle_q(mesh, mat, setup, g.T, o).q);
  return q;
}

// Trajectories are independent; run them concurrently.
std::vector<RefinementResult> refine_all(const nn::ModelParams& p, const mesh::TetMesh& mesh, const GraspSetup& setup,
                                         const std::vector<grasp::GraspPose>& starts, const Objective& o,
                                         const RefinementConfig& cfg) {
  std::vector<std::future<RefinementResult>> jobs;
  for (size_t i = 0; i < starts.size(); ++i) {
    RefinementConfig c = cfg;
    c.seed = cfg.seed + i;
    jobs.push_back(std::async(std::launch::async, [&, c, i] { return refine_grasp(p, mesh, setup, starts[i].T, o, c); }));
  }
  std::vector<RefinementResult> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

}  // namespace

ExperimentResult full_experiment(const json& config, std::uint64_t seed) {
  try {
    // Objects and data.
    std::vector<mesh::TetMesh> meshes;
    for (const auto& o : config.at("objects")) meshes.push_back(train::object_spec_from_json(o).build());
    if (meshes.empty()) throw Error("invalid_config", "no objects");
    std::map<std::string, const mesh::TetMesh*> by_id;
    for (const auto& m : meshes) by_id[m.id()] = &m;

    train::DatasetConfig dcfg = train::dataset_config_from_json(config.value("dataset", json::object()));
    dcfg.seed = seed;
    const train::Dataset data = config.contains("dataset_path")
                                    ? train::read_dataset(config["dataset_path"].get<std::string>())
                                    : train::generate_dataset(meshes, dcfg);

    const Level level = level_from(config.value("level", json(1)));
    const train::Split split = config.contains("split_path")
                                   ? train::read_split(config["split_path"].get<std::string>())
                                   : make_split(data, level, config, seed);
    train::validate_split(split, static_cast<int>(data.records.size()));
    if (split.train.empty() || split.test.empty()) throw Error("missing_split", "train and test sets must be non-empty");

    // Model.
    train::TrainConfig tcfg = train::train_config_from_json(config.value("train", json::object()));
    tcfg.seed = seed;
    nn::ModelParams params;
    json train_summary;
    if (config.contains("checkpoint")) {
      params = nn::load_checkpoint(config["checkpoint"].get<std::string>());
      train_summary = {{"checkpoint", config["checkpoint"]}};
    } else {
      const auto tr = train::train(data, split.train, tcfg);
      params = tr.params;
      train_summary = {{"initial_loss", tr.initial_loss}, {"final_loss", tr.final_loss}, {"steps", tr.steps}};
    }

    // Generalization table: one row per test object plus the pooled set.
    std::map<std::string, std::vector<int>> test_by_object;
    std::set<std::string> train_objects;
    for (int i : split.test) test_by_object[data.records[static_cast<size_t>(i)].object_id].push_back(i);
    for (int i : split.train) train_objects.insert(data.records[static_cast<size_t>(i)].object_id);

    std::string table = "object_id,elastic_modulus_pa,d_c_mm,tau_s,tau_d,mae_stress_kpa,mae_deformation_mm,samples\n";
    json rows = json::array();
    for (const auto& [id, ids] : test_by_object) {
      json row = table_row(params, data, ids);
      row["object_id"] = id;
      double dc = std::numeric_limits<double>::quiet_NaN();
      const auto it = by_id.find(id);
      if (it != by_id.end()) {
        row["elastic_modulus_pa"] = it->second->elastic_modulus();
        const auto surf = mesh::surface_mesh(*it->second);
        for (const auto& t : train_objects)
          if (by_id.count(t))
            dc = std::isnan(dc) ? mesh::chamfer_distance(surf, mesh::surface_mesh(*by_id[t]), 512, seed)
                                : std::min(dc, mesh::chamfer_distance(surf, mesh::surface_mesh(*by_id[t]), 512, seed));
      }
      row["d_c_mm"] = nan_to_null(dc);
      auto cell = [&](const char* k) { return row[k].is_null() ? std::string("nan") : fmt(row[k].get<double>()); };
      table += id + "," + (row.contains("elastic_modulus_pa") ? fmt(row["elastic_modulus_pa"].get<double>()) : "nan") +
               "," + cell("d_c_mm") + "," + cell("tau_s") + "," + cell("tau_d") + "," + cell("mae_stress_kpa") + "," +
               cell("mae_deformation_mm") + "," + std::to_string(ids.size()) + "\n";
      rows.push_back(row);
    }
    const EvalReport overall = evaluate(params, data, split.test);
    table += "all,nan,nan," + fmt(overall.tau_s) + "," + fmt(overall.tau_d) + "," + fmt(overall.error.stress_kpa) + "," +
             fmt(overall.error.deformation_mm) + "," + std::to_string(split.test.size()) + "\n";

    ExperimentResult res;
    res.table_csv = table;
    res.summary = {{"level", level_name(level)},
                   {"seed", seed},
                   {"train_records", split.train.size()},
                   {"test_records", split.test.size()},
                   {"train", train_summary},
                   {"tau_s", nan_to_null(overall.tau_s)},
                   {"tau_d", nan_to_null(overall.tau_d)},
                   {"tau_s_pooled", nan_to_null(overall.tau_s_pooled)},
                   {"tau_d_pooled", nan_to_null(overall.tau_d_pooled)},
                   {"mae_stress_kpa", nan_to_null(overall.error.stress_kpa)},
                   {"mae_deformation_mm", nan_to_null(overall.error.deformation_mm)},
                   {"per_object", rows},
                   {"reference_full_scale", {{"level", "grasp"}, {"tau_s", 0.78}, {"tau_d", 0.66}}}};
    if (config.contains("thresholds")) {
      const auto& th = config["thresholds"];
      const bool ok = overall.tau_s >= th.value("tau_s", -1.0) && overall.tau_d >= th.value("tau_d", -1.0);
      res.summary["thresholds"] = th;
      res.summary["thresholds_met"] = ok;
    }

    // Planning on one object: rank, refine the extremes, score with the oracle.
    if (!config.contains("planning")) return res;
    const json& pc = config["planning"];
    const std::string obj = pc.value("object", test_by_object.begin()->first);
    if (!by_id.count(obj)) throw Error("invalid_config", "planning object '" + obj + "' is not in objects");
    const mesh::TetMesh& mesh = *by_id[obj];
    const fem::Material mat{mesh.elastic_modulus(), dcfg.poisson_ratio};
    const GraspSetup setup{dcfg.gripper, dcfg.epsilon, pc.value("grasp_force", dcfg.f_max), dcfg.rotations};
    Objective objective = objective_from_json(pc.value("objective", json::object()));
    if (!pc.contains("objective") || !pc["objective"].contains("smooth_max_beta"))
      objective.smooth_max_beta = default_smooth_max_beta(data);
    const RefinementConfig rcfg = refinement_config_from_json(pc.value("refine", json::object()));
    const int n = pc.value("n", 100);
    const int group = pc.value("group_size", 10);

    RankReport rank = rank_sampled_grasps(params, mesh, setup, n, objective, seed, group, pc.value("batch", 5));
    attach_oracle(rank, mesh, mat, setup, objective);
    res.rank_csv = rank_to_csv(rank);

    auto pick = [&](const std::vector<int>& ids) {
      std::vector<grasp::GraspPose> g;
      for (int i : ids) g.push_back(rank.grasps[static_cast<size_t>(i)]);
      return g;
    };
    Objective reverse = objective;
    reverse.maximize = !objective.maximize;
    const auto low = refine_all(params, mesh, setup, pick(rank.low), objective, rcfg);
    const auto high = refine_all(params, mesh, setup, pick(rank.high), reverse, rcfg);
    std::vector<grasp::GraspPose> low_best, high_best;
    for (const auto& r : low) low_best.push_back(r.best);
    for (const auto& r : high) high_best.push_back(r.best);
    const auto q_low_ref = oracle_qs(low_best, mesh, mat, setup, objective);
    const auto q_high_ref = oracle_qs(high_best, mesh, mat, setup, objective);

    std::string box = "object_id,group,grasp,q_oracle\n";
    auto emit = [&](const char* name, const std::vector<int>& ids, const std::vector<double>& q) {
      for (size_t k = 0; k < q.size(); ++k)
        box += obj + "," + name + "," + std::to_string(ids.empty() ? static_cast<int>(k) : ids[k]) + "," + fmt(q[k]) +
               "\n";
    };
    std::vector<double> q_low, q_high;
    for (int i : rank.low) q_low.push_back(rank.q_true[static_cast<size_t>(i)]);
    for (int i : rank.high) q_high.push_back(rank.q_true[static_cast<size_t>(i)]);
    emit("all", {}, rank.q_true);
    emit("threshold_low", rank.low, q_low);
    emit("refined_low", rank.low, q_low_ref);
    emit("threshold_high", rank.high, q_high);
    emit("refined_high", rank.high, q_high_ref);
    res.boxplot_csv = box;

    int improved = 0, polarized = 0;
    for (size_t k = 0; k < q_low.size(); ++k) improved += objective.sign() * (q_low_ref[k] - q_low[k]) < 0.0;
    for (size_t k = 0; k < q_high.size(); ++k) polarized += objective.sign() * (q_high_ref[k] - q_high[k]) > 0.0;
    json refined = json::array();
    for (size_t k = 0; k < low.size(); ++k) {
      const auto& b = low[k].best;
      refined.push_back({{"grasp", rank.low[k]},
                         {"T",
                          {b.T.rotation.w(), b.T.rotation.x(), b.T.rotation.y(), b.T.rotation.z(), b.T.translation.x(),
                           b.T.translation.y(), b.T.translation.z()}},
                         {"p_g", {b.p_g[0], b.p_g[1]}},
                         {"q_pred_initial", low[k].initial_q},
                         {"q_pred_best", low[k].best_q},
                         {"q_oracle_initial", q_low[k]},
                         {"q_oracle_refined", q_low_ref[k]}});
    }
    res.summary["planning"] = {{"object", obj},
                               {"objective", to_json(objective)},
                               {"n", n},
                               {"argmin", rank.argmin},
                               {"threshold_overlap", nan_to_null(threshold_overlap(rank, std::min(30, n)))},
                               {"refined_low_improved", improved},
                               {"refined_high_polarized", polarized},
                               {"group_size", rank.low.size()},
                               {"refined_low", refined}};
    return res;
  } catch (const json::exception& e) {
    throw Error("parse_error", std::string("experiment config: ") + e.what());
  }
}

}  // namespace softgrasp::plan
