// Command-line driver. Every subcommand takes --config <json> and --seed <int>,
// writes its artefacts to the paths named in the config and prints a JSON
// summary on stdout. Failures print {"error": kind, "message": ...} on stderr.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "softgrasp/error.hpp"
#include "softgrasp/io.hpp"
#include "softgrasp/planner.hpp"

namespace sg = softgrasp;
using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  try {
    return json::parse(sg::io::read_file(path));
  } catch (const json::parse_error& e) {
    throw sg::Error("parse_error", path + ": " + e.what());
  }
}

std::string need_string(const json& cfg, const char* key) {
  if (!cfg.contains(key) || !cfg[key].is_string())
    throw sg::Error("invalid_config", std::string("config needs string field '") + key + "'");
  return cfg[key].get<std::string>();
}

void write_text(const std::string& path, const std::string& text) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  sg::io::write_file(path, text);
}

// {"mesh": path} or an inline object spec.
sg::mesh::TetMesh load_object(const json& j) {
  if (j.contains("mesh")) return sg::mesh::load_mesh(j["mesh"].get<std::string>());
  return sg::train::object_spec_from_json(j).build();
}

sg::plan::GraspSetup setup_from(const json& cfg) {
  const auto d = sg::train::dataset_config_from_json(cfg.value("dataset", json::object()));
  return {d.gripper, d.epsilon, cfg.value("grasp_force", d.f_max), d.rotations};
}

sg::train::Split load_split(const json& cfg, const sg::train::Dataset& d, std::uint64_t seed) {
  if (cfg.contains("split_path")) return sg::train::read_split(cfg["split_path"].get<std::string>());
  const json s = cfg.value("split", json::object());
  const std::string level = s.value("level", std::string("grasp"));
  if (level == "grasp") return sg::train::split_by_grasp(d, s.value("train_fraction", 0.8), seed);
  if (level == "modulus") return sg::train::split_by_modulus(d, s.at("test_moduli").get<std::vector<double>>());
  if (level == "object")
    return sg::train::split_by_object(d, s.at("test_objects").get<std::vector<std::string>>());
  throw sg::Error("missing_split", "unknown split level '" + level + "'");
}

sg::plan::Objective objective_from(const json& cfg, const sg::train::Dataset* d) {
  auto o = sg::plan::objective_from_json(cfg.value("objective", json::object()));
  const bool explicit_beta = cfg.contains("objective") && cfg["objective"].contains("smooth_max_beta");
  if (!explicit_beta && d) o.smooth_max_beta = sg::plan::default_smooth_max_beta(*d);
  return o;
}

json cmd_gen_data(const json& cfg, std::uint64_t seed) {
  const std::string out = need_string(cfg, "output");
  std::vector<sg::mesh::TetMesh> meshes;
  for (const auto& o : cfg.at("objects")) meshes.push_back(load_object(o));
  auto dcfg = sg::train::dataset_config_from_json(cfg.value("dataset", json::object()));
  dcfg.seed = seed;
  const auto data = sg::train::generate_dataset(meshes, dcfg);
  write_text(out, "");  // creates the directory
  sg::train::write_dataset(data, out);
  json summary = {{"output", out}, {"records", data.records.size()}, {"objects", meshes.size()}};
  if (cfg.contains("split_output")) {
    const auto split = load_split(cfg, data, seed);
    write_text(cfg["split_output"].get<std::string>(), sg::train::to_json(split).dump());
    summary["train_records"] = split.train.size();
    summary["test_records"] = split.test.size();
  }
  return summary;
}

// Record indices named by cfg["subset"]: "train", "test" or "all".
std::vector<int> select_records(const json& cfg, const sg::train::Dataset& data, std::uint64_t seed,
                                const std::string& fallback) {
  const std::string subset = cfg.value("subset", fallback);
  if (subset == "all") {
    std::vector<int> ids(data.records.size());
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    return ids;
  }
  if (subset != "train" && subset != "test") throw sg::Error("invalid_config", "unknown subset '" + subset + "'");
  const auto split = load_split(cfg, data, seed);
  return subset == "train" ? split.train : split.test;
}

json cmd_train(const json& cfg, std::uint64_t seed) {
  const auto data = sg::train::read_dataset(need_string(cfg, "dataset"));
  const auto ids = select_records(cfg, data, seed, "train");
  auto tcfg = sg::train::train_config_from_json(cfg.value("train", json::object()));
  tcfg.seed = seed;
  const bool verbose = cfg.value("verbose", false);
  const auto res = sg::train::train(data, ids, tcfg, [&](int epoch, double loss) {
    if (verbose) std::fprintf(stderr, "epoch %d loss %.6g\n", epoch, loss);
  });
  const std::string out = need_string(cfg, "output");
  write_text(out, "");
  sg::nn::save_checkpoint(res.params, out);
  if (cfg.contains("log_csv")) write_text(cfg["log_csv"].get<std::string>(), sg::train::log_to_csv(res.log));
  return {{"output", out},
          {"initial_loss", res.initial_loss},
          {"final_loss", res.final_loss},
          {"steps", res.steps},
          {"parameters", res.params.parameter_count()}};
}

json cmd_eval(const json& cfg, std::uint64_t seed) {
  const auto data = sg::train::read_dataset(need_string(cfg, "dataset"));
  const auto params = sg::nn::load_checkpoint(need_string(cfg, "checkpoint"));
  const auto ids = select_records(cfg, data, seed, "test");
  const auto rep = sg::plan::evaluate(params, data, ids);
  if (cfg.contains("output_csv")) write_text(cfg["output_csv"].get<std::string>(), sg::plan::eval_rows_to_csv(rep));
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(); };
  return {{"samples", ids.size()},
          {"force_levels", rep.levels},
          {"tau_s", num(rep.tau_s)},
          {"tau_d", num(rep.tau_d)},
          {"tau_s_pooled", num(rep.tau_s_pooled)},
          {"tau_d_pooled", num(rep.tau_d_pooled)},
          {"mae_stress_kpa", num(rep.error.stress_kpa)},
          {"mae_deformation_mm", num(rep.error.deformation_mm)}};
}

json cmd_rank(const json& cfg, std::uint64_t seed) {
  const auto mesh = load_object(cfg.at("object"));
  const auto params = sg::nn::load_checkpoint(need_string(cfg, "checkpoint"));
  const auto setup = setup_from(cfg);
  std::optional<sg::train::Dataset> data;
  if (cfg.contains("dataset_path")) data = sg::train::read_dataset(cfg["dataset_path"].get<std::string>());
  const auto o = objective_from(cfg, data ? &*data : nullptr);
  auto rep = sg::plan::rank_sampled_grasps(params, mesh, setup, cfg.value("n", 100), o, seed,
                                           cfg.value("group_size", 10), cfg.value("batch", 5));
  json summary = {{"n", rep.grasps.size()}, {"argmin", rep.argmin}, {"q_min", rep.q_pred[rep.argmin]}};
  if (cfg.value("oracle", false)) {
    const auto d = sg::train::dataset_config_from_json(cfg.value("dataset", json::object()));
    sg::plan::attach_oracle(rep, mesh, {mesh.elastic_modulus(), d.poisson_ratio}, setup, o);
    summary["threshold_overlap"] = sg::plan::threshold_overlap(rep, std::min(30, static_cast<int>(rep.grasps.size())));
    summary["tau_q"] = sg::plan::kendall_tau(rep.q_pred, rep.q_true);
  }
  if (cfg.contains("output_csv")) write_text(cfg["output_csv"].get<std::string>(), sg::plan::rank_to_csv(rep));
  if (cfg.contains("grasps_output")) {
    auto pick = [&](const std::vector<int>& ids) {
      std::vector<sg::grasp::GraspPose> g;
      for (int i : ids) g.push_back(rep.grasps[static_cast<size_t>(i)]);
      return g;
    };
    write_text(cfg["grasps_output"].get<std::string>(), sg::grasp::grasps_to_json(mesh.id(), pick(rep.low)));
  }
  summary["threshold_low"] = rep.low;
  summary["threshold_high"] = rep.high;
  summary["random"] = rep.random;
  return summary;
}

json cmd_refine(const json& cfg, std::uint64_t seed) {
  const auto mesh = load_object(cfg.at("object"));
  const auto params = sg::nn::load_checkpoint(need_string(cfg, "checkpoint"));
  const auto setup = setup_from(cfg);
  std::optional<sg::train::Dataset> data;
  if (cfg.contains("dataset_path")) data = sg::train::read_dataset(cfg["dataset_path"].get<std::string>());
  const auto o = objective_from(cfg, data ? &*data : nullptr);
  auto rcfg = sg::plan::refinement_config_from_json(cfg.value("refine", json::object()));
  const auto [object_id, grasps] = sg::grasp::grasps_from_json(sg::io::read_file(need_string(cfg, "grasps")));
  const bool oracle = cfg.value("oracle", false);
  const auto d = sg::train::dataset_config_from_json(cfg.value("dataset", json::object()));
  const sg::fem::Material mat{mesh.elastic_modulus(), d.poisson_ratio};

  json results = json::array();
  std::vector<sg::grasp::GraspPose> refined;
  for (size_t i = 0; i < grasps.size(); ++i) {
    rcfg.seed = seed + i;
    const auto r = sg::plan::refine_grasp(params, mesh, setup, grasps[i].T, o, rcfg);
    refined.push_back(r.best);
    json row = {{"index", i},
                {"q_initial", r.initial_q},
                {"q_best", r.best_q},
                {"q_trace", r.q_trace},
                {"accepted", r.accepted},
                {"rejected", r.rejected},
                {"stopped_early", r.stopped_early}};
    if (oracle) {
      row["q_oracle_initial"] = sg::plan::oracle_q(mesh, mat, setup, grasps[i].T, o).q;
      row["q_oracle_best"] = sg::plan::oracle_q(mesh, mat, setup, r.best.T, o).q;
    }
    results.push_back(row);
  }
  if (cfg.contains("output")) write_text(cfg["output"].get<std::string>(), sg::grasp::grasps_to_json(object_id, refined));
  return {{"object_id", object_id}, {"objective", sg::plan::to_json(o)}, {"results", results}};
}

json cmd_fem_solve(const json& cfg, std::uint64_t) {
  const auto mesh = load_object(cfg.at("object"));
  const auto setup = setup_from(cfg);
  const auto d = sg::train::dataset_config_from_json(cfg.value("dataset", json::object()));
  const sg::fem::Material mat{mesh.elastic_modulus(), d.poisson_ratio};
  const auto [object_id, grasps] = sg::grasp::grasps_from_json(sg::io::read_file(need_string(cfg, "grasps")));
  const int substeps = cfg.value("substeps", 1);

  std::string csv = "grasp,substep,F_g,vertex,stress_pa,dx_m,dy_m,dz_m\n";
  json solves = json::array();
  char buf[256];
  for (size_t g = 0; g < grasps.size(); ++g) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto f = sg::plan::freeze(mesh, setup, grasps[g].T);
    const auto traj = sg::fem::run_grasp_trajectory(mesh, mat, f.contacts, grasps[g].F_g, substeps);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (size_t k = 0; k < traj.size(); ++k)
      for (size_t v = 0; v < traj[k].stress.size(); ++v) {
        const auto& u = traj[k].displacement[v];
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%zu,%.9e,%.9e,%.9e,%.9e\n", g, k + 1, traj[k].force_level, v,
                      traj[k].stress[v], u.x(), u.y(), u.z());
        csv += buf;
      }
    const auto& last = traj.back();
    double smax = 0.0, dmean = 0.0;
    for (size_t v = 0; v < last.stress.size(); ++v) {
      smax = std::max(smax, last.stress[v]);
      dmean += last.displacement[v].norm() / static_cast<double>(last.stress.size());
    }
    solves.push_back({{"grasp", g}, {"contacts", f.contacts.pairs.size()}, {"max_stress_pa", smax},
                      {"mean_deformation_m", dmean}, {"seconds", secs}});
  }
  if (cfg.contains("output_csv")) write_text(cfg["output_csv"].get<std::string>(), csv);
  return {{"object_id", object_id}, {"vertices", mesh.vertex_count()}, {"solves", solves}};
}

json cmd_report(const json& cfg, std::uint64_t seed) {
  const auto res = sg::plan::full_experiment(cfg, seed);
  const std::string dir = need_string(cfg, "output_dir");
  std::filesystem::create_directories(dir);
  write_text(dir + "/summary.json", res.summary.dump(2) + "\n");
  write_text(dir + "/generalization.csv", res.table_csv);
  if (!res.boxplot_csv.empty()) write_text(dir + "/boxplot.csv", res.boxplot_csv);
  if (!res.rank_csv.empty()) write_text(dir + "/rank.csv", res.rank_csv);
  return res.summary;
}

void fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
  std::exit(code);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable-object grasp simulation, surrogate training and planning"};
  app.require_subcommand(1);
  std::string config_path;
  std::uint64_t seed = 0;
  using Handler = json (*)(const json&, std::uint64_t);
  const std::vector<std::tuple<const char*, const char*, Handler>> commands = {
      {"gen-data", "Generate an oracle dataset", cmd_gen_data},
      {"train", "Train a surrogate", cmd_train},
      {"eval", "Kendall tau and MAE on a split", cmd_eval},
      {"rank", "Rank sampled grasps by predicted Q", cmd_rank},
      {"refine", "Gradient-refine grasps", cmd_refine},
      {"fem-solve", "Run the FEM oracle on grasps", cmd_fem_solve},
      {"report", "End-to-end experiment with tables and box-plot data", cmd_report}};
  std::map<CLI::App*, Handler> handlers;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON configuration file")->required();
    sub->add_option("--seed", seed, "Random seed")->required();
    handlers[sub] = fn;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what(), 2);
  }
  try {
    const json cfg = read_json(config_path);
    for (auto* sub : app.get_subcommands()) std::cout << handlers.at(sub)(cfg, seed).dump(2) << "\n";
  } catch (const sg::Error& e) {
    fail(e.kind(), e.what(), 1);
  } catch (const json::exception& e) {
    fail("parse_error", e.what(), 1);
  } catch (const std::exception& e) {
    fail("internal_error", e.what(), 1);
  }
  return 0;
}
