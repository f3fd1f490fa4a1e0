#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "softgrasp/fem.hpp"
#include "softgrasp/grasp.hpp"
#include "softgrasp/net.hpp"
#include "softgrasp/trainer.hpp"

namespace softgrasp::plan {

enum class ObjectiveKind { mean_deformation, smooth_max_stress, mean_stress };

struct Objective {
  ObjectiveKind kind = ObjectiveKind::mean_deformation;
  double smooth_max_beta = 1e-4;  // 1/Pa
  bool maximize = false;

  void validate() const;
  double sign() const { return maximize ? -1.0 : 1.0; }
};

nlohmann::json to_json(const Objective& o);
Objective objective_from_json(const nlohmann::json& j);

/// 10 / (95th percentile of the dataset's vertex stresses).
double default_smooth_max_beta(const train::Dataset& d);

/// Q on real-unit fields (object vertices x (stress, dx, dy, dz)).
double reduce_fields(const Objective& o, const graph::TargetFields& fields);
/// Differentiable Q on the model's real-unit output.
nn::Var reduce_fields(nn::Tape& t, nn::Var real, const nn::ModelConfig& c, const Objective& o);

struct GraspSetup {
  grasp::GripperModel gripper;
  double epsilon = grasp::kDefaultContactEpsilon;
  double grasp_force = grasp::kMaxGraspForce;
  int rotations = 4;  // poses per sampled point when ranking
};

/// Closure and contacts at a pose, held fixed while the pose moves.
/// Throws Error{"no_contact"} unless both fingers touch the object.
struct FrozenGrasp {
  grasp::Pose T;
  std::array<double, 2> p_g{0.0, 0.0};
  grasp::ContactAssignment contacts;
};

FrozenGrasp freeze(const mesh::TetMesh& mesh, const GraspSetup& setup, const grasp::Pose& T);

struct QEvaluation {
  double q = 0.0;
  grasp::GraspPose pose;
  graph::TargetFields fields;  // real units, NaN where the model has no output
};

/// Surrogate Q with fresh closure and contacts.
QEvaluation evaluate_q(const nn::ModelParams& p, const mesh::TetMesh& mesh, const GraspSetup& setup,
                       const grasp::Pose& T, const Objective& o);
/// Ground-truth Q from the FEM oracle.
QEvaluation oracle_q(const mesh::TetMesh& mesh, const fem::Material& mat, const GraspSetup& setup,
                     const grasp::Pose& T, const Objective& o);

/// Surrogate Q at T.perturbed(delta) with the frozen closure and contacts.
double frozen_q(const nn::ModelParams& p, const mesh::TetMesh& mesh, const GraspSetup& setup, const FrozenGrasp& f,
                const grasp::Vec6& delta, const Objective& o);

struct PoseGradient {
  double q = 0.0;
  grasp::Vec6 grad = grasp::Vec6::Zero();  // dQ/d(translation, axis-angle) at delta = 0
};

/// Reverse pass through the network, the feature construction and the
/// rigid transform of the gripper vertices and closing directions.
PoseGradient pose_gradient(const nn::ModelParams& p, const mesh::TetMesh& mesh, const GraspSetup& setup,
                           const FrozenGrasp& f, const Objective& o);

// ---------------------------------------------------------------------------
// Ranking

struct RankReport {
  std::vector<grasp::GraspPose> grasps;
  std::vector<double> q_pred;
  std::vector<double> q_true;  // filled by attach_oracle
  int argmin = -1;
  std::vector<int> low, high, random;  // 10 lowest, 10 highest, 10 of the rest
};

/// Samples n antipodal grasps and scores them `batch` at a time on worker
/// threads.
RankReport rank_sampled_grasps(const nn::ModelParams& p, const mesh::TetMesh& mesh, const GraspSetup& setup,
                               int n, const Objective& o, std::uint64_t seed, int group_size = 10, int batch = 5);
void attach_oracle(RankReport& r, const mesh::TetMesh& mesh, const fem::Material& mat, const GraspSetup& setup,
                   const Objective& o);
/// Fraction of the predicted extreme groups that fall in the true extreme
/// `k` (low within true lowest k, high within true highest k).
double threshold_overlap(const RankReport& r, int k = 30);
std::string rank_to_csv(const RankReport& r);

// ---------------------------------------------------------------------------
// Refinement

struct RefinementConfig {
  int steps = 12;
  double shrink = 0.5;
  double armijo = 1e-4;
  double max_vertex_motion = 0.005;  // m, linearised, first probe
  int max_backtracks = 12;
  double tau0_fraction = 0.05;       // tau0 = fraction * |Q(T_init)|
  double gamma = 0.7;
  int max_rejections = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const RefinementConfig& c);
RefinementConfig refinement_config_from_json(const nlohmann::json& j);

struct RefinementResult {
  grasp::GraspPose initial, best;
  double initial_q = 0.0, best_q = 0.0;
  std::vector<double> q_trace;  // Q after each accepted step, starting with Q(T_init)
  int accepted = 0, rejected = 0;
  bool stopped_early = false;
};

RefinementResult refine_grasp(const nn::ModelParams& p, const mesh::TetMesh& mesh, const GraspSetup& setup,
                              const grasp::Pose& T_init, const Objective& o, const RefinementConfig& cfg);

// ---------------------------------------------------------------------------
// Metrics

/// Kendall tau-b in O(n log n). Throws Error{"undefined_tau"} when either
/// list is constant, Error{"shape_mismatch"} on length mismatch or n < 2.
double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

struct Mae {
  double stress_kpa = 0.0;
  double deformation_mm = 0.0;  // mean Euclidean norm of the displacement error
};

/// Over all vertices of all samples. NaN channels yield NaN.
Mae mae(const std::vector<graph::TargetFields>& pred, const std::vector<graph::TargetFields>& truth);

struct EvalRow {
  int record = 0;
  std::string object_id;
  int grasp_index = 0;
  int substep = 0;
  double F_g = 0.0;
  double stress_true = 0.0, stress_pred = 0.0;  // mean over vertices
  double def_true = 0.0, def_pred = 0.0;        // mean |d| over vertices
};

struct EvalReport {
  double tau_s = 0.0, tau_d = 0.0;                // mean of per-force-level taus
  double tau_s_pooled = 0.0, tau_d_pooled = 0.0;  // all samples ranked together
  int levels = 0;
  Mae error;
  std::vector<EvalRow> rows;
};

EvalReport evaluate(const nn::ModelParams& p, const train::Dataset& d, const std::vector<int>& indices);
std::string eval_rows_to_csv(const EvalReport& r);

// ---------------------------------------------------------------------------
// End-to-end experiment

struct ExperimentResult {
  nlohmann::json summary;
  std::string table_csv;    // tau / MAE per test object
  std::string boxplot_csv;  // oracle Q per group
  std::string rank_csv;
};

/// Generates data, splits by generalisation level, trains, evaluates, ranks
/// and refines. See README for the configuration schema.
ExperimentResult full_experiment(const nlohmann::json& config, std::uint64_t seed);

}  // namespace softgrasp::plan
