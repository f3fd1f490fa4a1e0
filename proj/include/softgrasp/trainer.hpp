#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "softgrasp/fem.hpp"
#include "softgrasp/graph.hpp"
#include "softgrasp/grasp.hpp"
#include "softgrasp/net.hpp"

namespace softgrasp::train {

inline constexpr const char* kOracleVersion = "linear-tet4-cg/1";

/// A procedurally generated object.
struct ObjectSpec {
  std::string id;
  mesh::PrimitiveKind kind = mesh::PrimitiveKind::cuboid;
  Vec3 dims{0.06, 0.04, 0.03};
  int resolution = 6;
  double elastic_modulus = 1e5;

  mesh::TetMesh build() const;
};

nlohmann::json to_json(const ObjectSpec& s);
ObjectSpec object_spec_from_json(const nlohmann::json& j);

struct DatasetConfig {
  int grasps_per_object = 30;
  int rotations = 4;
  int substeps = 10;
  double f_max = grasp::kMaxGraspForce;
  double poisson_ratio = 0.3;
  double epsilon = grasp::kDefaultContactEpsilon;
  grasp::GripperModel gripper;
  std::uint64_t seed = 0;
};

/// One (object, grasp, substep) training example.
struct DatasetRecord {
  std::string object_id;
  int grasp_index = 0;  // within the object
  grasp::GraspPose grasp;
  double F_g = 0.0;
  int substep = 1;      // 1..substeps
  int substeps = 1;
  graph::MultiGraph graph;      // raw features at F_g
  graph::TargetFields target;   // object vertices x (stress Pa, dx, dy, dz m)
  double elastic_modulus = 0.0;
  double poisson_ratio = 0.3;
  std::uint64_t seed = 0;
  std::string oracle_version = kOracleVersion;
};

struct Dataset {
  std::vector<DatasetRecord> records;
};

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

/// objects x grasps x substeps records. Contacts are found once per grasp at
/// initial contact and shared by its substeps. Deterministic in the seed.
Dataset generate_dataset(const std::vector<mesh::TetMesh>& objects, const DatasetConfig& cfg);

nlohmann::json to_json(const DatasetRecord& r);
DatasetRecord record_from_json(const nlohmann::json& j);
/// JSON lines, one record per line; gzip when the path ends in ".gz".
void write_dataset(const Dataset& d, const std::string& path);
Dataset read_dataset(const std::string& path);

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<int> train, test;
};

/// Throws Error{"invalid_split"} on overlap, duplicates or out-of-range ids.
void validate_split(const Split& s, int record_count);
/// Grasp-level split: all substeps of a grasp land on the same side.
Split split_by_grasp(const Dataset& d, double train_fraction, std::uint64_t seed);
/// Records whose object id is listed go to test.
Split split_by_object(const Dataset& d, const std::vector<std::string>& test_objects);
/// Records whose modulus is listed (relative match 1e-9) go to test.
Split split_by_modulus(const Dataset& d, const std::vector<double>& test_moduli);

nlohmann::json to_json(const Split& s);
Split split_from_json(const nlohmann::json& j);
void write_split(const Split& s, const std::string& path);
Split read_split(const std::string& path);

// ---------------------------------------------------------------------------
// Training

struct Ablation {
  nn::Outputs outputs = nn::Outputs::both;          // V1
  bool multi_step = false;                           // V2
  graph::ForceValue force_value = graph::ForceValue::distributed;          // V3
  graph::ForceLocation force_location = graph::ForceLocation::contact_edges;  // V4
};

struct TrainConfig {
  double lr_start = 5e-5;
  double lr_end = 1e-6;
  int epochs = 25;
  int batch_size = 1;
  Ablation ablation;
  nn::ModelConfig model;  // output and force fields are overridden by `ablation`
  std::uint64_t seed = 0;
  /// Stop once the training loss, re-evaluated with the current parameters,
  /// is at most this fraction of the initial training loss (0 disables).
  double stop_loss_ratio = 0.0;

  void validate() const;
  nn::ModelConfig resolved_model() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Geometric interpolation lr_start -> lr_end over steps 0..total-1.
double learning_rate(const TrainConfig& c, long step, long total_steps);

/// Sum of the stress and displacement MSE on z-scored targets. `pred` and
/// `target` hold the model's output channels for object nodes.
nn::Var compute_loss(nn::Tape& tape, nn::Var pred, const Matrix& target, nn::Outputs outputs);
double compute_loss(const Matrix& pred, const Matrix& target, nn::Outputs outputs);

/// Model-ready example: ablations applied, normalised graph and target.
struct PreparedSample {
  graph::MultiGraph graph;
  Matrix target;  // object nodes x output_dim, z-scored
};

/// Raw (unnormalised) inputs and targets for the model's conventions.
/// Multi-step models see the graph deformed by the previous substep's ground
/// truth and predict the increment to the current one.
struct RawSample {
  graph::MultiGraph graph;
  graph::TargetFields target;  // all 4 channels
};
std::vector<RawSample> raw_samples(const Dataset& d, const std::vector<int>& indices, const nn::ModelConfig& model);

std::vector<PreparedSample> prepare_samples(const std::vector<RawSample>& raw, const nn::ModelParams& p);

double mean_loss(const nn::ModelParams& p, const std::vector<PreparedSample>& samples);

struct LogRow {
  int epoch;
  long step;
  double lr;
  double loss;
};

struct TrainResult {
  nn::ModelParams params;
  double initial_loss = 0.0;            // mean over the training set at init
  double final_loss = 0.0;              // mean over the training set at the end
  std::vector<double> epoch_loss;       // running mean of step losses
  std::vector<LogRow> log;
  long steps = 0;
};

using ProgressFn = std::function<void(int epoch, double epoch_loss)>;

/// Adam (0.9, 0.999, 1e-8), batch gradients averaged, one fixed shuffle per
/// epoch drawn from the seed. Throws Error{"non_finite_loss"} with the step.
TrainResult train(const Dataset& d, const std::vector<int>& train_indices, const TrainConfig& cfg,
                  const ProgressFn& progress = {});

std::string log_to_csv(const std::vector<LogRow>& log);

/// Model outputs widened to (stress, dx, dy, dz), NaN where not predicted.
graph::TargetFields expand_outputs(const Matrix& pred, const nn::ModelConfig& c);

/// Predicted fields (object nodes x 4 in Pa and m; missing channels NaN) for
/// each record. Multi-step models roll out over each grasp's substeps, so
/// every substep 1..k of a requested grasp must be present in `d`.
std::vector<graph::TargetFields> predict_records(const nn::ModelParams& p, const Dataset& d,
                                                 const std::vector<int>& indices);

}  // namespace softgrasp::train
