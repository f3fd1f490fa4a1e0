#pragma once

#include <numeric>
#include <random>

#include "softgrasp/error.hpp"

#include "softgrasp/planner.hpp"

namespace fixtures {

namespace sg = softgrasp;

inline sg::mesh::TetMesh small_box(int resolution = 4, double E = 1e5, const char* id = "box") {
  return sg::mesh::generate_primitive(sg::mesh::PrimitiveKind::cuboid, {0.06, 0.04, 0.03}, resolution, E, id);
}

inline sg::grasp::GripperModel small_gripper() {
  sg::grasp::GripperModel g;
  g.pad_resolution = 3;
  return g;
}

inline sg::nn::ModelConfig tiny_model(int latent = 8, int steps = 2) {
  sg::nn::ModelConfig c;
  c.latent_size = latent;
  c.message_passing_steps = steps;
  c.mlp_hidden_layers = 1;
  c.mlp_hidden_width = latent;
  return c;
}

/// Untrained weights with a non-zero decoder and non-trivial normalisation,
/// so gradients reach every parameter.
inline sg::nn::ModelParams random_model(const sg::nn::ModelConfig& c, std::uint64_t seed) {
  auto p = sg::nn::init_params(c, seed);
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& [name, t] : p.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);
  auto stats = [&](int ch, double scale) {
    sg::graph::ChannelStats s = sg::graph::ChannelStats::identity(ch);
    for (int k = 0; k < ch; ++k) {
      s.mean(k) = scale * n(rng);
      s.std(k) = scale * (0.5 + std::abs(n(rng)));
    }
    return s;
  };
  p.norm.node = stats(c.node_inputs(), 0.01);
  for (int k = 0; k < 3; ++k) p.norm.node.mean(k) = 0.0, p.norm.node.std(k) = 1.0;  // one-hot
  p.norm.mesh_edge = stats(c.edge_inputs(), 0.01);
  p.norm.contact_edge = stats(c.edge_inputs(), 0.01);
  p.norm.target = stats(4, 1e-3);
  p.norm.target.mean(0) = 2e3;  // stress in Pa, displacement in m
  p.norm.target.std(0) = 1e3;
  return p;
}

/// A valid grasp pose on `mesh`.
inline sg::grasp::GraspPose some_grasp(const sg::mesh::TetMesh& mesh, const sg::grasp::GripperModel& g,
                                       std::uint64_t seed) {
  return sg::grasp::sample_antipodal(mesh, g, 1, 1, seed).front();
}

}  // namespace fixtures
