#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Geometry>

#include "softgrasp/mesh.hpp"

namespace softgrasp::grasp {

using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Rigid transform x -> R x + t.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  Mat3 R() const { return rotation.toRotationMatrix(); }
  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  Vec3 apply_inverse(const Vec3& x) const { return rotation.conjugate() * (x - translation); }

  /// Applies an increment (translation m, axis-angle rad) expressed in this
  /// pose's local frame: x -> R (exp(w) x + dt) + t.
  Pose perturbed(const Vec6& delta) const;

  Pose compose(const Pose& inner) const;  // this * inner
};

inline constexpr double kDefaultContactEpsilon = 0.005;
inline constexpr double kMaxGraspForce = 15.0;

/// Two square pads facing each other along local +x, maximally open.
/// Finger 0 sits at x = -w_open/2 and closes towards +x; finger 1 mirrors it.
struct GripperModel {
  double pad_width = 0.02;   // extent along local y
  double pad_height = 0.02;  // extent along local z
  double w_open = 0.08;
  int pad_resolution = 5;    // vertices per pad side

  void validate() const;
  Vec3 closing_axis() const { return Vec3::UnitX(); }
  /// Canonical (open) pad mesh of finger 0 or 1.
  mesh::TriMesh canonical_pad(int finger) const;
  /// Inward closing direction of a finger in the gripper frame.
  Vec3 local_closing_dir(int finger) const { return finger == 0 ? Vec3::UnitX() : Vec3(-Vec3::UnitX()); }
};

struct GraspPose {
  Pose T;
  std::array<double, 2> p_g{0.0, 0.0};
  double F_g = kMaxGraspForce;
};

/// Finger surfaces at a given pose and closure. Vertices of finger 0 come
/// first; `edges` are the unique pad triangle edges in gripper vertex ids.
struct PosedGripper {
  std::vector<Vec3> vertices;        // world frame
  std::vector<Vec3> local_vertices;  // gripper frame, after closure
  std::vector<int> finger;           // finger id per vertex
  std::vector<std::array<int, 2>> edges;
  std::array<Vec3, 2> closing_dirs;        // world, inward
  std::array<Vec3, 2> local_closing_dirs;  // gripper frame
  Pose T;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  /// World-frame finger meshes (for export / visualisation).
  std::array<mesh::TriMesh, 2> finger_meshes(const GripperModel& gripper) const;
};

struct ContactAssignment {
  std::vector<std::pair<int, int>> pairs;  // (gripper vertex, object vertex), sorted
  std::array<std::vector<int>, 2> per_finger_object_nodes;
  std::array<Vec3, 2> closing_dirs{Vec3::UnitX(), Vec3(-Vec3::UnitX())};

  bool both_fingers() const {
    return !per_finger_object_nodes[0].empty() && !per_finger_object_nodes[1].empty();
  }
};

/// Per-finger minimum perpendicular distance from the open pad plane to the
/// object vertices that project inside the pad. Throws Error{"grasp_miss"}
/// when a pad sees no vertex, Error{"object_too_large"} when a vertex lies
/// behind an open pad.
std::array<double, 2> compute_joint_closure(const mesh::TetMesh& mesh, const GripperModel& gripper, const Pose& T);

PosedGripper pose_gripper(const GripperModel& gripper, const Pose& T, const std::array<double, 2>& p_g);

/// All (gripper vertex, object vertex) pairs within epsilon.
/// Throws Error{"no_contact"} when there are none.
ContactAssignment find_contacts(const mesh::TetMesh& mesh, const PosedGripper& gripper,
                                double epsilon = kDefaultContactEpsilon);

struct SampledGrasp {
  GraspPose pose;
  Vec3 contact_point;     // sampled surface point
  Vec3 opposite_point;    // exit point along the grasp axis
  Vec3 surface_normal;    // outward normal at contact_point
};

/// Antipodal sampler: surface point + inward normal ray define the axis;
/// `rotations` poses evenly spaced about it. Invalid candidates (ray miss,
/// too wide, pad miss, single-finger or no contact) are resampled.
/// Throws Error{"sampler_exhausted"} after 100 * n_points failed attempts.
std::vector<SampledGrasp> sample_antipodal_detailed(const mesh::TetMesh& mesh, const GripperModel& gripper,
                                                    int n_points, int rotations, std::uint64_t seed,
                                                    double epsilon = kDefaultContactEpsilon,
                                                    double grasp_force = kMaxGraspForce);

std::vector<GraspPose> sample_antipodal(const mesh::TetMesh& mesh, const GripperModel& gripper, int n_points = 25,
                                        int rotations = 4, std::uint64_t seed = 0,
                                        double epsilon = kDefaultContactEpsilon,
                                        double grasp_force = kMaxGraspForce);

// Grasp list JSON: {"object_id": str, "grasps": [{"T": [qw,qx,qy,qz,tx,ty,tz], "p_g": [a,b], "F_g": f}]}
std::string grasps_to_json(const std::string& object_id, const std::vector<GraspPose>& grasps);
std::pair<std::string, std::vector<GraspPose>> grasps_from_json(const std::string& text);

}  // namespace softgrasp::grasp
