#include "softgrasp/grasp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "softgrasp/error.hpp"
#include "softgrasp/spatial.hpp"

namespace softgrasp::grasp {

namespace {

Eigen::Quaterniond exp_map(const Vec3& w) {
  const double angle = w.norm();
  if (angle == 0.0) return Eigen::Quaterniond::Identity();
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, w / angle));
}

}  // namespace

Pose Pose::perturbed(const Vec6& delta) const {
  Pose out;
  out.rotation = (rotation * exp_map(delta.tail<3>())).normalized();
  out.translation = translation + rotation * delta.head<3>();
  return out;
}

Pose Pose::compose(const Pose& inner) const {
  Pose out;
  out.rotation = (rotation * inner.rotation).normalized();
  out.translation = rotation * inner.translation + translation;
  return out;
}

void GripperModel::validate() const {
  if (!(pad_width > 0 && pad_height > 0 && w_open > 0))
    throw Error("invalid_argument", "gripper dimensions must be positive");
  if (pad_resolution < 2) throw Error("invalid_argument", "pad resolution must be >= 2");
}

mesh::TriMesh GripperModel::canonical_pad(int finger) const {
  validate();
  const int n = pad_resolution;
  const double x = finger == 0 ? -0.5 * w_open : 0.5 * w_open;
  mesh::TriMesh pad;
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      pad.vertices.emplace_back(x, pad_width * (static_cast<double>(j) / (n - 1) - 0.5),
                                pad_height * (static_cast<double>(k) / (n - 1) - 0.5));
  auto id = [n](int j, int k) { return k * n + j; };
  for (int k = 0; k + 1 < n; ++k)
    for (int j = 0; j + 1 < n; ++j) {
      const int a = id(j, k), b = id(j + 1, k), c = id(j + 1, k + 1), d = id(j, k + 1);
      // Finger 0 faces +x, finger 1 faces -x.
      if (finger == 0) {
        pad.tris.push_back({a, b, c});
        pad.tris.push_back({a, c, d});
      } else {
        pad.tris.push_back({a, c, b});
        pad.tris.push_back({a, d, c});
      }
    }
  return pad;
}

std::array<mesh::TriMesh, 2> PosedGripper::finger_meshes(const GripperModel& gripper) const {
  std::array<mesh::TriMesh, 2> out;
  const int per = gripper.pad_resolution * gripper.pad_resolution;
  for (int f = 0; f < 2; ++f) {
    out[f] = gripper.canonical_pad(f);
    for (int i = 0; i < per; ++i) out[f].vertices[i] = vertices[f * per + i];
  }
  return out;
}

std::array<double, 2> compute_joint_closure(const mesh::TetMesh& mesh, const GripperModel& gripper, const Pose& T) {
  gripper.validate();
  const double half_w = 0.5 * gripper.pad_width, half_h = 0.5 * gripper.pad_height, half_open = 0.5 * gripper.w_open;
  std::array<double, 2> closure{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  for (const auto& v : mesh.vertices()) {
    const Vec3 local = T.apply_inverse(v);
    if (std::abs(local.y()) > half_w || std::abs(local.z()) > half_h) continue;
    const double d0 = local.x() + half_open;  // distance in front of finger 0
    const double d1 = half_open - local.x();
    if (d0 < 0.0 || d1 < 0.0) throw Error("object_too_large", "object extends past an open finger pad");
    closure[0] = std::min(closure[0], d0);
    closure[1] = std::min(closure[1], d1);
  }
  if (!std::isfinite(closure[0]) || !std::isfinite(closure[1]))
    throw Error("grasp_miss", "no object vertex projects inside the finger pads");
  return closure;
}

PosedGripper pose_gripper(const GripperModel& gripper, const Pose& T, const std::array<double, 2>& p_g) {
  PosedGripper out;
  out.T = T;
  int offset = 0;
  for (int f = 0; f < 2; ++f) {
    const auto pad = gripper.canonical_pad(f);
    const Vec3 shift = p_g[f] * gripper.local_closing_dir(f);
    for (const auto& v : pad.vertices) {
      out.local_vertices.push_back(v + shift);
      out.vertices.push_back(T.apply(v + shift));
      out.finger.push_back(f);
    }
    std::vector<std::array<int, 2>> edges;
    for (const auto& t : pad.tris)
      for (int e = 0; e < 3; ++e) {
        const int a = t[e], b = t[(e + 1) % 3];
        edges.push_back({offset + std::min(a, b), offset + std::max(a, b)});
      }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    out.edges.insert(out.edges.end(), edges.begin(), edges.end());
    out.local_closing_dirs[f] = gripper.local_closing_dir(f);
    out.closing_dirs[f] = T.rotation * out.local_closing_dirs[f];
    offset += static_cast<int>(pad.vertices.size());
  }
  return out;
}

ContactAssignment find_contacts(const mesh::TetMesh& mesh, const PosedGripper& gripper, double epsilon) {
  if (epsilon < 0.0) throw Error("invalid_argument", "epsilon must be non-negative");
  const PointGrid grid(mesh.vertices(), std::max(epsilon, 1e-4));
  ContactAssignment out;
  out.closing_dirs = gripper.closing_dirs;
  for (int g = 0; g < gripper.vertex_count(); ++g) {
    for (int o : grid.within(gripper.vertices[g], epsilon)) {
      out.pairs.emplace_back(g, o);
      out.per_finger_object_nodes[gripper.finger[g]].push_back(o);
    }
  }
  if (out.pairs.empty()) throw Error("no_contact", "no object vertex within epsilon of the gripper");
  for (auto& nodes : out.per_finger_object_nodes) {
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Deterministic unit vector perpendicular to `a`.
Vec3 base_perpendicular(const Vec3& a) {
  int axis = 0;
  a.cwiseAbs().minCoeff(&axis);
  Vec3 b = Vec3::Unit(axis) - a.dot(Vec3::Unit(axis)) * a;
  return b.normalized();
}

}  // namespace

std::vector<SampledGrasp> sample_antipodal_detailed(const mesh::TetMesh& mesh, const GripperModel& gripper,
                                                    int n_points, int rotations, std::uint64_t seed, double epsilon,
                                                    double grasp_force) {
  if (n_points < 1 || rotations < 1) throw Error("invalid_argument", "n_points and rotations must be >= 1");
  gripper.validate();
  const mesh::SurfaceBvh bvh(mesh);
  const auto& surf = bvh.surface();
  if (surf.tris.empty()) throw Error("empty_surface", "mesh has no surface");

  std::vector<double> cumulative(surf.tris.size());
  double total = 0.0;
  for (size_t t = 0; t < surf.tris.size(); ++t) {
    const auto& tri = surf.tris[t];
    total += 0.5 * (surf.vertices[tri[1]] - surf.vertices[tri[0]]).cross(surf.vertices[tri[2]] - surf.vertices[tri[0]]).norm();
    cumulative[t] = total;
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<SampledGrasp> out;
  out.reserve(static_cast<size_t>(n_points) * rotations);
  const long max_attempts = 100L * n_points;
  long attempts = 0;
  while (static_cast<int>(out.size()) < n_points * rotations) {
    if (attempts++ >= max_attempts)
      throw Error("sampler_exhausted", "could not find " + std::to_string(n_points) + " valid antipodal samples");
    const double pick = uni(rng) * total;
    size_t t = std::min<size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin(),
                                cumulative.size() - 1);
    const double r1 = std::sqrt(uni(rng)), r2 = uni(rng);
    const auto& tri = surf.tris[t];
    const Vec3& A = surf.vertices[tri[0]];
    const Vec3& B = surf.vertices[tri[1]];
    const Vec3& C = surf.vertices[tri[2]];
    const Vec3 p = (1 - r1) * A + r1 * (1 - r2) * B + r1 * r2 * C;
    const Vec3 normal = mesh::triangle_normal(A, B, C);
    const Vec3 axis = -normal;

    const auto hit = bvh.raycast(p, axis);
    if (!hit) continue;
    if (hit->t > gripper.w_open) continue;
    const Vec3 center = 0.5 * (p + hit->point);

    const Vec3 b0 = base_perpendicular(axis);
    std::vector<SampledGrasp> batch;
    bool ok = true;
    for (int r = 0; r < rotations && ok; ++r) {
      const double angle = 2.0 * std::numbers::pi * r / rotations;
      const Vec3 b = Eigen::AngleAxisd(angle, axis) * b0;
      Mat3 R;
      R.col(0) = axis;
      R.col(1) = b;
      R.col(2) = axis.cross(b);
      GraspPose pose;
      pose.T.rotation = Eigen::Quaterniond(R).normalized();
      pose.T.translation = center;
      pose.F_g = grasp_force;
      try {
        pose.p_g = compute_joint_closure(mesh, gripper, pose.T);
        const auto contacts = find_contacts(mesh, pose_gripper(gripper, pose.T, pose.p_g), epsilon);
        if (!contacts.both_fingers()) ok = false;
      } catch (const Error&) {
        ok = false;
      }
      if (ok) batch.push_back({pose, p, hit->point, normal});
    }
    if (!ok) continue;
    out.insert(out.end(), batch.begin(), batch.end());
  }
  return out;
}

std::vector<GraspPose> sample_antipodal(const mesh::TetMesh& mesh, const GripperModel& gripper, int n_points,
                                        int rotations, std::uint64_t seed, double epsilon, double grasp_force) {
  std::vector<GraspPose> out;
  for (auto& s : sample_antipodal_detailed(mesh, gripper, n_points, rotations, seed, epsilon, grasp_force))
    out.push_back(s.pose);
  return out;
}

std::string grasps_to_json(const std::string& object_id, const std::vector<GraspPose>& grasps) {
  nlohmann::json j;
  j["object_id"] = object_id;
  auto& arr = j["grasps"] = nlohmann::json::array();
  for (const auto& g : grasps) {
    const auto& q = g.T.rotation;
    const auto& t = g.T.translation;
    arr.push_back({{"T", {q.w(), q.x(), q.y(), q.z(), t.x(), t.y(), t.z()}},
                   {"p_g", {g.p_g[0], g.p_g[1]}},
                   {"F_g", g.F_g}});
  }
  return j.dump();
}

std::pair<std::string, std::vector<GraspPose>> grasps_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    std::vector<GraspPose> grasps;
    for (const auto& g : j.at("grasps")) {
      const auto& T = g.at("T");
      if (T.size() != 7) throw Error("parse_error", "grasp T must have 7 entries");
      GraspPose p;
      p.T.rotation = Eigen::Quaterniond(T[0].get<double>(), T[1].get<double>(), T[2].get<double>(), T[3].get<double>());
      p.T.translation = Vec3(T[4].get<double>(), T[5].get<double>(), T[6].get<double>());
      if (g.contains("p_g")) p.p_g = {g["p_g"][0].get<double>(), g["p_g"][1].get<double>()};
      p.F_g = g.value("F_g", kMaxGraspForce);
      grasps.push_back(p);
    }
    return {j.value("object_id", std::string{}), std::move(grasps)};
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse_error", std::string("grasp JSON: ") + e.what());
  }
}

}  // namespace softgrasp::grasp
