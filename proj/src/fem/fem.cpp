#include "softgrasp/fem.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "softgrasp/error.hpp"
#include "softgrasp/grasp.hpp"

namespace softgrasp::fem {

void Material::validate() const {
  if (!(elastic_modulus > 0.0) || !std::isfinite(elastic_modulus))
    throw Error("invalid_material", "elastic modulus must be positive");
  if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5))
    throw Error("invalid_material", "poisson ratio must lie in [0, 0.5)");
}

Eigen::Matrix<double, 6, 6> Material::constitutive() const {
  const double E = elastic_modulus, nu = poisson_ratio;
  const double lambda = E * nu / ((1 + nu) * (1 - 2 * nu));
  const double mu = E / (2 * (1 + nu));
  Eigen::Matrix<double, 6, 6> D = Eigen::Matrix<double, 6, 6>::Zero();
  D.topLeftCorner<3, 3>().setConstant(lambda);
  D.topLeftCorner<3, 3>().diagonal().array() += 2 * mu;
  D.bottomRightCorner<3, 3>().diagonal().setConstant(mu);
  return D;
}

Vec3 ContactLoad::net_force() const {
  Vec3 f = Vec3::Zero();
  for (const auto& [v, force] : node_forces) f += force;
  return f;
}

Vec3 ContactLoad::net_torque(const mesh::TetMesh& mesh, const Vec3& about) const {
  Vec3 tau = Vec3::Zero();
  for (const auto& [v, f] : node_forces) tau += (mesh.vertices()[v] - about).cross(f);
  return tau;
}

void balance(ContactLoad& load, const mesh::TetMesh& mesh) {
  if (load.node_forces.empty()) return;
  const double n = static_cast<double>(load.node_forces.size());
  const Vec3 mean_force = load.net_force() / n;
  Vec3 c = Vec3::Zero();
  for (auto& [v, f] : load.node_forces) {
    f -= mean_force;
    c += mesh.vertices()[v];
  }
  c /= n;
  const Vec3 tau = load.net_torque(mesh, c);
  Mat3 J = Mat3::Zero();
  for (const auto& [v, f] : load.node_forces) {
    const Vec3 r = mesh.vertices()[v] - c;
    J += r.squaredNorm() * Mat3::Identity() - r * r.transpose();
  }
  Eigen::CompleteOrthogonalDecomposition<Mat3> cod(J);
  cod.setThreshold(1e-12);
  const Vec3 omega = cod.solve(-tau);
  for (auto& [v, f] : load.node_forces) f += omega.cross(mesh.vertices()[v] - c);
}

ContactLoad make_contact_load(const mesh::TetMesh& mesh, const grasp::ContactAssignment& contact,
                              double grasp_force) {
  if (!contact.both_fingers()) throw Error("invalid_contact", "contact load needs loaded nodes on both fingers");
  ContactLoad load;
  load.total_force = grasp_force;
  for (int f = 0; f < 2; ++f) {
    const auto& nodes = contact.per_finger_object_nodes[f];
    const Vec3 per_node = (0.5 * grasp_force / static_cast<double>(nodes.size())) * contact.closing_dirs[f];
    for (int v : nodes) {
      auto [it, inserted] = load.node_forces.try_emplace(v, Vec3::Zero());
      it->second += per_node;
    }
  }
  balance(load, mesh);
  return load;
}

FieldOutput FieldOutput::scaled(double factor, double new_force_level) const {
  FieldOutput out;
  out.force_level = new_force_level;
  out.stress.resize(stress.size());
  out.displacement.resize(displacement.size());
  out.deformation_mag.resize(deformation_mag.size());
  for (size_t i = 0; i < stress.size(); ++i) out.stress[i] = factor * stress[i];
  for (size_t i = 0; i < displacement.size(); ++i) {
    out.displacement[i] = factor * displacement[i];
    out.deformation_mag[i] = out.displacement[i].norm();
  }
  return out;
}

// ---------------------------------------------------------------------------

Eigen::Matrix<double, 6, 12> strain_displacement(const mesh::TetMesh& mesh, int t, double* volume) {
  const auto& tet = mesh.tets()[t];
  const auto& X = mesh.vertices();
  Mat3 edges;
  edges.col(0) = X[tet[1]] - X[tet[0]];
  edges.col(1) = X[tet[2]] - X[tet[0]];
  edges.col(2) = X[tet[3]] - X[tet[0]];
  const double vol = edges.determinant() / 6.0;
  if (!(vol > mesh::kMinTetVolume)) throw Error("degenerate_tet", "element " + std::to_string(t) + " has no volume");
  if (volume) *volume = vol;
  const Mat3 inv = edges.inverse();
  // Shape-function gradients: rows of inv for nodes 1..3, node 0 closes the sum.
  Eigen::Matrix<double, 4, 3> grads;
  grads.bottomRows<3>() = inv;
  grads.row(0) = -inv.colwise().sum();

  Eigen::Matrix<double, 6, 12> B = Eigen::Matrix<double, 6, 12>::Zero();
  for (int a = 0; a < 4; ++a) {
    const double gx = grads(a, 0), gy = grads(a, 1), gz = grads(a, 2);
    const int c = 3 * a;
    B(0, c) = gx;
    B(1, c + 1) = gy;
    B(2, c + 2) = gz;
    B(3, c) = gy;
    B(3, c + 1) = gx;
    B(4, c + 1) = gz;
    B(4, c + 2) = gy;
    B(5, c) = gz;
    B(5, c + 2) = gx;
  }
  return B;
}

Eigen::SparseMatrix<double> assemble_stiffness(const mesh::TetMesh& mesh, const Material& mat) {
  mat.validate();
  const auto D = mat.constitutive();
  const int ndof = 3 * mesh.vertex_count();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(mesh.tet_count()) * 144);
  for (int t = 0; t < mesh.tet_count(); ++t) {
    double vol = 0.0;
    const auto B = strain_displacement(mesh, t, &vol);
    const Eigen::Matrix<double, 12, 12> Ke = vol * B.transpose() * D * B;
    const auto& tet = mesh.tets()[t];
    for (int a = 0; a < 4; ++a)
      for (int i = 0; i < 3; ++i)
        for (int b = 0; b < 4; ++b)
          for (int j = 0; j < 3; ++j) trips.emplace_back(3 * tet[a] + i, 3 * tet[b] + j, Ke(3 * a + i, 3 * b + j));
  }
  Eigen::SparseMatrix<double> K(ndof, ndof);
  K.setFromTriplets(trips.begin(), trips.end());
  return K;
}

Eigen::MatrixXd rigid_body_modes(const mesh::TetMesh& mesh) {
  const int n = mesh.vertex_count();
  const Vec3 c = mesh.centroid();
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(3 * n, 6);
  for (int v = 0; v < n; ++v) {
    const Vec3 r = mesh.vertices()[v] - c;
    for (int d = 0; d < 3; ++d) Q(3 * v + d, d) = 1.0;
    for (int d = 0; d < 3; ++d) Q.block<3, 1>(3 * v, 3 + d) = Vec3::Unit(d).cross(r);
  }
  // Modified Gram-Schmidt.
  for (int k = 0; k < 6; ++k) {
    for (int j = 0; j < k; ++j) Q.col(k) -= Q.col(j).dot(Q.col(k)) * Q.col(j);
    const double nrm = Q.col(k).norm();
    if (!(nrm > 0.0)) throw Error("invalid_mesh", "rigid modes are degenerate");
    Q.col(k) /= nrm;
  }
  return Q;
}

namespace {

void project_out(const Eigen::MatrixXd& Q, Eigen::VectorXd& v) { v.noalias() -= Q * (Q.transpose() * v); }

}  // namespace

Eigen::VectorXd solve_displacement(const Eigen::SparseMatrix<double>& K, const Eigen::MatrixXd& rigid_modes,
                                   const Eigen::VectorXd& f_in, const SolverOptions& opts, SolveStats* stats) {
  const Eigen::Index ndof = K.rows();
  Eigen::VectorXd f = f_in;
  project_out(rigid_modes, f);
  const double fnorm = f.norm();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(ndof);
  if (stats) *stats = {};
  if (fnorm == 0.0) return x;

  const Eigen::VectorXd inv_diag = K.diagonal().cwiseInverse();
  const int max_it = opts.max_iterations > 0 ? opts.max_iterations : static_cast<int>(10 * (ndof / 3));

  Eigen::VectorXd r = f;
  Eigen::VectorXd z = inv_diag.cwiseProduct(r);
  project_out(rigid_modes, z);
  Eigen::VectorXd p = z;
  Eigen::VectorXd Ap(ndof);
  double rz = r.dot(z);
  double rel = 1.0;
  int it = 0;
  for (; it < max_it; ++it) {
    Ap.noalias() = K * p;
    const double alpha = rz / p.dot(Ap);
    x += alpha * p;
    r -= alpha * Ap;
    rel = r.norm() / fnorm;
    if (rel <= opts.tolerance) {
      ++it;
      break;
    }
    z = inv_diag.cwiseProduct(r);
    project_out(rigid_modes, z);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  if (stats) *stats = {it, rel};
  if (!(rel <= opts.tolerance))
    throw Error("cg_not_converged", "CG stopped after " + std::to_string(it) +
                                        " iterations at relative residual " + std::to_string(rel));
  project_out(rigid_modes, x);
  return x;
}

std::vector<SymTensor> element_stresses(const mesh::TetMesh& mesh, const Material& mat,
                                        const Eigen::VectorXd& u) {
  const auto D = mat.constitutive();
  std::vector<SymTensor> out(mesh.tet_count());
  for (int t = 0; t < mesh.tet_count(); ++t) {
    const auto B = strain_displacement(mesh, t);
    const auto& tet = mesh.tets()[t];
    Eigen::Matrix<double, 12, 1> ue;
    for (int a = 0; a < 4; ++a) ue.segment<3>(3 * a) = u.segment<3>(3 * tet[a]);
    const Eigen::Matrix<double, 6, 1> s = D * (B * ue);
    out[t] << s[0], s[3], s[5],  //
        s[3], s[1], s[4],        //
        s[5], s[4], s[2];
  }
  return out;
}

std::vector<SymTensor> vertex_average_stress(const mesh::TetMesh& mesh, const std::vector<SymTensor>& element_tensors) {
  if (static_cast<int>(element_tensors.size()) != mesh.tet_count())
    throw Error("invalid_argument", "need one stress tensor per tet");
  std::vector<SymTensor> sum(mesh.vertex_count(), SymTensor::Zero());
  std::vector<int> count(mesh.vertex_count(), 0);
  for (int t = 0; t < mesh.tet_count(); ++t)
    for (int v : mesh.tets()[t]) {
      sum[v] += element_tensors[t];
      ++count[v];
    }
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    if (count[v] == 0) throw Error("isolated_vertex", "vertex " + std::to_string(v) + " has no incident tet");
    sum[v] /= static_cast<double>(count[v]);
  }
  return sum;
}

double von_mises(const SymTensor& s) {
  const double a = s(0, 0) - s(1, 1), b = s(1, 1) - s(2, 2), c = s(2, 2) - s(0, 0);
  const double shear = s(0, 1) * s(0, 1) + s(0, 2) * s(0, 2) + s(1, 2) * s(1, 2);
  return std::sqrt(0.5 * (a * a + b * b + c * c) + 3.0 * shear);
}

FieldOutput solve_equilibrium(const mesh::TetMesh& mesh, const Material& mat, const ContactLoad& load,
                              const SolverOptions& opts, SolveStats* stats) {
  const int n = mesh.vertex_count();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(3 * n);
  for (const auto& [v, force] : load.node_forces) {
    if (v < 0 || v >= n) throw Error("index_error", "load on vertex " + std::to_string(v) + " out of range");
    f.segment<3>(3 * v) += force;
  }

  FieldOutput out;
  out.force_level = load.total_force;
  out.stress.assign(n, 0.0);
  out.displacement.assign(n, Vec3::Zero());
  out.deformation_mag.assign(n, 0.0);
  if (f.isZero(0.0)) {
    mat.validate();
    if (stats) *stats = {};
    return out;
  }

  const auto K = assemble_stiffness(mesh, mat);
  const auto modes = rigid_body_modes(mesh);
  const Eigen::VectorXd u = solve_displacement(K, modes, f, opts, stats);
  const auto vtx = vertex_average_stress(mesh, element_stresses(mesh, mat, u));
  for (int v = 0; v < n; ++v) {
    out.displacement[v] = u.segment<3>(3 * v);
    out.deformation_mag[v] = out.displacement[v].norm();
    out.stress[v] = von_mises(vtx[v]);
  }
  return out;
}

std::vector<FieldOutput> run_grasp_trajectory(const mesh::TetMesh& mesh, const Material& mat,
                                              const grasp::ContactAssignment& contact, double f_max, int substeps,
                                              const SolverOptions& opts) {
  if (substeps < 1) throw Error("invalid_argument", "substeps must be >= 1");
  if (!(f_max > 0.0)) throw Error("invalid_argument", "f_max must be positive");
  const FieldOutput full = solve_equilibrium(mesh, mat, make_contact_load(mesh, contact, f_max), opts);
  std::vector<FieldOutput> steps;
  steps.reserve(substeps);
  for (int k = 1; k <= substeps; ++k) {
    const double factor = static_cast<double>(k) / substeps;
    steps.push_back(full.scaled(factor, k * f_max / substeps));
  }
  return steps;
}

}  // namespace softgrasp::fem
