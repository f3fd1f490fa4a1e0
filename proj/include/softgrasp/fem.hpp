#pragma once

#include <map>
#include <vector>

#include <Eigen/Sparse>

#include "softgrasp/mesh.hpp"

namespace softgrasp {
namespace grasp {
struct ContactAssignment;
}

namespace fem {

/// Isotropic linear-elastic material.
struct Material {
  double elastic_modulus = 1e5;
  double poisson_ratio = 0.3;

  void validate() const;
  /// 6x6 constitutive matrix in Voigt order (xx, yy, zz, xy, yz, zx) with
  /// engineering shear strains.
  Eigen::Matrix<double, 6, 6> constitutive() const;
};

/// Prescribed nodal forces (N). Node order is ascending vertex index.
struct ContactLoad {
  std::map<int, Vec3> node_forces;
  double total_force = 0.0;

  Vec3 net_force() const;
  Vec3 net_torque(const mesh::TetMesh& mesh, const Vec3& about) const;
};

/// Subtracts the resultant force and torque so the load is self-equilibrated.
/// The force correction is spread uniformly over the loaded nodes; the torque
/// correction is the least-squares rotational field about their centroid.
void balance(ContactLoad& load, const mesh::TetMesh& mesh);

/// Each finger's object contact nodes share (F_g / 2) equally along that
/// finger's closing direction; the result is then balanced.
ContactLoad make_contact_load(const mesh::TetMesh& mesh, const grasp::ContactAssignment& contact, double grasp_force);

struct FieldOutput {
  std::vector<double> stress;        // von Mises, Pa
  std::vector<Vec3> displacement;    // m
  std::vector<double> deformation_mag;
  double force_level = 0.0;          // N

  FieldOutput scaled(double factor, double new_force_level) const;
};

using SymTensor = Mat3;

struct SolverOptions {
  int max_iterations = 0;  // 0 means 10 * vertex count
  double tolerance = 1e-8; // relative residual |r| / |f|
};

struct SolveStats {
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Element strain-displacement matrix (6 x 12) and volume of tet `t`.
Eigen::Matrix<double, 6, 12> strain_displacement(const mesh::TetMesh& mesh, int t, double* volume = nullptr);

/// Global stiffness K = sum_e V_e B_e^T D B_e over 3n DOFs (x,y,z per vertex).
Eigen::SparseMatrix<double> assemble_stiffness(const mesh::TetMesh& mesh, const Material& mat);

/// Orthonormal basis (3n x 6) of the rigid-body modes about the vertex centroid.
Eigen::MatrixXd rigid_body_modes(const mesh::TetMesh& mesh);

/// Jacobi-preconditioned CG on K u = f with rigid modes projected out of f,
/// the iterates and the result. Throws Error{"cg_not_converged"}.
Eigen::VectorXd solve_displacement(const Eigen::SparseMatrix<double>& K, const Eigen::MatrixXd& rigid_modes,
                                   const Eigen::VectorXd& f, const SolverOptions& opts, SolveStats* stats = nullptr);

std::vector<SymTensor> element_stresses(const mesh::TetMesh& mesh, const Material& mat,
                                        const Eigen::VectorXd& displacement);

/// Unweighted mean of the incident element tensors at each vertex.
/// Throws Error{"isolated_vertex"}.
std::vector<SymTensor> vertex_average_stress(const mesh::TetMesh& mesh, const std::vector<SymTensor>& element_tensors);

double von_mises(const SymTensor& s);

FieldOutput solve_equilibrium(const mesh::TetMesh& mesh, const Material& mat, const ContactLoad& load,
                              const SolverOptions& opts = {}, SolveStats* stats = nullptr);

/// Fields at F_g = k * f_max / substeps for k = 1..substeps. The oracle is
/// linear, so a single solve at f_max is scaled by k / substeps.
std::vector<FieldOutput> run_grasp_trajectory(const mesh::TetMesh& mesh, const Material& mat,
                                              const grasp::ContactAssignment& contact, double f_max = 15.0,
                                              int substeps = 50, const SolverOptions& opts = {});

}  // namespace fem
}  // namespace softgrasp
