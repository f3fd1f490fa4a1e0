#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace softgrasp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

namespace mesh {

using Tet = std::array<int, 4>;
using Tri = std::array<int, 3>;

// Tets smaller than this are treated as degenerate.
inline constexpr double kMinTetVolume = 1e-12;

/// Volumetric object mesh. Immutable once created: tets are re-oriented to
/// positive volume and the outward boundary surface is extracted up front.
class TetMesh {
 public:
  /// Validates indices and volumes, canonicalizes orientation and extracts
  /// the surface. Throws Error{"index_error"|"degenerate_tet"|"invalid_mesh"}.
  static TetMesh create(std::string id, double elastic_modulus,
                        std::vector<Vec3> vertices, std::vector<Tet> tets,
                        std::map<std::string, std::string> metadata = {});

  const std::string& id() const { return id_; }
  double elastic_modulus() const { return elastic_modulus_; }
  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Tet>& tets() const { return tets_; }
  const std::vector<Tri>& surface_tris() const { return surface_tris_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  int vertex_count() const { return static_cast<int>(vertices_.size()); }
  int tet_count() const { return static_cast<int>(tets_.size()); }

  /// True for vertices incident to at least one surface triangle.
  bool is_surface_vertex(int v) const { return surface_flags_[v] != 0; }

  double tet_volume(int t) const;
  double volume() const;
  Vec3 centroid() const;  // vertex mean

  /// Same geometry and topology with a different modulus and id.
  TetMesh with_modulus(std::string id, double elastic_modulus) const;

 private:
  TetMesh() = default;

  std::string id_;
  double elastic_modulus_ = 0.0;
  std::vector<Vec3> vertices_;
  std::vector<Tet> tets_;
  std::vector<Tri> surface_tris_;
  std::vector<std::uint8_t> surface_flags_;
  std::map<std::string, std::string> metadata_;
};

/// Triangle surface mesh (gripper pads, extracted object surfaces).
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Tri> tris;

  /// Throws Error{"index_error"|"degenerate_triangle"}.
  void validate() const;
  double area() const;
};

// ---------------------------------------------------------------------------
// I/O

TetMesh parse_mesh_json(const std::string& text);
std::string mesh_to_json(const TetMesh& mesh);
TetMesh load_mesh(const std::string& path);
void save_mesh(const TetMesh& mesh, const std::string& path);

// ---------------------------------------------------------------------------
// Topology and geometry

/// Indices of vertices touching the boundary surface, ascending.
std::vector<int> extract_surface(const TetMesh& mesh);

/// Complement of extract_surface, ascending.
std::vector<int> interior_vertices(const TetMesh& mesh);

/// Unique undirected tet edges (i < j), sorted lexicographically.
std::vector<std::array<int, 2>> unique_edges(const TetMesh& mesh);

/// Boundary surface as a standalone triangle mesh (shares vertex indexing).
TriMesh surface_mesh(const TetMesh& mesh);

Vec3 triangle_normal(const Vec3& a, const Vec3& b, const Vec3& c);  // unit

enum class PrimitiveKind { cuboid, cylinder, ellipsoid, annulus };

PrimitiveKind parse_primitive_kind(const std::string& name);
std::string to_string(PrimitiveKind kind);

/// Structured lattice mesh of a primitive centred at the origin.
///   cuboid:    dims = full extents (x, y, z)
///   cylinder:  dims = (semi-axis x, semi-axis y, height), axis along z
///   ellipsoid: dims = semi-axes (x, y, z)
///   annulus:   dims = (inner radius, outer radius, height), axis along z
/// `resolution` is the cell count along the longest extent; every hex cell is
/// split into 6 tets sharing its main diagonal.
TetMesh generate_primitive(PrimitiveKind kind, const Vec3& dims, int resolution,
                           double elastic_modulus = 1e5, std::string id = {});

// ---------------------------------------------------------------------------
// Distances and ray queries

/// Area-weighted uniform samples on a triangle surface.
std::vector<Vec3> sample_surface(const TriMesh& surface, int samples, std::uint64_t seed);

/// Symmetric point-sampled Chamfer distance in millimetres:
/// ( mean_a min_b |a-b| + mean_b min_a |b-a| ) / 2.
double chamfer_distance(const TriMesh& a, const TriMesh& b, int samples = 2048,
                        std::uint64_t seed = 0);

struct RayHit {
  Vec3 point;
  int triangle = -1;
  double t = 0.0;
};

inline constexpr double kRayMinT = 1e-9;

/// Moller-Trumbore, two-sided. Returns the ray parameter of a hit or nullopt.
std::optional<double> intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a,
                                         const Vec3& b, const Vec3& c);

/// Bounding-volume hierarchy over the surface triangles of a mesh. Queries
/// return the nearest hit with t > kRayMinT, ties broken by triangle index.
class SurfaceBvh {
 public:
  explicit SurfaceBvh(const TetMesh& mesh);
  explicit SurfaceBvh(TriMesh surface);

  std::optional<RayHit> raycast(const Vec3& origin, const Vec3& dir) const;
  const TriMesh& surface() const { return surface_; }

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1, right = -1;  // children, or -1 for leaves
    int begin = 0, end = 0;     // range into order_ for leaves
  };

  void build();
  int build_node(int begin, int end, std::vector<Vec3>& centroids);

  TriMesh surface_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

std::optional<RayHit> raycast(const TetMesh& mesh, const Vec3& origin, const Vec3& dir);

}  // namespace mesh
}  // namespace softgrasp
