#include "softgrasp/mesh.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "softgrasp/error.hpp"
#include "softgrasp/io.hpp"

namespace softgrasp::mesh {

namespace {

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

struct FaceRecord {
  std::array<int, 3> key;  // sorted vertex ids
  Tri oriented;            // outward winding w.r.t. the owning tet
  int order;               // 4 * tet + local face
};

// Outward faces of a positively oriented tet (a, b, c, d).
std::array<Tri, 4> outward_faces(const Tet& t) {
  return {Tri{t[1], t[2], t[3]}, Tri{t[0], t[3], t[2]}, Tri{t[0], t[1], t[3]},
          Tri{t[0], t[2], t[1]}};
}

}  // namespace

TetMesh TetMesh::create(std::string id, double elastic_modulus, std::vector<Vec3> vertices,
                        std::vector<Tet> tets, std::map<std::string, std::string> metadata) {
  if (vertices.empty() || tets.empty()) throw Error("invalid_mesh", "mesh needs vertices and tets");
  if (!(elastic_modulus > 0.0) || !std::isfinite(elastic_modulus))
    throw Error("invalid_mesh", "elastic modulus must be positive");
  const int n = static_cast<int>(vertices.size());
  for (const auto& v : vertices)
    if (!v.allFinite()) throw Error("invalid_mesh", "non-finite vertex coordinate");

  for (size_t t = 0; t < tets.size(); ++t) {
    auto& tet = tets[t];
    for (int k = 0; k < 4; ++k) {
      if (tet[k] < 0 || tet[k] >= n)
        throw Error("index_error", "tet " + std::to_string(t) + " references vertex " +
                                       std::to_string(tet[k]) + " of " + std::to_string(n));
    }
    double vol = signed_volume(vertices[tet[0]], vertices[tet[1]], vertices[tet[2]], vertices[tet[3]]);
    if (std::abs(vol) < kMinTetVolume)
      throw Error("degenerate_tet", "tet " + std::to_string(t) + " has volume " + std::to_string(vol));
    if (vol < 0) std::swap(tet[2], tet[3]);
  }

  std::vector<FaceRecord> faces;
  faces.reserve(tets.size() * 4);
  for (size_t t = 0; t < tets.size(); ++t) {
    const auto of = outward_faces(tets[t]);
    for (int f = 0; f < 4; ++f) {
      std::array<int, 3> key = of[f];
      std::sort(key.begin(), key.end());
      faces.push_back({key, of[f], static_cast<int>(4 * t + f)});
    }
  }
  std::sort(faces.begin(), faces.end(), [](const FaceRecord& a, const FaceRecord& b) {
    return a.key != b.key ? a.key < b.key : a.order < b.order;
  });

  std::vector<const FaceRecord*> boundary;
  for (size_t i = 0; i < faces.size();) {
    size_t j = i;
    while (j < faces.size() && faces[j].key == faces[i].key) ++j;
    if (j - i == 1) {
      boundary.push_back(&faces[i]);
    } else if (j - i > 2) {
      throw Error("invalid_mesh", "face shared by more than two tets");
    }
    i = j;
  }
  std::sort(boundary.begin(), boundary.end(),
            [](const FaceRecord* a, const FaceRecord* b) { return a->order < b->order; });

  TetMesh m;
  m.id_ = std::move(id);
  m.elastic_modulus_ = elastic_modulus;
  m.vertices_ = std::move(vertices);
  m.tets_ = std::move(tets);
  m.metadata_ = std::move(metadata);
  m.surface_flags_.assign(n, 0);
  m.surface_tris_.reserve(boundary.size());
  for (const auto* f : boundary) {
    m.surface_tris_.push_back(f->oriented);
    for (int v : f->oriented) m.surface_flags_[v] = 1;
  }
  return m;
}

double TetMesh::tet_volume(int t) const {
  const auto& tet = tets_[t];
  return signed_volume(vertices_[tet[0]], vertices_[tet[1]], vertices_[tet[2]], vertices_[tet[3]]);
}

double TetMesh::volume() const {
  double v = 0.0;
  for (int t = 0; t < tet_count(); ++t) v += tet_volume(t);
  return v;
}

Vec3 TetMesh::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const auto& v : vertices_) c += v;
  return c / static_cast<double>(vertices_.size());
}

TetMesh TetMesh::with_modulus(std::string id, double elastic_modulus) const {
  if (!(elastic_modulus > 0.0)) throw Error("invalid_mesh", "elastic modulus must be positive");
  TetMesh m = *this;
  m.id_ = std::move(id);
  m.elastic_modulus_ = elastic_modulus;
  return m;
}

void TriMesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (size_t t = 0; t < tris.size(); ++t) {
    for (int v : tris[t])
      if (v < 0 || v >= n) throw Error("index_error", "triangle " + std::to_string(t) + " index out of range");
    const Vec3 cr = (vertices[tris[t][1]] - vertices[tris[t][0]])
                        .cross(vertices[tris[t][2]] - vertices[tris[t][0]]);
    if (cr.norm() <= 0.0) throw Error("degenerate_triangle", "triangle " + std::to_string(t) + " has zero area");
  }
}

double TriMesh::area() const {
  double a = 0.0;
  for (const auto& t : tris)
    a += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
  return a;
}

// ---------------------------------------------------------------------------

TetMesh parse_mesh_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse_error", std::string("mesh JSON: ") + e.what());
  }
  try {
    std::vector<Vec3> verts;
    for (const auto& v : j.at("vertices")) {
      if (v.size() != 3) throw Error("parse_error", "vertex must have 3 coordinates");
      verts.emplace_back(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
    }
    std::vector<Tet> tets;
    for (const auto& t : j.at("tets")) {
      if (t.size() != 4) throw Error("parse_error", "tet must have 4 indices");
      tets.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>(), t[3].get<int>()});
    }
    std::map<std::string, std::string> meta;
    if (j.contains("metadata")) meta = j["metadata"].get<std::map<std::string, std::string>>();
    return TetMesh::create(j.value("id", std::string{}), j.at("elastic_modulus_pa").get<double>(),
                           std::move(verts), std::move(tets), std::move(meta));
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse_error", std::string("mesh JSON: ") + e.what());
  }
}

std::string mesh_to_json(const TetMesh& mesh) {
  nlohmann::json j;
  j["id"] = mesh.id();
  j["elastic_modulus_pa"] = mesh.elastic_modulus();
  auto& verts = j["vertices"] = nlohmann::json::array();
  for (const auto& v : mesh.vertices()) verts.push_back({v.x(), v.y(), v.z()});
  auto& tets = j["tets"] = nlohmann::json::array();
  for (const auto& t : mesh.tets()) tets.push_back({t[0], t[1], t[2], t[3]});
  if (!mesh.metadata().empty()) j["metadata"] = mesh.metadata();
  return j.dump();
}

TetMesh load_mesh(const std::string& path) { return parse_mesh_json(io::read_file(path)); }

void save_mesh(const TetMesh& mesh, const std::string& path) { io::write_file(path, mesh_to_json(mesh)); }

// ---------------------------------------------------------------------------

std::vector<int> extract_surface(const TetMesh& mesh) {
  std::vector<int> out;
  for (int v = 0; v < mesh.vertex_count(); ++v)
    if (mesh.is_surface_vertex(v)) out.push_back(v);
  return out;
}

std::vector<int> interior_vertices(const TetMesh& mesh) {
  std::vector<int> out;
  for (int v = 0; v < mesh.vertex_count(); ++v)
    if (!mesh.is_surface_vertex(v)) out.push_back(v);
  return out;
}

std::vector<std::array<int, 2>> unique_edges(const TetMesh& mesh) {
  std::vector<std::array<int, 2>> edges;
  edges.reserve(mesh.tets().size() * 6);
  for (const auto& t : mesh.tets()) {
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) edges.push_back({std::min(t[a], t[b]), std::max(t[a], t[b])});
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

TriMesh surface_mesh(const TetMesh& mesh) { return TriMesh{mesh.vertices(), mesh.surface_tris()}; }

Vec3 triangle_normal(const Vec3& a, const Vec3& b, const Vec3& c) {
  return (b - a).cross(c - a).normalized();
}

}  // namespace softgrasp::mesh
