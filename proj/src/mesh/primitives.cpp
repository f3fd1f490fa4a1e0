#include <cmath>
#include <numbers>
#include <sstream>

#include "softgrasp/error.hpp"
#include "softgrasp/mesh.hpp"

namespace softgrasp::mesh {

namespace {

// Parametric lattice with optional periodic second axis (annulus theta).
struct Lattice {
  int nx, ny, nz;
  bool periodic_y = false;

  int points_y() const { return periodic_y ? ny : ny + 1; }
  int index(int i, int j, int k) const {
    if (periodic_y) j %= ny;
    return (k * points_y() + j) * (nx + 1) + i;
  }
  int point_count() const { return (nx + 1) * points_y() * (nz + 1); }
};

// Six tets per cell, each following one monotone path from corner 000 to 111.
std::vector<Tet> kuhn_tets(const Lattice& lat) {
  static constexpr int kPerms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  std::vector<Tet> tets;
  tets.reserve(static_cast<size_t>(lat.nx) * lat.ny * lat.nz * 6);
  for (int k = 0; k < lat.nz; ++k)
    for (int j = 0; j < lat.ny; ++j)
      for (int i = 0; i < lat.nx; ++i)
        for (const auto& perm : kPerms) {
          int c[3] = {i, j, k};
          Tet t{};
          t[0] = lat.index(c[0], c[1], c[2]);
          for (int s = 0; s < 3; ++s) {
            ++c[perm[s]];
            t[s + 1] = lat.index(c[0], c[1], c[2]);
          }
          tets.push_back(t);
        }
  return tets;
}

int cells_for(double extent, double h, int minimum) {
  return std::max(minimum, static_cast<int>(std::lround(extent / h)));
}

double param(int i, int n) { return -1.0 + 2.0 * static_cast<double>(i) / n; }

std::string default_id(PrimitiveKind kind, const Vec3& dims, int resolution) {
  std::ostringstream ss;
  ss << to_string(kind) << "_" << dims.x() << "x" << dims.y() << "x" << dims.z() << "_r" << resolution;
  return ss.str();
}

}  // namespace

PrimitiveKind parse_primitive_kind(const std::string& name) {
  if (name == "cuboid") return PrimitiveKind::cuboid;
  if (name == "cylinder") return PrimitiveKind::cylinder;
  if (name == "ellipsoid") return PrimitiveKind::ellipsoid;
  if (name == "annulus") return PrimitiveKind::annulus;
  throw Error("invalid_argument", "unknown primitive kind '" + name + "'");
}

std::string to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::cuboid: return "cuboid";
    case PrimitiveKind::cylinder: return "cylinder";
    case PrimitiveKind::ellipsoid: return "ellipsoid";
    case PrimitiveKind::annulus: return "annulus";
  }
  return "unknown";
}

TetMesh generate_primitive(PrimitiveKind kind, const Vec3& dims, int resolution,
                           double elastic_modulus, std::string id) {
  if (!(dims.array() > 0.0).all()) throw Error("invalid_argument", "primitive dims must be positive");
  if (resolution < 2) throw Error("invalid_argument", "resolution must be >= 2");
  if (id.empty()) id = default_id(kind, dims, resolution);

  std::vector<Vec3> verts;
  std::vector<Tet> tets;

  switch (kind) {
    case PrimitiveKind::cuboid: {
      const double h = dims.maxCoeff() / resolution;
      Lattice lat{cells_for(dims.x(), h, 1), cells_for(dims.y(), h, 1), cells_for(dims.z(), h, 1)};
      verts.resize(lat.point_count());
      for (int k = 0; k <= lat.nz; ++k)
        for (int j = 0; j <= lat.ny; ++j)
          for (int i = 0; i <= lat.nx; ++i)
            verts[lat.index(i, j, k)] = 0.5 * Vec3(param(i, lat.nx) * dims.x(), param(j, lat.ny) * dims.y(),
                                                   param(k, lat.nz) * dims.z());
      tets = kuhn_tets(lat);
      break;
    }
    case PrimitiveKind::ellipsoid: {
      // Cube-to-ball map; the cube boundary lands exactly on the unit sphere.
      const Vec3 ext = 2.0 * dims;
      const double h = ext.maxCoeff() / resolution;
      Lattice lat{cells_for(ext.x(), h, 2), cells_for(ext.y(), h, 2), cells_for(ext.z(), h, 2)};
      verts.resize(lat.point_count());
      for (int k = 0; k <= lat.nz; ++k)
        for (int j = 0; j <= lat.ny; ++j)
          for (int i = 0; i <= lat.nx; ++i) {
            const double x = param(i, lat.nx), y = param(j, lat.ny), z = param(k, lat.nz);
            const double x2 = x * x, y2 = y * y, z2 = z * z;
            const Vec3 s(x * std::sqrt(1 - y2 / 2 - z2 / 2 + y2 * z2 / 3),
                         y * std::sqrt(1 - z2 / 2 - x2 / 2 + z2 * x2 / 3),
                         z * std::sqrt(1 - x2 / 2 - y2 / 2 + x2 * y2 / 3));
            verts[lat.index(i, j, k)] = s.cwiseProduct(dims);
          }
      tets = kuhn_tets(lat);
      break;
    }
    case PrimitiveKind::cylinder: {
      const Vec3 ext(2.0 * dims.x(), 2.0 * dims.y(), dims.z());
      const double h = ext.maxCoeff() / resolution;
      Lattice lat{cells_for(ext.x(), h, 2), cells_for(ext.y(), h, 2), cells_for(ext.z(), h, 1)};
      verts.resize(lat.point_count());
      for (int k = 0; k <= lat.nz; ++k)
        for (int j = 0; j <= lat.ny; ++j)
          for (int i = 0; i <= lat.nx; ++i) {
            const double x = param(i, lat.nx), y = param(j, lat.ny), z = param(k, lat.nz);
            verts[lat.index(i, j, k)] = Vec3(dims.x() * x * std::sqrt(1 - y * y / 2),
                                             dims.y() * y * std::sqrt(1 - x * x / 2), 0.5 * dims.z() * z);
          }
      tets = kuhn_tets(lat);
      break;
    }
    case PrimitiveKind::annulus: {
      const double r_in = dims.x(), r_out = dims.y(), height = dims.z();
      if (r_in >= r_out)
        throw Error("unmeshable", "annulus inner radius must be smaller than outer radius");
      const double h = std::max(2.0 * r_out, height) / resolution;
      const double r_mid = 0.5 * (r_in + r_out);
      Lattice lat{cells_for(r_out - r_in, h, 1), cells_for(2.0 * std::numbers::pi * r_mid, h, 8),
                  cells_for(height, h, 1), true};
      verts.resize(lat.point_count());
      for (int k = 0; k <= lat.nz; ++k)
        for (int j = 0; j < lat.ny; ++j)
          for (int i = 0; i <= lat.nx; ++i) {
            const double r = r_in + (r_out - r_in) * i / lat.nx;
            const double th = 2.0 * std::numbers::pi * j / lat.ny;
            verts[lat.index(i, j, k)] = Vec3(r * std::cos(th), r * std::sin(th), 0.5 * height * param(k, lat.nz));
          }
      tets = kuhn_tets(lat);
      break;
    }
  }

  std::ostringstream dim_str;
  dim_str.precision(17);
  dim_str << dims.x() << "," << dims.y() << "," << dims.z();
  std::map<std::string, std::string> meta{{"generator", "lattice"},
                                          {"pattern", "kuhn6"},
                                          {"kind", to_string(kind)},
                                          {"dims", dim_str.str()},
                                          {"resolution", std::to_string(resolution)}};
  return TetMesh::create(std::move(id), elastic_modulus, std::move(verts), std::move(tets), std::move(meta));
}

}  // namespace softgrasp::mesh
