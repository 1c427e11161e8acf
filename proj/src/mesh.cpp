#include "sppfem/mesh.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace sppfem {

namespace {

constexpr double kDegenerateJ = 1e-14;

std::uint64_t edge_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

double signed_volume(const std::vector<Vec3>& q, const std::vector<Triangle>& tris) {
  double s = 0.0;
  for (const auto& t : tris) {
    const Vec3 J = orientation_vector(q[t[0]], q[t[1]], q[t[2]]);
    s += (q[t[0]] + q[t[1]] + q[t[2]]).dot(J);
  }
  return s / 18.0;
}

void check_degeneracy(const std::vector<Vec3>& q, const std::vector<Triangle>& tris) {
  for (std::size_t j = 0; j < tris.size(); ++j) {
    const auto& t = tris[j];
    double len = orientation_vector(q[t[0]], q[t[1]], q[t[2]]).norm();
    if (!(len > kDegenerateJ))
      throw Error(ErrorKind::Geometry, fmt::format("triangle {} is degenerate (|J| = {:.3g})", j, len));
  }
}

void check_topology(std::size_t nv, const std::vector<Triangle>& tris) {
  std::unordered_map<std::uint64_t, int> directed;
  directed.reserve(tris.size() * 3);
  for (std::size_t j = 0; j < tris.size(); ++j) {
    const auto& t = tris[j];
    for (int a = 0; a < 3; ++a) {
      if (t[a] < 0 || static_cast<std::size_t>(t[a]) >= nv)
        throw Error(ErrorKind::Topology, fmt::format("triangle {} references vertex {} out of range", j, t[a]));
    }
    if (t[0] == t[1] || t[1] == t[2] || t[2] == t[0])
      throw Error(ErrorKind::Topology, fmt::format("triangle {} repeats a vertex", j));
    for (int a = 0; a < 3; ++a) {
      auto [it, inserted] = directed.emplace(edge_key(t[a], t[(a + 1) % 3]), static_cast<int>(j));
      if (!inserted)
        throw Error(ErrorKind::Topology,
                    fmt::format("edge ({}, {}) used twice in the same direction (triangles {} and {}): "
                                "non-manifold or inconsistently oriented",
                                t[a], t[(a + 1) % 3], it->second, j));
    }
  }
  for (const auto& [key, j] : directed) {
    int a = static_cast<int>(key >> 32), b = static_cast<int>(key & 0xffffffffu);
    if (!directed.count(edge_key(b, a)))
      throw Error(ErrorKind::Topology, fmt::format("boundary edge ({}, {}) in triangle {}: mesh is not closed", a, b, j));
  }
}

}  // namespace

SurfaceMesh::SurfaceMesh(std::vector<Vec3> vertices, std::vector<Triangle> triangles)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
  if (triangles_.empty()) throw Error(ErrorKind::Topology, "mesh has no triangles");
  check_topology(vertices_.size(), triangles_);
  check_degeneracy(vertices_, triangles_);
  if (!(signed_volume(vertices_, triangles_) > 0.0))
    throw Error(ErrorKind::Topology, "mesh is inward oriented (signed volume <= 0)");
}

SurfaceMesh SurfaceMesh::with_vertices(std::vector<Vec3> vertices) const {
  if (vertices.size() != vertices_.size())
    throw Error(ErrorKind::Input, "vertex count mismatch");
  check_degeneracy(vertices, triangles_);
  SurfaceMesh m;
  m.vertices_ = std::move(vertices);
  m.triangles_ = triangles_;
  return m;
}

SurfaceMesh SurfaceMesh::unchecked(std::vector<Vec3> vertices, std::vector<Triangle> triangles) {
  SurfaceMesh m;
  m.vertices_ = std::move(vertices);
  m.triangles_ = std::move(triangles);
  return m;
}

std::size_t SurfaceMesh::edge_count() const {
  std::unordered_map<std::uint64_t, int> edges;
  for (const auto& t : triangles_)
    for (int a = 0; a < 3; ++a) {
      int u = t[a], v = t[(a + 1) % 3];
      edges.emplace(edge_key(std::min(u, v), std::max(u, v)), 0);
    }
  return edges.size();
}

Vec3 orientation_vector(const SurfaceMesh& mesh, int j) {
  const auto& t = mesh.triangle(j);
  Vec3 J = orientation_vector(mesh.vertex(t[0]), mesh.vertex(t[1]), mesh.vertex(t[2]));
  if (!(J.norm() > kDegenerateJ))
    throw Error(ErrorKind::Geometry, fmt::format("triangle {} is degenerate", j));
  return J;
}

double triangle_area(const SurfaceMesh& mesh, int j) { return 0.5 * orientation_vector(mesh, j).norm(); }

Vec3 triangle_normal(const SurfaceMesh& mesh, int j) { return orientation_vector(mesh, j).normalized(); }

std::array<Vec3, 3> hat_gradients(const Vec3& q1, const Vec3& q2, const Vec3& q3) {
  Vec3 J = orientation_vector(q1, q2, q3);
  double len2 = J.squaredNorm();
  if (!(std::sqrt(len2) > kDegenerateJ)) throw Error(ErrorKind::Geometry, "degenerate triangle");
  Vec3 w = J / len2;  // n / |J|
  return {(q2 - q3).cross(w), (q3 - q1).cross(w), (q1 - q2).cross(w)};
}

Vec3 surface_gradient(const SurfaceMesh& mesh, std::span<const double> f, int j) {
  if (f.size() != mesh.vertex_count()) throw Error(ErrorKind::Input, "field size mismatch");
  const auto& t = mesh.triangle(j);
  const Vec3 &q1 = mesh.vertex(t[0]), &q2 = mesh.vertex(t[1]), &q3 = mesh.vertex(t[2]);
  Vec3 J = orientation_vector(mesh, j);
  Vec3 s = f[t[0]] * (q2 - q3) + f[t[1]] * (q3 - q1) + f[t[2]] * (q1 - q2);
  return s.cross(J / J.squaredNorm());
}

Mat3 surface_gradient(const SurfaceMesh& mesh, std::span<const Vec3> F, int j) {
  if (F.size() != mesh.vertex_count()) throw Error(ErrorKind::Input, "field size mismatch");
  const auto& t = mesh.triangle(j);
  auto g = hat_gradients(mesh.vertex(t[0]), mesh.vertex(t[1]), mesh.vertex(t[2]));
  Mat3 G = Mat3::Zero();
  for (int a = 0; a < 3; ++a) G += F[t[a]] * g[a].transpose();
  return G;
}

double lumped_inner(const SurfaceMesh& mesh, std::span<const double> f, std::span<const double> g) {
  if (f.size() != mesh.vertex_count() || g.size() != mesh.vertex_count())
    throw Error(ErrorKind::Input, "field size mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < mesh.triangle_count(); ++j) {
    const auto& t = mesh.triangle(j);
    double area = triangle_area(mesh, static_cast<int>(j));
    double local = 0.0;
    for (int a = 0; a < 3; ++a) local += f[t[a]] * g[t[a]];
    s += area * local;
  }
  return s / 3.0;
}

double lumped_inner(const SurfaceMesh& mesh, std::span<const Vec3> f, std::span<const Vec3> g) {
  if (f.size() != mesh.vertex_count() || g.size() != mesh.vertex_count())
    throw Error(ErrorKind::Input, "field size mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < mesh.triangle_count(); ++j) {
    const auto& t = mesh.triangle(j);
    double area = triangle_area(mesh, static_cast<int>(j));
    double local = 0.0;
    for (int a = 0; a < 3; ++a) local += f[t[a]].dot(g[t[a]]);
    s += area * local;
  }
  return s / 3.0;
}

double enclosed_volume(const SurfaceMesh& mesh) {
  double s = 0.0;
  for (std::size_t j = 0; j < mesh.triangle_count(); ++j) {
    const auto& t = mesh.triangle(j);
    Vec3 J = orientation_vector(mesh, static_cast<int>(j));
    double area = 0.5 * J.norm();
    Vec3 n = J / J.norm();
    double local = 0.0;
    for (int a = 0; a < 3; ++a) local += mesh.vertex(t[a]).dot(n);
    s += area * local;
  }
  return s / 9.0;
}

Vec3 enclosed_centroid(const SurfaceMesh& mesh) {
  Vec3 m = Vec3::Zero();
  double v = 0.0;
  for (const auto& t : mesh.triangles()) {
    const Vec3 &a = mesh.vertex(t[0]), &b = mesh.vertex(t[1]), &c = mesh.vertex(t[2]);
    double tet = a.dot(b.cross(c)) / 6.0;
    v += tet;
    m += tet * (a + b + c) / 4.0;
  }
  return m / v;
}

double surface_energy(const SurfaceMesh& mesh, const AnisotropyModel& model) {
  double s = 0.0;
  for (std::size_t j = 0; j < mesh.triangle_count(); ++j) {
    Vec3 J = orientation_vector(mesh, static_cast<int>(j));
    double len = J.norm();
    s += 0.5 * len * model.gamma(J / len);
  }
  return s;
}

double surface_area(const SurfaceMesh& mesh) {
  double s = 0.0;
  for (std::size_t j = 0; j < mesh.triangle_count(); ++j) s += triangle_area(mesh, static_cast<int>(j));
  return s;
}

double min_triangle_quality(const SurfaceMesh& mesh) {
  double q = std::numeric_limits<double>::infinity();
  for (const auto& t : mesh.triangles()) {
    const Vec3 &a = mesh.vertex(t[0]), &b = mesh.vertex(t[1]), &c = mesh.vertex(t[2]);
    double area = 0.5 * orientation_vector(a, b, c).norm();
    double e2 = (b - a).squaredNorm() + (c - b).squaredNorm() + (a - c).squaredNorm();
    q = std::min(q, 4.0 * std::sqrt(3.0) * area / e2);
  }
  return q;
}

double max_edge_length(const SurfaceMesh& mesh) {
  double m = 0.0;
  for (const auto& t : mesh.triangles())
    for (int a = 0; a < 3; ++a) m = std::max(m, (mesh.vertex(t[a]) - mesh.vertex(t[(a + 1) % 3])).norm());
  return m;
}

// Generators -------------------------------------------------------------------

SurfaceMesh make_cuboid(double a, double b, double c, double h) {
  if (!(a > 0 && b > 0 && c > 0 && h > 0)) throw Error(ErrorKind::Input, "cuboid dimensions must be positive");
  if (h > std::min({a, b, c}))
    throw Error(ErrorKind::Input, "cuboid mesh size h exceeds the smallest side");
  const std::array<double, 3> len{a, b, c};
  std::array<int, 3> cells;
  for (int d = 0; d < 3; ++d) cells[d] = std::max(1, static_cast<int>(std::ceil(len[d] / h - 1e-9)));

  std::map<std::array<int, 3>, int> index;
  std::vector<Vec3> verts;
  auto vertex = [&](std::array<int, 3> ijk) {
    auto [it, inserted] = index.emplace(ijk, static_cast<int>(verts.size()));
    if (inserted) {
      Vec3 p;
      for (int d = 0; d < 3; ++d) p[d] = -len[d] / 2 + len[d] * ijk[d] / cells[d];
      verts.push_back(p);
    }
    return it->second;
  };

  // (normal axis, side, u axis, v axis) with e_u x e_v pointing outward
  struct Face {
    int axis, side, u, v;
  };
  const Face faces[6] = {{2, 1, 0, 1}, {2, 0, 1, 0}, {0, 1, 1, 2},
                         {0, 0, 2, 1}, {1, 1, 2, 0}, {1, 0, 0, 2}};
  std::vector<Triangle> tris;
  for (const Face& f : faces) {
    for (int p = 0; p < cells[f.u]; ++p)
      for (int q = 0; q < cells[f.v]; ++q) {
        auto at = [&](int dp, int dq) {
          std::array<int, 3> ijk{};
          ijk[f.axis] = f.side ? cells[f.axis] : 0;
          ijk[f.u] = p + dp;
          ijk[f.v] = q + dq;
          return vertex(ijk);
        };
        int v00 = at(0, 0), v10 = at(1, 0), v11 = at(1, 1), v01 = at(0, 1);
        tris.push_back({v00, v10, v11});
        tris.push_back({v00, v11, v01});
      }
  }
  return SurfaceMesh(std::move(verts), std::move(tris));
}

namespace {

struct RawMesh {
  std::vector<Vec3> v;
  std::vector<Triangle> t;
};

RawMesh icosahedron() {
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  RawMesh m;
  m.v = {{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p}, {0, 1, p},
         {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
  for (auto& x : m.v) x.normalize();
  m.t = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
         {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
         {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (auto& t : m.t) {
    Vec3 J = orientation_vector(m.v[t[0]], m.v[t[1]], m.v[t[2]]);
    if ((m.v[t[0]] + m.v[t[1]] + m.v[t[2]]).dot(J) < 0) std::swap(t[1], t[2]);
  }
  return m;
}

RawMesh subdivide(const RawMesh& in, bool project) {
  RawMesh out;
  out.v = in.v;
  std::unordered_map<std::uint64_t, int> mid;
  auto midpoint = [&](int a, int b) {
    std::uint64_t key = edge_key(std::min(a, b), std::max(a, b));
    auto it = mid.find(key);
    if (it != mid.end()) return it->second;
    Vec3 m = 0.5 * (out.v[a] + out.v[b]);
    if (project) m.normalize();
    out.v.push_back(m);
    int idx = static_cast<int>(out.v.size()) - 1;
    mid.emplace(key, idx);
    return idx;
  };
  out.t.reserve(in.t.size() * 4);
  for (const auto& t : in.t) {
    int ab = midpoint(t[0], t[1]), bc = midpoint(t[1], t[2]), ca = midpoint(t[2], t[0]);
    out.t.push_back({t[0], ab, ca});
    out.t.push_back({ab, t[1], bc});
    out.t.push_back({ca, bc, t[2]});
    out.t.push_back({ab, bc, ca});
  }
  return out;
}

double raw_max_edge(const RawMesh& m, const Vec3& scale) {
  double e = 0.0;
  for (const auto& t : m.t)
    for (int a = 0; a < 3; ++a)
      e = std::max(e, (m.v[t[a]] - m.v[t[(a + 1) % 3]]).cwiseProduct(scale).norm());
  return e;
}

}  // namespace

SurfaceMesh make_ellipsoid(double a, double b, double c, double h) {
  if (!(a > 0 && b > 0 && c > 0 && h > 0)) throw Error(ErrorKind::Input, "ellipsoid parameters must be positive");
  const Vec3 scale(a / 2, b / 2, c / 2);
  RawMesh m = icosahedron();
  while (raw_max_edge(m, scale) > h) {
    if (m.t.size() > 20u * (1u << 20)) throw Error(ErrorKind::Input, "ellipsoid mesh size too small");
    m = subdivide(m, true);
  }
  for (auto& v : m.v) v = v.cwiseProduct(scale);
  return SurfaceMesh(std::move(m.v), std::move(m.t));
}

SurfaceMesh make_sphere(double radius, double h) { return make_ellipsoid(2 * radius, 2 * radius, 2 * radius, h); }

SurfaceMesh refine_midpoint(const SurfaceMesh& mesh) {
  RawMesh m{mesh.vertices(), mesh.triangles()};
  RawMesh r = subdivide(m, false);
  return SurfaceMesh(std::move(r.v), std::move(r.t));
}

SurfaceMesh transformed(const SurfaceMesh& mesh, const Mat3& R, const Vec3& t) {
  std::vector<Vec3> v;
  v.reserve(mesh.vertex_count());
  for (const auto& q : mesh.vertices()) v.push_back(R * q + t);
  return SurfaceMesh(std::move(v), mesh.triangles());
}

// I/O --------------------------------------------------------------------------

void write_obj(std::ostream& os, const SurfaceMesh& mesh) {
  for (const auto& q : mesh.vertices()) os << fmt::format("v {:.17g} {:.17g} {:.17g}\n", q.x(), q.y(), q.z());
  for (const auto& t : mesh.triangles()) os << fmt::format("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1);
}

void write_obj(const std::string& path, const SurfaceMesh& mesh) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Input, "cannot write " + path);
  write_obj(os, mesh);
}

SurfaceMesh read_obj(std::istream& is) {
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  std::string line;
  int lineno = 0;
  auto parse_double = [&](std::string_view tok) {
    double v = 0.0;
    auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size())
      throw Error(ErrorKind::Input, fmt::format("obj line {}: bad number '{}'", lineno, tok));
    return v;
  };
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      std::string x, y, z;
      if (!(ls >> x >> y >> z)) throw Error(ErrorKind::Input, fmt::format("obj line {}: short vertex", lineno));
      verts.emplace_back(parse_double(x), parse_double(y), parse_double(z));
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        std::string head = tok.substr(0, tok.find('/'));
        int k = 0;
        auto r = std::from_chars(head.data(), head.data() + head.size(), k);
        if (r.ec != std::errc() || k == 0)
          throw Error(ErrorKind::Input, fmt::format("obj line {}: bad face index '{}'", lineno, tok));
        idx.push_back(k > 0 ? k - 1 : static_cast<int>(verts.size()) + k);
      }
      if (idx.size() != 3)
        throw Error(ErrorKind::Input, fmt::format("obj line {}: only triangular faces are supported", lineno));
      tris.push_back({idx[0], idx[1], idx[2]});
    }
  }
  if (tris.empty()) throw Error(ErrorKind::Topology, "obj contains no faces");
  check_topology(verts.size(), tris);
  if (signed_volume(verts, tris) < 0.0)
    for (auto& t : tris) std::swap(t[1], t[2]);
  return SurfaceMesh(std::move(verts), std::move(tris));
}

SurfaceMesh read_obj(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Input, "cannot read " + path);
  return read_obj(is);
}

void write_vtk(std::ostream& os, const SurfaceMesh& mesh, const AnisotropyModel& model,
               std::span<const double> mu) {
  const std::size_t nv = mesh.vertex_count(), nt = mesh.triangle_count();
  os << "# vtk DataFile Version 3.0\nsppfem surface\nASCII\nDATASET POLYDATA\n";
  os << fmt::format("POINTS {} double\n", nv);
  for (const auto& q : mesh.vertices()) os << fmt::format("{:.17g} {:.17g} {:.17g}\n", q.x(), q.y(), q.z());
  os << fmt::format("POLYGONS {} {}\n", nt, 4 * nt);
  for (const auto& t : mesh.triangles()) os << fmt::format("3 {} {} {}\n", t[0], t[1], t[2]);
  os << fmt::format("CELL_DATA {}\nSCALARS gamma double 1\nLOOKUP_TABLE default\n", nt);
  for (std::size_t j = 0; j < nt; ++j)
    os << fmt::format("{:.17g}\n", model.gamma(triangle_normal(mesh, static_cast<int>(j))));
  if (!mu.empty()) {
    if (mu.size() != nv) throw Error(ErrorKind::Input, "mu size mismatch");
    os << fmt::format("POINT_DATA {}\nSCALARS mu double 1\nLOOKUP_TABLE default\n", nv);
    for (double m : mu) os << fmt::format("{:.17g}\n", m);
  }
}

void write_vtk(const std::string& path, const SurfaceMesh& mesh, const AnisotropyModel& model,
               std::span<const double> mu) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Input, "cannot write " + path);
  write_vtk(os, mesh, model, mu);
}

}  // namespace sppfem
