#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sppfem/anisotropy.hpp"

namespace sppfem {

using Triangle = std::array<int, 3>;

/// Closed, oriented triangulation. Triangles list their vertices
/// counterclockwise seen from outside; indices are 0-based.
///
/// The constructor validates: every undirected edge is shared by exactly two
/// triangles with opposite directions, no triangle has |J| <= 1e-14 and the
/// signed enclosed volume is positive.
class SurfaceMesh {
 public:
  SurfaceMesh(std::vector<Vec3> vertices, std::vector<Triangle> triangles);

  /// Same connectivity, new vertex positions (validated for degeneracy and
  /// orientation only; topology is inherited).
  SurfaceMesh with_vertices(std::vector<Vec3> vertices) const;

  /// Skips all validation; for intermediate states in tests and tools.
  static SurfaceMesh unchecked(std::vector<Vec3> vertices, std::vector<Triangle> triangles);

  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t triangle_count() const { return triangles_.size(); }
  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const Vec3& vertex(int i) const { return vertices_[i]; }
  const Triangle& triangle(int j) const { return triangles_[j]; }

  /// Number of undirected edges.
  std::size_t edge_count() const;

 private:
  SurfaceMesh() = default;
  std::vector<Vec3> vertices_;
  std::vector<Triangle> triangles_;
};

/// J = (q2 - q1) x (q3 - q2) for three points.
inline Vec3 orientation_vector(const Vec3& q1, const Vec3& q2, const Vec3& q3) {
  return (q2 - q1).cross(q3 - q2);
}

/// Orientation vector of triangle j; throws ErrorKind::Geometry if |J| <= 1e-14.
Vec3 orientation_vector(const SurfaceMesh& mesh, int j);
double triangle_area(const SurfaceMesh& mesh, int j);
Vec3 triangle_normal(const SurfaceMesh& mesh, int j);

/// Discrete surface gradient of a P1 scalar field on triangle j:
/// (f1 (q2 - q3) + f2 (q3 - q1) + f3 (q1 - q2)) x n / |J|.
Vec3 surface_gradient(const SurfaceMesh& mesh, std::span<const double> f, int j);
/// Row-wise gradient of a vector field: row l is grad_S F_l.
Mat3 surface_gradient(const SurfaceMesh& mesh, std::span<const Vec3> F, int j);

/// Gradients of the three hat functions of triangle j (same formula).
std::array<Vec3, 3> hat_gradients(const Vec3& q1, const Vec3& q2, const Vec3& q3);

/// Mass-lumped inner product (f, g) = 1/3 sum_j |sigma_j| sum_i f(q_ji) g(q_ji).
double lumped_inner(const SurfaceMesh& mesh, std::span<const double> f, std::span<const double> g);
double lumped_inner(const SurfaceMesh& mesh, std::span<const Vec3> f, std::span<const Vec3> g);

/// V = 1/9 sum_j |sigma_j| sum_i q_ji . n_j
double enclosed_volume(const SurfaceMesh& mesh);
/// Centroid of the enclosed region (divergence theorem, exact for polyhedra).
Vec3 enclosed_centroid(const SurfaceMesh& mesh);
/// W = sum_j |sigma_j| gamma(n_j)
double surface_energy(const SurfaceMesh& mesh, const AnisotropyModel& model);
double surface_area(const SurfaceMesh& mesh);

/// Smallest triangle quality 4 sqrt(3) A / (sum of squared edges); 1 for equilateral.
double min_triangle_quality(const SurfaceMesh& mesh);
double max_edge_length(const SurfaceMesh& mesh);

/// Axis-aligned a x b x c box centered at the origin; each face is a
/// structured grid of cells no larger than h, split into two triangles.
SurfaceMesh make_cuboid(double a, double b, double c, double h);

/// Icosahedron refined 1-to-4 with projection until the scaled maximum edge
/// is <= h, then mapped by diag(a/2, b/2, c/2).
SurfaceMesh make_ellipsoid(double a, double b, double c, double h);

/// Sphere of given radius centered at the origin (icosahedral).
SurfaceMesh make_sphere(double radius, double h);

/// Midpoint 1-to-4 subdivision without projection.
SurfaceMesh refine_midpoint(const SurfaceMesh& mesh);

/// Applies x -> R x + t to all vertices.
SurfaceMesh transformed(const SurfaceMesh& mesh, const Mat3& R, const Vec3& t);

// I/O ------------------------------------------------------------------------

void write_obj(std::ostream& os, const SurfaceMesh& mesh);
void write_obj(const std::string& path, const SurfaceMesh& mesh);
/// Reads "v" and "f" records (polygon faces with more than three vertices are
/// rejected). Validates closedness and flips every triangle if the signed
/// volume is negative.
SurfaceMesh read_obj(std::istream& is);
SurfaceMesh read_obj(const std::string& path);

/// Legacy VTK ASCII polydata; cell data gamma(n_j), optional point data mu.
void write_vtk(std::ostream& os, const SurfaceMesh& mesh, const AnisotropyModel& model,
               std::span<const double> mu = {});
void write_vtk(const std::string& path, const SurfaceMesh& mesh, const AnisotropyModel& model,
               std::span<const double> mu = {});

}  // namespace sppfem
