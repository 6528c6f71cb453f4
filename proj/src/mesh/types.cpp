#include "foldcity/mesh/types.hpp"

#include <Eigen/Geometry>
#include <cmath>

#include "foldcity/error.hpp"

namespace foldcity {

double triangle_area(const Point3& a, const Point3& b, const Point3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

double surface_area(const TriangleMesh& mesh) {
  double total = 0;
  for (const Triangle& t : mesh.triangles) {
    total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
  }
  return total;
}

double signed_volume(const TriangleMesh& mesh) {
  if (mesh.vertices.empty()) return 0;
  // Relative to the first vertex to limit cancellation at projected coordinates.
  const Point3 o = mesh.vertices.front();
  double v = 0;
  for (const Triangle& t : mesh.triangles) {
    const Point3 a = mesh.vertices[t[0]] - o;
    const Point3 b = mesh.vertices[t[1]] - o;
    const Point3 c = mesh.vertices[t[2]] - o;
    v += a.dot(b.cross(c));
  }
  return v / 6.0;
}

void validate_mesh(const TriangleMesh& mesh) {
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    if (!mesh.vertices[i].allFinite()) throw DataError("mesh vertex " + std::to_string(i) + " is not finite");
  }
  const auto n = mesh.vertices.size();
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    for (auto idx : mesh.triangles[i]) {
      if (idx >= n) throw DataError("mesh triangle " + std::to_string(i) + " references vertex " + std::to_string(idx));
    }
  }
}

}  // namespace foldcity
