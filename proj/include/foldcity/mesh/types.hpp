#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace foldcity {

using Point3 = Eigen::Vector3d;
using Point2 = Eigen::Vector2d;
using Triangle = std::array<std::uint32_t, 3>;

/// Indexed triangle mesh in metres.
struct TriangleMesh {
  std::vector<Point3> vertices;
  std::vector<Triangle> triangles;

  bool empty() const { return triangles.empty(); }
};

/// Fixed-size point sample of one building.
struct PointCloud {
  std::vector<Point3> points;
  std::string source_id;

  std::size_t size() const { return points.size(); }
};

double triangle_area(const Point3& a, const Point3& b, const Point3& c);

/// Sum of triangle areas.
double surface_area(const TriangleMesh& mesh);

/// Signed enclosed volume (positive for outward-oriented closed meshes).
double signed_volume(const TriangleMesh& mesh);

/// Throws DataError if an index is out of range or a coordinate is non-finite.
void validate_mesh(const TriangleMesh& mesh);

}  // namespace foldcity
