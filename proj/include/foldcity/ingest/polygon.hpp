#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "foldcity/error.hpp"
#include "foldcity/mesh/types.hpp"

namespace foldcity::ingest {

/// Maximum distance (m) of a ring vertex from the least-squares plane.
inline constexpr double kPlaneTolerance = 1e-3;

/// Planar polygon with optional holes. Rings are stored open (no repeated
/// closing vertex).
struct PolygonSurface {
  std::string id;
  std::vector<Point3> exterior;
  std::vector<std::vector<Point3>> interiors;
};

class TriangulationError : public DataError {
 public:
  using DataError::DataError;
};

/// Triangles indexing into `vertices`, which holds the exterior ring followed by
/// each interior ring (consecutive duplicates removed).
struct Triangulation {
  std::vector<Point3> vertices;
  std::vector<Triangle> triangles;
};

/// Strips a repeated closing vertex and consecutive duplicates.
std::vector<Point3> open_ring(std::vector<Point3> ring);

/// Ear clipping in the best-fit plane; holes are bridged into the outer ring
/// first. Output winding follows the exterior ring. Throws TriangulationError
/// naming the offending ring for degenerate, non-planar or self-intersecting
/// input.
Triangulation triangulate_polygon(const PolygonSurface& surface);

/// Area of the polygon (exterior minus holes) from Newell normals.
double polygon_area(const PolygonSurface& surface);

/// Collects triangulated polygons into one mesh, merging bit-identical vertices
/// in first-seen order.
class MeshAssembler {
 public:
  void add(const Triangulation& t);
  void add(const PolygonSurface& surface) { add(triangulate_polygon(surface)); }
  TriangleMesh take();

 private:
  std::uint32_t vertex_index(const Point3& p);

  TriangleMesh mesh_;
  struct KeyHash {
    std::size_t operator()(const std::array<double, 3>& k) const noexcept;
  };
  std::unordered_map<std::array<double, 3>, std::uint32_t, KeyHash> lookup_;
};

}  // namespace foldcity::ingest
