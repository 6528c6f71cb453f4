#pragma once

#include <optional>
#include <string>

#include "foldcity/mesh/types.hpp"

namespace foldcity::ingest {

/// One building after ingestion. Attribute codes are carried verbatim.
struct BuildingRecord {
  std::string id;
  std::optional<std::string> roof_type;
  std::optional<std::string> function;
  std::optional<double> measured_height;
  Point2 anchor_point = Point2::Zero();
  TriangleMesh mesh;
  std::string srs_name;
};

/// Footprint centroid: area-weighted centroid of the xy projections of the
/// downward-facing triangles, falling back to all triangles and then to the
/// vertex mean. Approximate for footprints with overhangs.
Point2 footprint_centroid(const TriangleMesh& mesh);

}  // namespace foldcity::ingest
