#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "foldcity/mesh/types.hpp"

namespace foldcity::mesh {

/// Vertices closer than this (m) are treated as one before edge analysis.
inline constexpr double kWeldTolerance = 1e-6;

struct Edge {
  std::uint32_t a;
  std::uint32_t b;
  friend bool operator==(const Edge&, const Edge&) = default;
};

struct WatertightReport {
  bool is_watertight = false;
  std::vector<Edge> boundary_edges;      ///< used by exactly one triangle
  std::vector<Edge> non_manifold_edges;  ///< used by three or more triangles
  std::vector<Edge> inconsistent_edges;  ///< two triangles traverse it the same way
  std::size_t degenerate_triangles = 0;  ///< collapsed by welding
};

/// Maps each vertex to the index of its weld representative (first vertex in
/// input order within `tolerance`).
std::vector<std::uint32_t> weld_vertices(const std::vector<Point3>& vertices, double tolerance = kWeldTolerance);

/// Edge-incidence analysis on the welded mesh. Edge endpoints in the report are
/// welded vertex indices with a < b.
WatertightReport watertight_check(const TriangleMesh& mesh, double weld_tolerance = kWeldTolerance);

struct SampledCloud {
  PointCloud cloud;
  std::vector<std::uint32_t> source_triangle;
};

/// Area-weighted triangle choice followed by a uniform barycentric point.
/// Deterministic for a given seed. Throws DataError for zero-area meshes.
SampledCloud surface_sample_with_provenance(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);
PointCloud surface_sample(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);

struct CentroidRadius {
  Point3 centroid;
  double radius;
};

CentroidRadius centroid_radius(const PointCloud& cloud);

struct NormalizationManifest {
  double global_scale = 0;
  double lo_radius = 0;
  double hi_radius = 0;
  double percentile_lo = 1;
  double percentile_hi = 99;
  std::size_t kept_count = 0;
  std::size_t dropped_count = 0;
};

void to_json(nlohmann::json& j, const NormalizationManifest& m);
void from_json(const nlohmann::json& j, NormalizationManifest& m);

/// Inclusive linear-interpolation percentile of unsorted values (pct in [0, 100]).
double percentile(std::vector<double> values, double pct);

struct PercentileFilter {
  std::vector<bool> keep;
  NormalizationManifest manifest;
};

/// Keeps radii within [p_lo, p_hi] (inclusive). Needs at least 2 radii.
PercentileFilter percentile_filter(const std::vector<double>& radii, double lo_pct = 1, double hi_pct = 99);

/// Centres the cloud on its centroid and divides by manifest.global_scale.
PointCloud normalize_cloud(const PointCloud& cloud, const NormalizationManifest& manifest);

}  // namespace foldcity::mesh
