#include "foldcity/mesh/meshops.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "foldcity/error.hpp"
#include "foldcity/rng.hpp"

namespace foldcity::mesh {
namespace {

struct CellHash {
  std::size_t operator()(const std::array<std::int64_t, 3>& c) const noexcept {
    std::size_t h = 0xcbf29ce484222325ULL;
    for (auto v : c) {
      h ^= static_cast<std::size_t>(v);
      h *= 0x100000001b3ULL;
    }
    return h;
  }
};

}  // namespace

std::vector<std::uint32_t> weld_vertices(const std::vector<Point3>& vertices, double tolerance) {
  std::vector<std::uint32_t> rep(vertices.size());
  if (tolerance <= 0) {
    for (std::uint32_t i = 0; i < rep.size(); ++i) rep[i] = i;
    return rep;
  }
  // Grid with cell size = tolerance: a match lies in one of the 27 neighbours.
  std::unordered_map<std::array<std::int64_t, 3>, std::vector<std::uint32_t>, CellHash> grid;
  const double tol2 = tolerance * tolerance;
  for (std::uint32_t i = 0; i < vertices.size(); ++i) {
    const Point3& p = vertices[i];
    const std::array<std::int64_t, 3> cell{static_cast<std::int64_t>(std::floor(p.x() / tolerance)),
                                           static_cast<std::int64_t>(std::floor(p.y() / tolerance)),
                                           static_cast<std::int64_t>(std::floor(p.z() / tolerance))};
    std::uint32_t found = i;
    for (int dx = -1; dx <= 1 && found == i; ++dx) {
      for (int dy = -1; dy <= 1 && found == i; ++dy) {
        for (int dz = -1; dz <= 1 && found == i; ++dz) {
          auto it = grid.find({cell[0] + dx, cell[1] + dy, cell[2] + dz});
          if (it == grid.end()) continue;
          for (std::uint32_t j : it->second) {
            if ((vertices[j] - p).squaredNorm() <= tol2 && j < found) found = j;
          }
        }
      }
    }
    rep[i] = found;
    if (found == i) grid[cell].push_back(i);
  }
  return rep;
}

WatertightReport watertight_check(const TriangleMesh& mesh, double weld_tolerance) {
  validate_mesh(mesh);
  WatertightReport report;
  const auto rep = weld_vertices(mesh.vertices, weld_tolerance);

  struct Incidence {
    int forward = 0;  // traversals a->b with a < b
    int backward = 0;
  };
  std::map<std::pair<std::uint32_t, std::uint32_t>, Incidence> edges;
  for (const Triangle& t : mesh.triangles) {
    const std::uint32_t v[3] = {rep[t[0]], rep[t[1]], rep[t[2]]};
    if (v[0] == v[1] || v[1] == v[2] || v[0] == v[2]) {
      ++report.degenerate_triangles;
      continue;
    }
    for (int k = 0; k < 3; ++k) {
      const std::uint32_t a = v[k], b = v[(k + 1) % 3];
      auto& inc = edges[{std::min(a, b), std::max(a, b)}];
      (a < b ? inc.forward : inc.backward)++;
    }
  }
  for (const auto& [key, inc] : edges) {
    const Edge e{key.first, key.second};
    const int uses = inc.forward + inc.backward;
    if (uses == 1) report.boundary_edges.push_back(e);
    else if (uses > 2) report.non_manifold_edges.push_back(e);
    else if (inc.forward != 1) report.inconsistent_edges.push_back(e);
  }
  report.is_watertight = !mesh.triangles.empty() && report.boundary_edges.empty() &&
                         report.non_manifold_edges.empty() && report.inconsistent_edges.empty();
  return report;
}

SampledCloud surface_sample_with_provenance(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
  validate_mesh(mesh);
  if (count == 0) throw UsageError("sample count must be at least 1");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.triangles.size());
  double total = 0;
  for (const Triangle& t : mesh.triangles) {
    total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    cumulative.push_back(total);
  }
  if (!(total > 0)) throw DataError("cannot sample a mesh with zero surface area");

  SplitMix64 rng(seed);
  SampledCloud out;
  out.cloud.points.reserve(count);
  out.source_triangle.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double target = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    // upper_bound never selects a zero-area triangle; the clamp below handles
    // target rounding up to the total.
    if (it == cumulative.end()) it = std::lower_bound(cumulative.begin(), cumulative.end(), total);
    const auto tri = static_cast<std::uint32_t>(it - cumulative.begin());
    double r1 = rng.uniform();
    double r2 = rng.uniform();
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    const Triangle& t = mesh.triangles[tri];
    const Point3& a = mesh.vertices[t[0]];
    out.cloud.points.push_back(a + r1 * (mesh.vertices[t[1]] - a) + r2 * (mesh.vertices[t[2]] - a));
    out.source_triangle.push_back(tri);
  }
  return out;
}

PointCloud surface_sample(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
  return surface_sample_with_provenance(mesh, count, seed).cloud;
}

CentroidRadius centroid_radius(const PointCloud& cloud) {
  if (cloud.points.empty()) throw DataError("centroid of an empty cloud");
  Point3 c = Point3::Zero();
  for (const Point3& p : cloud.points) c += p;
  c /= static_cast<double>(cloud.points.size());
  double r2 = 0;
  for (const Point3& p : cloud.points) r2 = std::max(r2, (p - c).squaredNorm());
  return {c, std::sqrt(r2)};
}

void to_json(nlohmann::json& j, const NormalizationManifest& m) {
  j = nlohmann::json{{"global_scale", m.global_scale}, {"lo_radius", m.lo_radius},   {"hi_radius", m.hi_radius},
                     {"percentile_lo", m.percentile_lo}, {"percentile_hi", m.percentile_hi},
                     {"kept_count", m.kept_count},     {"dropped_count", m.dropped_count}};
}

void from_json(const nlohmann::json& j, NormalizationManifest& m) {
  j.at("global_scale").get_to(m.global_scale);
  j.at("lo_radius").get_to(m.lo_radius);
  j.at("hi_radius").get_to(m.hi_radius);
  j.at("percentile_lo").get_to(m.percentile_lo);
  j.at("percentile_hi").get_to(m.percentile_hi);
  j.at("kept_count").get_to(m.kept_count);
  j.at("dropped_count").get_to(m.dropped_count);
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw DataError("percentile of an empty list");
  if (!(pct >= 0 && pct <= 100)) throw UsageError("percentile must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

PercentileFilter percentile_filter(const std::vector<double>& radii, double lo_pct, double hi_pct) {
  if (radii.size() < 2) throw DataError("percentile filter needs at least 2 radii");
  if (lo_pct > hi_pct) throw UsageError("lower percentile exceeds upper percentile");
  for (double r : radii) {
    if (!std::isfinite(r)) throw DataError("non-finite radius");
  }
  PercentileFilter out;
  out.manifest.percentile_lo = lo_pct;
  out.manifest.percentile_hi = hi_pct;
  out.manifest.lo_radius = percentile(radii, lo_pct);
  out.manifest.hi_radius = percentile(radii, hi_pct);
  out.manifest.global_scale = out.manifest.hi_radius;
  out.keep.resize(radii.size());
  for (std::size_t i = 0; i < radii.size(); ++i) {
    out.keep[i] = radii[i] >= out.manifest.lo_radius && radii[i] <= out.manifest.hi_radius;
    (out.keep[i] ? out.manifest.kept_count : out.manifest.dropped_count)++;
  }
  return out;
}

PointCloud normalize_cloud(const PointCloud& cloud, const NormalizationManifest& manifest) {
  if (!(manifest.global_scale > 0)) throw DataError("normalization scale must be positive");
  const auto [centroid, radius] = centroid_radius(cloud);
  (void)radius;
  PointCloud out;
  out.source_id = cloud.source_id;
  out.points.reserve(cloud.points.size());
  for (const Point3& p : cloud.points) out.points.push_back((p - centroid) / manifest.global_scale);
  return out;
}

}  // namespace foldcity::mesh
