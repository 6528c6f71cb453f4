#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <map>
#include <numeric>

#include "foldcity/error.hpp"
#include "foldcity/mesh/meshops.hpp"
#include "foldcity/rng.hpp"
#include "oracles.hpp"

using namespace foldcity;
using namespace foldcity::mesh;

namespace {

// Brute-force edge incidence: for each undirected edge, count triangles using
// it and how many traverse it in each direction.
struct EdgeCounts {
  std::size_t boundary = 0, non_manifold = 0, inconsistent = 0;
};

EdgeCounts brute_force_edges(const TriangleMesh& m) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::pair<int, int>> uses;
  for (const auto& t : m.triangles) {
    for (int e = 0; e < 3; ++e) {
      const std::uint32_t a = t[e], b = t[(e + 1) % 3];
      auto& u = uses[{std::min(a, b), std::max(a, b)}];
      (a < b ? u.first : u.second) += 1;
    }
  }
  EdgeCounts c;
  for (const auto& [edge, u] : uses) {
    const int n = u.first + u.second;
    if (n == 1) ++c.boundary;
    else if (n > 2) ++c.non_manifold;
    else if (u.first != 1) ++c.inconsistent;
  }
  return c;
}

double distance_to_triangle_plane(const Point3& p, const Point3& a, const Point3& b, const Point3& c) {
  const Point3 n = (b - a).cross(c - a).normalized();
  return std::abs((p - a).dot(n));
}

bool inside_triangle(const Point3& p, const Point3& a, const Point3& b, const Point3& c) {
  const Point3 n = (b - a).cross(c - a);
  const double tol = -1e-12 * n.squaredNorm();
  return (b - a).cross(p - a).dot(n) >= tol && (c - b).cross(p - b).dot(n) >= tol &&
         (a - c).cross(p - c).dot(n) >= tol;
}

}  // namespace

TEST(Watertight, ClosedCube) {
  const auto r = watertight_check(oracle::unit_cube());
  EXPECT_TRUE(r.is_watertight);
  EXPECT_TRUE(r.boundary_edges.empty());
  EXPECT_GT(signed_volume(oracle::unit_cube()), 0.999);
}

TEST(Watertight, MissingTriangle) {
  auto m = oracle::unit_cube();
  m.triangles.erase(m.triangles.begin() + 3);
  const auto r = watertight_check(m);
  EXPECT_FALSE(r.is_watertight);
  EXPECT_EQ(r.boundary_edges.size(), 3u);
  EXPECT_EQ(brute_force_edges(m).boundary, 3u);
}

TEST(Watertight, FlippedTriangleMatchesBruteForce) {
  auto m = oracle::unit_cube();
  std::swap(m.triangles[5][1], m.triangles[5][2]);
  const auto r = watertight_check(m);
  EXPECT_FALSE(r.is_watertight);
  EXPECT_EQ(r.inconsistent_edges.size(), brute_force_edges(m).inconsistent);
  EXPECT_EQ(r.inconsistent_edges.size(), 3u);
}

TEST(Watertight, WeldsNearDuplicateVertices) {
  auto m = oracle::unit_cube();
  // Give triangle 1 its own copies of its vertices, offset by less than the tolerance.
  for (auto& idx : m.triangles[1]) {
    m.vertices.push_back(m.vertices[idx] + Point3(3e-7, -2e-7, 1e-7));
    idx = static_cast<std::uint32_t>(m.vertices.size() - 1);
  }
  EXPECT_FALSE(brute_force_edges(m).boundary == 0);
  EXPECT_TRUE(watertight_check(m).is_watertight);
  EXPECT_FALSE(watertight_check(m, 1e-8).is_watertight);
}

TEST(Watertight, NonManifoldFin) {
  auto m = oracle::unit_cube();
  m.vertices.emplace_back(0.5, -1, 0);
  m.triangles.push_back({0, 1, 8});
  m.triangles.push_back({1, 0, 8});
  const auto r = watertight_check(m);
  EXPECT_FALSE(r.is_watertight);
  EXPECT_EQ(r.non_manifold_edges.size(), brute_force_edges(m).non_manifold);
}

TEST(Sample, SingleTriangle) {
  TriangleMesh m{{{0, 0, 1}, {2, 0, 1.5}, {0, 3, 2}}, {{0, 1, 2}}};
  const auto s = surface_sample_with_provenance(m, 5, 9);
  ASSERT_EQ(s.cloud.size(), 5u);
  for (const auto& p : s.cloud.points) {
    EXPECT_LT(distance_to_triangle_plane(p, m.vertices[0], m.vertices[1], m.vertices[2]), 1e-9);
    EXPECT_TRUE(inside_triangle(p, m.vertices[0], m.vertices[1], m.vertices[2]));
  }
}

TEST(Sample, PointsLieOnSourceTriangles) {
  const auto m = oracle::unit_cube();
  const auto s = surface_sample_with_provenance(m, 2000, 4);
  for (std::size_t i = 0; i < s.cloud.size(); ++i) {
    const auto& t = m.triangles[s.source_triangle[i]];
    const Point3 &a = m.vertices[t[0]], &b = m.vertices[t[1]], &c = m.vertices[t[2]];
    EXPECT_LT(distance_to_triangle_plane(s.cloud.points[i], a, b, c), 1e-9);
    EXPECT_TRUE(inside_triangle(s.cloud.points[i], a, b, c));
  }
}

TEST(Sample, FaceCountsWithinThreeSigma) {
  const auto m = oracle::unit_cube();
  const auto s = surface_sample_with_provenance(m, 60000, 1);
  std::array<int, 6> faces{};
  for (auto t : s.source_triangle) ++faces[t / 2];
  const double sigma = std::sqrt(60000.0 * (1.0 / 6) * (5.0 / 6));
  EXPECT_NEAR(sigma, 91.3, 0.05);
  for (int c : faces) EXPECT_NEAR(c, 10000, 3 * sigma);
}

TEST(Sample, TriangleOrderDoesNotBiasFaces) {
  auto m = oracle::unit_cube();
  std::vector<std::size_t> order(m.triangles.size());
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(3);
  shuffle(order, rng);
  TriangleMesh permuted{m.vertices, {}};
  for (auto i : order) permuted.triangles.push_back(m.triangles[i]);
  const auto s = surface_sample_with_provenance(permuted, 60000, 8);
  std::array<int, 6> faces{};
  for (auto t : s.source_triangle) ++faces[order[t] / 2];
  double chi2 = 0;
  for (int c : faces) chi2 += (c - 10000.0) * (c - 10000.0) / 10000.0;
  EXPECT_LT(chi2, 20.515);  // chi-square 5 dof, upper 0.001 quantile
}

TEST(Sample, DeterministicAndErrors) {
  const auto m = oracle::unit_cube();
  EXPECT_EQ(surface_sample(m, 100, 5).points, surface_sample(m, 100, 5).points);
  EXPECT_NE(surface_sample(m, 100, 5).points, surface_sample(m, 100, 6).points);
  TriangleMesh flat{{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, {{0, 1, 2}}};
  EXPECT_THROW(surface_sample(flat, 10, 1), DataError);
}

TEST(CentroidRadius, Examples) {
  const auto one = centroid_radius(PointCloud{{{1, 2, 3}}, "p"});
  EXPECT_EQ(one.centroid, Point3(1, 2, 3));
  EXPECT_EQ(one.radius, 0.0);
  const auto two = centroid_radius(PointCloud{{{0, 0, 0}, {2, 0, 0}}, "p"});
  EXPECT_EQ(two.centroid, Point3(1, 0, 0));
  EXPECT_EQ(two.radius, 1.0);
  EXPECT_THROW(centroid_radius(PointCloud{}), DataError);
  auto cube = oracle::unit_cube();
  for (auto& v : cube.vertices) v -= Point3(0.5, 0.5, 0.5);
  EXPECT_LE(centroid_radius(surface_sample(cube, 2048, 2)).radius, std::sqrt(3.0) / 2 + 1e-9);
}

TEST(Percentile, OneToHundred) {
  std::vector<double> r(100);
  std::iota(r.begin(), r.end(), 1.0);
  const auto f = percentile_filter(r);
  EXPECT_NEAR(f.manifest.lo_radius, 1.99, 1e-12);
  EXPECT_NEAR(f.manifest.hi_radius, 99.01, 1e-12);
  EXPECT_EQ(f.manifest.kept_count, 98u);
  EXPECT_FALSE(f.keep.front());
  EXPECT_FALSE(f.keep.back());
  EXPECT_EQ(f.manifest.global_scale, f.manifest.hi_radius);
}

TEST(Percentile, DegenerateAndFullRange) {
  const auto eq = percentile_filter(std::vector<double>(7, 4.5));
  EXPECT_EQ(eq.manifest.kept_count, 7u);
  EXPECT_EQ(eq.manifest.global_scale, 4.5);
  const auto full = percentile_filter({1, 1000}, 0, 100);
  EXPECT_EQ(full.manifest.kept_count, 2u);
  EXPECT_THROW(percentile_filter({1}), DataError);
}

TEST(Percentile, MatchesReferenceAndKeepsBounds) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    SplitMix64 rng(s);
    const std::size_t n = 2 + rng.below(500);
    std::vector<double> r(n);
    for (auto& v : r) v = rng.uniform(0.5, 40) * (rng.below(10) == 0 ? 3 : 1);
    const auto f = percentile_filter(r);
    const double lo = oracle::reference_percentile(r, 1), hi = oracle::reference_percentile(r, 99);
    EXPECT_NEAR(f.manifest.lo_radius, lo, 1e-12 * lo);
    EXPECT_NEAR(f.manifest.hi_radius, hi, 1e-12 * hi);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(f.keep[i], r[i] >= lo && r[i] <= hi);
      kept += f.keep[i];
    }
    EXPECT_EQ(f.manifest.kept_count + f.manifest.dropped_count, n);
    EXPECT_GE(static_cast<double>(kept) + 2, std::floor(0.98 * static_cast<double>(n)));
  }
}

TEST(Normalize, Examples) {
  NormalizationManifest m;
  m.global_scale = 4;
  const PointCloud c{{{1, 1, 1}, {5, 1, 1}, {3, 1, 1}}, "x"};
  const auto n = normalize_cloud(c, m);
  EXPECT_NEAR(centroid_radius(n).radius, 0.5, 1e-12);
  EXPECT_EQ(n.points[0], Point3(-0.5, 0, 0));
  EXPECT_EQ(n.source_id, "x");
  const PointCloud centred{{{-4, 0, 0}, {4, 0, 0}}, "y"};
  EXPECT_EQ(normalize_cloud(centred, m).points[1], Point3(1, 0, 0));
  m.global_scale = 0;
  EXPECT_THROW(normalize_cloud(c, m), DataError);
}

TEST(Normalize, PreservesRelativeSizeAndShape) {
  const auto a = oracle::random_cloud(50, 3, 1.0);
  PointCloud b = a;
  for (auto& p : b.points) p = p * 2 + Point3(10, -3, 7);
  NormalizationManifest m;
  m.global_scale = 7.5;
  const auto na = normalize_cloud(a, m), nb = normalize_cloud(b, m);
  EXPECT_NEAR(centroid_radius(nb).radius, 2 * centroid_radius(na).radius, 1e-9);
  for (std::size_t i = 1; i < a.size(); ++i) {
    const double before = (a.points[i] - a.points[0]).norm();
    const double after = (na.points[i] - na.points[0]).norm();
    EXPECT_NEAR(after * m.global_scale, before, 1e-9);
  }
}
