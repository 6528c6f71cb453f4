#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "foldcity/error.hpp"
#include "foldcity/geo/geogroup.hpp"
#include "foldcity/rng.hpp"
#include "oracles.hpp"

using namespace foldcity;
using namespace foldcity::geo;

namespace {

GeoEntity entity(std::string id, double x, double y, std::size_t row) {
  return GeoEntity{std::move(id), Point2(x, y), row, ""};
}

}  // namespace

TEST(MedianCenter, Degenerate) {
  const std::vector<Point2> one{{3, 4}};
  EXPECT_EQ(median_center(one), Point2(3, 4));
  EXPECT_THROW(median_center(std::vector<Point2>{}), DataError);
}

TEST(MedianCenter, SquareCorners) {
  const std::vector<Point2> sq{{0, 0}, {2, 0}, {2, 2}, {0, 2}};
  EXPECT_LT((median_center(sq) - Point2(1, 1)).norm(), 1e-9);
}

TEST(MedianCenter, CollinearIsCoordinateMedian) {
  const std::vector<Point2> pts{{0, 0}, {1, 0}, {10, 0}};
  const Point2 m = median_center(pts);
  EXPECT_LT((m - Point2(1, 0)).norm(), 1e-6);
  // 1D brute force of the objective
  double best = 0, best_f = 1e300;
  for (double x = -1; x <= 11; x += 1e-4) {
    const double f = oracle::median_objective(pts, Point2(x, 0));
    if (f < best_f) {
      best_f = f;
      best = x;
    }
  }
  EXPECT_NEAR(m.x(), best, 1e-4);
}

TEST(MedianCenter, MatchesGridOracleAndBeatsDataPoints) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    SplitMix64 rng(s);
    std::vector<Point2> pts;
    const std::size_t n = 3 + rng.below(30);
    for (std::size_t i = 0; i < n; ++i) pts.emplace_back(rng.uniform(0, 1000), rng.uniform(0, 1000));
    const Point2 m = median_center(pts);
    const Point2 ref = oracle::grid_median(pts, 1e-8);
    EXPECT_LT((m - ref).norm(), 1e-6) << "seed " << s;
    const double f = oracle::median_objective(pts, m);
    for (const auto& p : pts) EXPECT_LE(f, oracle::median_objective(pts, p) + 1e-6);
  }
}

TEST(MedianCenter, DominantDataPoint) {
  // Five copies at the origin outweigh three other points: the median is the origin.
  std::vector<Point2> pts(5, Point2(0, 0));
  pts.insert(pts.end(), {{10, 0}, {0, 10}, {-7, -7}});
  EXPECT_LT(median_center(pts).norm(), 1e-9);
}

TEST(MedianCenter, CoordinateMethod) {
  const std::vector<Point2> pts{{0, 5}, {1, 0}, {10, 1}, {4, 4}};
  EXPECT_EQ(median_center(pts, CenterMethod::coordinate_median), Point2(2.5, 2.5));
}

TEST(NearOrder, AnchorAndTies) {
  const std::vector<GeoEntity> m{entity("c", 1, 0, 0), entity("a", 0, 1, 1), entity("z", 0, 0, 2)};
  const auto o = near_order(m, Point2(0, 0));
  EXPECT_EQ(o[0].member, 2u);
  EXPECT_EQ(o[0].distance, 0.0);
  EXPECT_EQ(m[o[1].member].building_id, "a");
  EXPECT_EQ(m[o[2].member].building_id, "c");
}

TEST(NearOrder, MatchesFullSort) {
  SplitMix64 rng(5);
  std::vector<GeoEntity> m;
  for (int i = 0; i < 100; ++i) m.push_back(entity("b" + std::to_string(i), rng.below(10), rng.below(10), i));
  const auto o = near_order(m, Point2(4.5, 3));
  std::vector<std::pair<double, std::string>> ref;
  for (const auto& e : m) ref.emplace_back((e.location - Point2(4.5, 3)).norm(), e.building_id);
  std::sort(ref.begin(), ref.end());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(m[o[i].member].building_id, ref[i].second);
}

TEST(Cosine, Examples) {
  const std::vector<double> a{1, 0}, b{0, 1}, c{1, 1}, z{0, 0};
  EXPECT_EQ(cosine_distance(a, a), 0.0);
  EXPECT_NEAR(cosine_distance(a, b), 1.0, 1e-15);
  EXPECT_NEAR(cosine_distance(a, c), 1 - 1 / std::sqrt(2.0), 1e-12);
  EXPECT_THROW(cosine_distance(a, z), DataError);
}

TEST(Group, ManualTrace) {
  const EmbeddingTable t(2, {1, 0, 1, 0.01, 0, 1, 0.01, 1});
  const std::vector<GeoEntity> ordered{entity("A", 0, 0, 0), entity("B", 1, 0, 1), entity("C", 2, 0, 2),
                                       entity("D", 3, 0, 3)};
  const auto a = group_buildings(ordered, t, 0.03);
  EXPECT_EQ(a.group, (std::vector<int>{1, 1, 2, 2}));
  EXPECT_EQ(a.seeds, (std::vector<std::string>{"A", "C"}));
  EXPECT_EQ(a.k_ratio, 2.0);
}

TEST(Group, TotalSimilarityAndDissimilarity) {
  std::vector<GeoEntity> ordered;
  for (int i = 0; i < 5; ++i) ordered.push_back(entity("e" + std::to_string(i), i, 0, i));
  const auto same = group_buildings(ordered, EmbeddingTable(2, std::vector<double>(10, 1.0)), 0.03);
  EXPECT_EQ(same.group_count(), 1u);
  EXPECT_EQ(same.k_ratio, 5.0);
  std::vector<double> spread;
  for (int i = 0; i < 5; ++i) {
    spread.push_back(std::cos(i * 0.6));
    spread.push_back(std::sin(i * 0.6));
  }
  const auto apart = group_buildings(ordered, EmbeddingTable(2, spread), 0.03);
  EXPECT_EQ(apart.group_count(), 5u);
  EXPECT_EQ(apart.k_ratio, 1.0);
}

TEST(Group, ZeroEmbeddingRejected) {
  const std::vector<GeoEntity> ordered{entity("A", 0, 0, 0), entity("B", 1, 0, 1)};
  EXPECT_THROW(group_buildings(ordered, EmbeddingTable(2, {1, 0, 0, 0}), 0.03), DataError);
}

TEST(Tiles, HalfOpenEdgesAndQuadrants) {
  const BoundingBox box{Point2(0, 0), Point2(2000, 2000)};
  const std::vector<GeoEntity> edge{entity("e", 1000, 500, 0)};
  const auto t = make_tiles(edge, box, 1000);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].id, "tile_0000_0001");
  const std::vector<GeoEntity> quads{entity("a", 100, 100, 0), entity("b", 1500, 100, 1), entity("c", 100, 1500, 2),
                                     entity("d", 1500, 1500, 3)};
  const auto q = make_tiles(quads, box, 1000);
  ASSERT_EQ(q.size(), 4u);
  for (const auto& b : q) EXPECT_EQ(b.members.size(), 1u);
  const std::vector<GeoEntity> small{entity("a", 5, 5, 0), entity("b", 50, 60, 1)};
  EXPECT_EQ(make_tiles(small, bounding_box(small), 1000).size(), 1u);
}

TEST(Polygon, EvenOddWithEdgesInside) {
  Polygon p{{{0, 0}, {10, 0}, {10, 10}, {0, 10}}, {{{3, 3}, {6, 3}, {6, 6}, {3, 6}}}};
  EXPECT_TRUE(point_in_polygon(p, Point2(1, 1)));
  EXPECT_FALSE(point_in_polygon(p, Point2(4, 4)));   // in the hole
  EXPECT_TRUE(point_in_polygon(p, Point2(3, 4)));    // on the hole edge
  EXPECT_TRUE(point_in_polygon(p, Point2(10, 5)));   // on the outer edge
  EXPECT_TRUE(point_in_polygon(p, Point2(0, 0)));    // vertex
  EXPECT_FALSE(point_in_polygon(p, Point2(11, 5)));
}

TEST(Polygon, GeoJsonAssignment) {
  const auto doc = nlohmann::json::parse(R"({"type":"FeatureCollection","features":[
    {"type":"Feature","properties":{"boundary_id":"west"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[5,0],[5,10],[0,10],[0,0]]]}},
    {"type":"Feature","properties":{"boundary_id":"east"},"geometry":{"type":"Polygon","coordinates":[[[5,0],[10,0],[10,10],[5,10],[5,0]]]}}]})");
  const auto polys = read_boundary_geojson(doc);
  ASSERT_EQ(polys.size(), 2u);
  EXPECT_EQ(polys[0].boundary_id, "east");
  const std::vector<GeoEntity> ents{entity("a", 1, 1, 0), entity("b", 5, 5, 1), entity("c", 9, 9, 2),
                                    entity("d", 20, 20, 3)};
  const auto m = assign_to_polygons(ents, polys);
  EXPECT_EQ(m.unassigned, 1u);
  ASSERT_EQ(m.boundaries.size(), 2u);
  EXPECT_EQ(m.boundaries[0].members.size(), 2u);  // b on the shared edge joins "east" first
  EXPECT_EQ(m.boundaries[1].members.size(), 1u);
}

TEST(RunBoundaries, SummaryMatchesRecomputation) {
  SplitMix64 rng(2);
  std::vector<GeoEntity> ents;
  std::vector<double> emb;
  for (int i = 0; i < 60; ++i) {
    GeoEntity e = entity("b" + std::to_string(i), rng.uniform(0, 3000), rng.uniform(0, 3000), i);
    e.boundary_id = i % 3 == 0 ? "z" : "a";
    ents.push_back(e);
    for (int d = 0; d < 4; ++d) emb.push_back(rng.uniform(0.1, 1.0));
  }
  ents.push_back(entity("single", 10, 10, 60));
  ents.back().boundary_id = "m";
  for (int d = 0; d < 4; ++d) emb.push_back(1.0);
  const EmbeddingTable table(4, emb);
  const auto run = run_boundaries(boundaries_from_table(ents), table, 0.03);
  ASSERT_EQ(run.results.size(), 3u);
  EXPECT_EQ(run.results[0].boundary_id, "a");
  EXPECT_EQ(run.results[1].boundary_id, "m");
  EXPECT_EQ(run.results[1].assignment.k_ratio, 1.0);
  for (const auto& s : run.summary()) EXPECT_EQ(s.k_ratio, static_cast<double>(s.count) / static_cast<double>(s.groups));
  const auto again = run_boundaries(boundaries_from_table(ents), table, 0.03);
  EXPECT_EQ(assignment_csv(run), assignment_csv(again));
}

TEST(RunBoundaries, MissingEmbeddingSkipsBoundary) {
  std::vector<GeoEntity> ents{entity("a", 0, 0, 0), entity("b", 1, 1, 1)};
  ents[0].boundary_id = "p";
  ents[1].boundary_id = "q";
  ents[1].embedding_row.reset();
  const auto run = run_boundaries(boundaries_from_table(ents), EmbeddingTable(2, {1, 0, 0, 1}), 0.03);
  ASSERT_EQ(run.results.size(), 1u);
  ASSERT_EQ(run.skipped.size(), 1u);
  EXPECT_EQ(run.skipped[0].boundary_id, "q");
}
