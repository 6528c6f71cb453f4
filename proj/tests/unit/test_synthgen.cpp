#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "foldcity/error.hpp"
#include "foldcity/ingest/citygml.hpp"
#include "foldcity/mesh/meshops.hpp"
#include "foldcity/synth/synthgen.hpp"
#include "oracles.hpp"

using namespace foldcity;
using namespace foldcity::synth;

namespace {

SynthSpec spec(Footprint f, Roof r, double w, double d, double eave, double roof) {
  SynthSpec s;
  s.id = "b";
  s.footprint = f;
  s.roof = r;
  s.width = w;
  s.depth = d;
  s.eave_height = eave;
  s.roof_height = roof;
  return s;
}

double max_z(const TriangleMesh& m) {
  double z = -1e300;
  for (const auto& v : m.vertices) z = std::max(z, v.z());
  return z;
}

// Footprint ring from the floor polygons: union area via shoelace per floor cell.
double floor_area(const SynthSpec& s) {
  double a = 0;
  for (const auto& surf : surfaces(s)) {
    if (surf.id.find("_floor_") == std::string::npos) continue;
    std::vector<Point2> ring;
    for (const auto& p : surf.exterior) ring.emplace_back(p.x(), p.y());
    a += -oracle::shoelace(ring);  // floors wind clockwise
  }
  return a;
}

}  // namespace

TEST(Synth, RectFlatIsABox) {
  const auto rec = generate(spec(Footprint::rect, Roof::flat, 10, 8, 3, 0));
  EXPECT_EQ(rec.mesh.vertices.size(), 8u);
  EXPECT_EQ(rec.mesh.triangles.size(), 12u);
  EXPECT_TRUE(mesh::watertight_check(rec.mesh).is_watertight);
  EXPECT_NEAR(signed_volume(rec.mesh), 240.0, 1e-9);
  EXPECT_EQ(rec.measured_height, 3.0);
}

TEST(Synth, RectGableHeightAndVolume) {
  const auto rec = generate(spec(Footprint::rect, Roof::gable, 10, 8, 3, 2));
  EXPECT_TRUE(mesh::watertight_check(rec.mesh).is_watertight);
  EXPECT_DOUBLE_EQ(max_z(rec.mesh), 5.0);
  // prism volume: box plus triangular roof section times length
  EXPECT_NEAR(signed_volume(rec.mesh), 10 * 8 * 3 + 0.5 * 8 * 2 * 10, 1e-9);
}

TEST(Synth, HipVolumeAndGableDegeneration) {
  auto s = spec(Footprint::rect, Roof::hip, 12, 8, 3, 2);
  s.hip_inset = 4;
  const auto hip = generate(s);
  EXPECT_TRUE(mesh::watertight_check(hip.mesh).is_watertight);
  // gable prism minus two corner pyramids of base 4 x 8 and height 2 with the
  // end triangles: ridge length 12 - 8 = 4; V = L_r*A/1 + 2 * (1/3) * 4 * 8 * 2 / 1 ... evaluated below
  const double ridge = 12 - 2 * 4;
  const double roof_volume = 0.5 * 8 * 2 * ridge + 2.0 * (1.0 / 3.0) * (4 * 8) * 2;
  EXPECT_NEAR(signed_volume(hip.mesh), 12 * 8 * 3 + roof_volume, 1e-9);
  s.hip_inset = 0;
  auto g = spec(Footprint::rect, Roof::gable, 12, 8, 3, 2);
  const auto flat_hip = generate(s);
  const auto gable = generate(g);
  EXPECT_EQ(flat_hip.mesh.vertices, gable.mesh.vertices);
  EXPECT_EQ(flat_hip.mesh.triangles, gable.mesh.triangles);
}

TEST(Synth, LAndUFootprintAreas) {
  for (Roof r : {Roof::flat, Roof::gable, Roof::hip, Roof::pent}) {
    const double rh = r == Roof::flat ? 0 : 3;
    const auto l = spec(Footprint::L, r, 14, 10, 4, rh);
    EXPECT_NEAR(floor_area(l), 14 * 10 - 7 * 5, 1e-9);
    EXPECT_NEAR(footprint_area(l), 14 * 10 - 7 * 5, 1e-12);
    const auto u = spec(Footprint::U, r, 15, 10, 4, rh);
    EXPECT_NEAR(floor_area(u), 150 - 5 * 5, 1e-9);
    for (const auto& s : {l, u}) {
      const auto rec = generate(s);
      const auto report = mesh::watertight_check(rec.mesh);
      EXPECT_TRUE(report.is_watertight) << to_string(s.footprint) << "-" << to_string(r);
      EXPECT_GT(signed_volume(rec.mesh), footprint_area(s) * s.eave_height - 1e-9);
    }
  }
}

TEST(Synth, AnchorIsFootprintCentroid) {
  auto s = spec(Footprint::U, Roof::pent, 15, 9, 4, 2);
  s.location = Point2(390512.25, 5820017.5);
  const auto rec = generate(s);
  EXPECT_EQ(rec.anchor_point, s.location);
  EXPECT_LT((ingest::footprint_centroid(rec.mesh) - s.location).norm(), 1e-6);
}

TEST(Synth, InvalidSpecs) {
  EXPECT_THROW(generate(spec(Footprint::rect, Roof::flat, 10, 8, 3, 1)), UsageError);
  EXPECT_THROW(generate(spec(Footprint::rect, Roof::gable, 10, 8, 3, 0)), UsageError);
  EXPECT_THROW(generate(spec(Footprint::rect, Roof::flat, 0, 8, 3, 0)), UsageError);
  auto s = spec(Footprint::rect, Roof::hip, 10, 8, 3, 1);
  s.hip_inset = 6;
  EXPECT_THROW(generate(s), UsageError);
}

TEST(Synth, EveryFamilyWatertightWithPositiveVolume) {
  std::vector<Family> mix;
  for (Footprint f : {Footprint::rect, Footprint::L, Footprint::U}) {
    for (Roof r : {Roof::flat, Roof::gable, Roof::hip, Roof::pent}) {
      for (SizeClass z : {SizeClass::small, SizeClass::medium, SizeClass::large}) mix.push_back({f, r, z, 1});
    }
  }
  const auto ds = generate_dataset(300, mix, Area{}, 7);
  ASSERT_EQ(ds.records.size(), 300u);
  for (const auto& rec : ds.records) {
    EXPECT_TRUE(mesh::watertight_check(rec.mesh).is_watertight) << rec.id;
    EXPECT_GT(signed_volume(rec.mesh), 0) << rec.id;
  }
}

TEST(Dataset, CountsFollowWeightsAndSeed) {
  const auto mix = parse_mix("rect-flat-small:1, rect-gable-large:1, U-flat:2");
  const auto a = generate_dataset(10, mix, Area{}, 3);
  std::map<std::size_t, int> counts;
  for (auto f : a.family) ++counts[f];
  EXPECT_EQ(counts[2], 5);
  EXPECT_EQ(counts[0] + counts[1], 5);
  const auto b = generate_dataset(10, mix, Area{}, 3);
  EXPECT_EQ(labels_csv(a.specs), labels_csv(b.specs));
  const auto c = generate_dataset(10, mix, Area{}, 4);
  EXPECT_NE(labels_csv(a.specs), labels_csv(c.specs));
  const auto one = generate_dataset(1, mix, Area{}, 3);
  EXPECT_EQ(one.records.size(), 1u);
  EXPECT_EQ(parse_labels_csv(labels_csv(one.specs)).size(), 1u);
  for (const auto& s : a.specs) {
    EXPECT_GE(s.location.x(), 0);
    EXPECT_LT(s.location.x(), 1000);
  }
}

TEST(Dataset, MixParsing) {
  const auto m = parse_mix("L-hip-large:2.5,rect-pent");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].footprint, Footprint::L);
  EXPECT_EQ(m[0].roof, Roof::hip);
  EXPECT_EQ(m[0].size, SizeClass::large);
  EXPECT_EQ(m[0].weight, 2.5);
  EXPECT_EQ(m[1].size, SizeClass::medium);
  EXPECT_EQ(parse_mix(format_mix(m))[0].name(), m[0].name());
  EXPECT_THROW(parse_mix("rect"), UsageError);
  EXPECT_THROW(parse_mix("rect-dome"), UsageError);
  EXPECT_THROW(parse_mix("rect-flat:-1"), UsageError);
  EXPECT_THROW(parse_mix(""), UsageError);
}

TEST(Dataset, LabelsRoundTripThroughCityGml) {
  const auto ds = generate_dataset(12, three_family_mix(), Area{}, 11);
  std::vector<ingest::CityGmlBuilding> gml;
  for (const auto& s : ds.specs) gml.push_back(citygml_building(s));
  std::ostringstream out;
  ingest::write_citygml(out, gml, "EPSG:25833");
  const auto parsed = ingest::parse_citygml(out.str());
  ASSERT_EQ(parsed.buildings.size(), 12u);
  const auto labels = parse_labels_csv(labels_csv(ds.specs));
  for (std::size_t i = 0; i < 12; ++i) {
    const auto& rec = parsed.buildings[i];
    EXPECT_EQ(rec.id, labels[i].building_id);
    EXPECT_EQ(parse_roof(*rec.roof_type), labels[i].roof);
    EXPECT_EQ(parse_footprint(*rec.function), labels[i].footprint);
    EXPECT_DOUBLE_EQ(*rec.measured_height, labels[i].eave_height + labels[i].roof_height);
    EXPECT_EQ(labels[i].width, ds.specs[i].width);
    EXPECT_TRUE(mesh::watertight_check(rec.mesh).is_watertight);
  }
}
