#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "foldcity/ingest/building.hpp"
#include "foldcity/ingest/citygml.hpp"
#include "foldcity/mesh/types.hpp"

namespace foldcity::synth {

enum class Footprint { rect, L, U };
enum class Roof { flat, gable, hip, pent };

std::string_view to_string(Footprint f);
std::string_view to_string(Roof r);
/// Throw UsageError for unknown names.
Footprint parse_footprint(std::string_view name);
Roof parse_roof(std::string_view name);

/// Footprints live in a width (x) by depth (y) box. L drops the upper-right
/// quadrant (area 3/4 wd); U drops the top-middle cell of a 3 x 2 grid
/// (area 5/6 wd). Gable and hip ridges run along x at mid-depth; the pent roof
/// rises towards +y.
struct SynthSpec {
  std::string id;  ///< empty: derived from the seed
  Footprint footprint = Footprint::rect;
  Roof roof = Roof::flat;
  double width = 10;
  double depth = 8;
  double eave_height = 3;
  double roof_height = 0;  ///< zero iff flat
  /// Hip end length along x; unset means min(width, depth) / 2. Zero gives a gable.
  std::optional<double> hip_inset;
  Point2 location = Point2::Zero();  ///< footprint area centroid
  std::uint64_t seed = 0;

  void validate() const;
  std::string building_id() const;
};

/// Closed, outward-oriented polygons of the building: floor, walls, roof.
std::vector<ingest::PolygonSurface> surfaces(const SynthSpec& spec);

/// Watertight record. roof_type holds the roof family and function the
/// footprint family.
ingest::BuildingRecord generate(const SynthSpec& spec);
ingest::CityGmlBuilding citygml_building(const SynthSpec& spec);

double footprint_area(const SynthSpec& spec);

enum class SizeClass { small, medium, large };

/// One entry of a dataset mix, written `<footprint>-<roof>[-<size>][:weight]`,
/// e.g. `rect-gable-large:2`.
struct Family {
  Footprint footprint = Footprint::rect;
  Roof roof = Roof::flat;
  SizeClass size = SizeClass::medium;
  double weight = 1;

  std::string name() const;
};

Family parse_family(std::string_view text);
/// Comma separated families.
std::vector<Family> parse_mix(std::string_view text);
std::string format_mix(std::span<const Family> mix);
/// Box-flat small, box-gable large, U-flat.
std::vector<Family> three_family_mix();

struct Area {
  Point2 min{0, 0};
  Point2 max{1000, 1000};
};

struct Dataset {
  std::vector<SynthSpec> specs;
  std::vector<std::size_t> family;  ///< index into the mix, per spec
  std::vector<ingest::BuildingRecord> records;
};

/// Family counts follow the weights by largest remainder, in seeded order.
/// Dimensions and locations are drawn per building from the seed, so the
/// result does not depend on the worker count.
Dataset generate_dataset(std::size_t count, std::span<const Family> mix, const Area& area, std::uint64_t seed);

/// `building_id,footprint,roof,width,depth,eave_height,roof_height`
std::string labels_csv(std::span<const SynthSpec> specs);

struct Label {
  std::string building_id;
  Footprint footprint;
  Roof roof;
  double width, depth, eave_height, roof_height;
};

std::vector<Label> parse_labels_csv(std::string_view text, const std::string& source = "labels");

}  // namespace foldcity::synth
