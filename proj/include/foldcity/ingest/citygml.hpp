#pragma once

#include <cstddef>
#include <functional>
#include <istream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "foldcity/error.hpp"
#include "foldcity/ingest/building.hpp"
#include "foldcity/ingest/polygon.hpp"

namespace foldcity::ingest {

struct SkippedBuilding {
  std::string id;
  std::string reason;
};

struct ParseReport {
  std::size_t buildings_parsed = 0;
  std::vector<SkippedBuilding> buildings_skipped;
  std::size_t non_building_skipped = 0;
  std::set<std::string> srs_names;

  std::size_t city_objects() const {
    return buildings_parsed + buildings_skipped.size() + non_building_skipped;
  }
  void merge(const ParseReport& other);
};

void to_json(nlohmann::json& j, const ParseReport& r);

/// Malformed XML. `offset` is the byte offset reported by the XML reader.
class XmlError : public DataError {
 public:
  XmlError(const std::string& what, std::size_t offset) : DataError(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Streams a CityGML document. Each complete building is triangulated and
/// handed to `sink` before the next one is read; a building whose geometry
/// cannot be triangulated is recorded in the report and skipped. Element
/// matching uses local names only, so CityGML 1.0 and 2.0 both work.
ParseReport parse_citygml(std::istream& in, const std::function<void(BuildingRecord&&)>& sink);

struct ParseResult {
  std::vector<BuildingRecord> buildings;
  ParseReport report;
};

ParseResult parse_citygml(std::istream& in);
ParseResult parse_citygml(std::string_view document);

/// Surfaces of one building for writing CityGML.
struct CityGmlBuilding {
  std::string id;
  std::optional<std::string> roof_type;
  std::optional<std::string> function;
  std::optional<double> measured_height;
  std::vector<PolygonSurface> surfaces;
};

/// Writes a CityGML 2.0 document with each building as an LoD2 solid.
void write_citygml(std::ostream& out, const std::vector<CityGmlBuilding>& buildings,
                   const std::string& srs_name);

}  // namespace foldcity::ingest
