#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "foldcity/io/stores.hpp"
#include "foldcity/mesh/types.hpp"

namespace foldcity::geo {

struct GeoEntity {
  std::string building_id;
  Point2 location;
  std::optional<std::size_t> embedding_row;  ///< unset when the id has no embedding
  std::string boundary_id;                   ///< optional membership from the entity table
};

enum class BoundaryKind { administrative, tile };

using Ring = std::vector<Point2>;  ///< open ring
struct Polygon {
  Ring exterior;
  std::vector<Ring> holes;
};

struct Boundary {
  std::string id;
  BoundaryKind kind = BoundaryKind::administrative;
  std::vector<GeoEntity> members;
  std::vector<Polygon> shape;  ///< empty when membership came from a table
};

struct GroupConfig {
  double tau = 0.03;
  std::vector<double> sweep{0.01, 0.02, 0.03, 0.04, 0.05};

  void validate() const;
};

enum class CenterMethod { geometric_median, coordinate_median };

/// Estimated remaining error, relative to the point spread (at least 1).
inline constexpr double kWeiszfeldTolerance = 1e-12;
inline constexpr std::size_t kWeiszfeldMaxIterations = 200000;

/// Geometric median by Weiszfeld iteration from the centroid, with the
/// Vardi-Zhang step when the iterate sits on a data point. The coordinate
/// method returns the per-axis median instead.
Point2 median_center(std::span<const Point2> points, CenterMethod method = CenterMethod::geometric_median);

struct NearEntry {
  std::size_t member;  ///< index into the input span
  double distance;     ///< metres
};

/// Ascending distance to `anchor`, equal distances by building id.
std::vector<NearEntry> near_order(std::span<const GeoEntity> members, const Point2& anchor);

/// 1 - u.v / (|u||v|). Throws DataError for zero vectors or size mismatch.
double cosine_distance(std::span<const double> u, std::span<const double> v);

/// Row-major embeddings in double precision.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(const io::EmbeddingStore& store);
  EmbeddingTable(std::size_t dim, std::vector<double> data);

  std::size_t dim() const { return dim_; }
  std::size_t count() const { return dim_ ? data_.size() / dim_ : 0; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

struct GroupAssignment {
  std::vector<std::string> building_ids;  ///< nearness order
  std::vector<double> nearness;           ///< distance to the anchor, same order
  std::vector<int> group;                 ///< 1-based, same order
  std::vector<std::string> seeds;         ///< seed building of group g at g - 1
  double k_ratio = 0;

  std::size_t group_count() const { return seeds.size(); }
};

/// Scans `ordered` once; the first unassigned member seeds a new group that
/// locks every unassigned member within cosine distance tau of the seed.
GroupAssignment group_buildings(std::span<const GeoEntity> ordered, const EmbeddingTable& embeddings, double tau);

struct BoundingBox {
  Point2 min{0, 0};
  Point2 max{0, 0};
};

BoundingBox bounding_box(std::span<const GeoEntity> entities);

/// Square tiles anchored at box.min; an entity goes to tile
/// (floor((x - x0) / size), floor((y - y0) / size)). Empty tiles are omitted.
/// Tile ids sort in row-major order.
std::vector<Boundary> make_tiles(std::span<const GeoEntity> entities, const BoundingBox& box, double tile_size = 1000);

/// Even-odd rule; points on an edge count as inside.
bool point_in_polygon(const Polygon& polygon, const Point2& p);

struct NamedPolygon {
  std::string boundary_id;
  std::vector<Polygon> parts;
};

/// FeatureCollection of Polygon / MultiPolygon features with a `boundary_id`
/// property.
std::vector<NamedPolygon> read_boundary_geojson(const nlohmann::json& doc);

struct Membership {
  std::vector<Boundary> boundaries;  ///< id order
  std::size_t unassigned = 0;        ///< entities outside every polygon
};

/// Each entity joins the first polygon (in id order) that contains it.
Membership assign_to_polygons(std::span<const GeoEntity> entities, const std::vector<NamedPolygon>& polygons);
/// Boundaries from the entities' boundary_id column.
std::vector<Boundary> boundaries_from_table(std::span<const GeoEntity> entities);

struct BoundaryResult {
  std::string boundary_id;
  BoundaryKind kind;
  Point2 anchor;
  GroupAssignment assignment;
};

struct SkippedBoundary {
  std::string boundary_id;
  std::string reason;
};

struct SummaryRow {
  std::string boundary_id;
  std::size_t count;
  std::size_t groups;
  double k_ratio;
};

struct RunResult {
  std::vector<BoundaryResult> results;  ///< boundary id order
  std::vector<SkippedBoundary> skipped;
  std::vector<SummaryRow> summary() const;
};

/// Groups every boundary independently (in parallel) and reports them in id
/// order. A boundary with a member lacking an embedding is skipped.
RunResult run_boundaries(std::vector<Boundary> boundaries, const EmbeddingTable& embeddings, double tau,
                         CenterMethod method = CenterMethod::geometric_median);

/// Fills embedding_row from the store's id list.
void attach_embeddings(std::vector<GeoEntity>& entities, const std::vector<std::string>& embedding_ids);

/// Entity table `building_id,x,y[,boundary_id]` with a header row.
std::vector<GeoEntity> read_entities_csv(const std::filesystem::path& path);
void write_entities_csv(const std::filesystem::path& path, std::span<const GeoEntity> entities);

std::string assignment_csv(const RunResult& run);
std::string summary_csv(const RunResult& run);
/// Boundary polygons (or anchor points when no polygon is known) carrying
/// count, groups and k_ratio.
nlohmann::json choropleth_geojson(const RunResult& run, const std::vector<Boundary>& boundaries);
/// Member points of one boundary carrying group, seed flag and nearness.
nlohmann::json points_geojson(const BoundaryResult& result, std::span<const GeoEntity> members);

}  // namespace foldcity::geo
