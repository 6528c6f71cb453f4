#include "foldcity/geo/geogroup.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include <fmt/format.h>

#include "foldcity/error.hpp"
#include "foldcity/io/csv.hpp"
#include "foldcity/parallel.hpp"

namespace foldcity::geo {

void GroupConfig::validate() const {
  auto check = [](double t) {
    if (!(t > 0 && t <= 2)) throw UsageError("tau must lie in (0, 2], got " + io::format_double(t));
  };
  check(tau);
  for (double t : sweep) check(t);
}

Point2 median_center(std::span<const Point2> points, CenterMethod method) {
  if (points.empty()) throw DataError("median_center of an empty point set");
  for (const auto& p : points) {
    if (!p.allFinite()) throw DataError("median_center: non-finite location");
  }
  if (method == CenterMethod::coordinate_median) {
    Point2 out;
    for (int axis = 0; axis < 2; ++axis) {
      std::vector<double> v;
      for (const auto& p : points) v.push_back(p[axis]);
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      out[axis] = n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
    }
    return out;
  }

  // Iterate in coordinates centred on the centroid so projected eastings and
  // northings keep their fractional digits.
  Point2 origin = Point2::Zero();
  for (const auto& p : points) origin += p;
  origin /= static_cast<double>(points.size());
  double scale = 0;
  for (const auto& p : points) scale = std::max(scale, (p - origin).norm());
  const double tolerance = kWeiszfeldTolerance * std::max(scale, 1.0);

  Point2 y = Point2::Zero();
  double previous_step = 0;
  for (std::size_t it = 0; it < kWeiszfeldMaxIterations; ++it) {
    Point2 num = Point2::Zero(), pull = Point2::Zero();
    double denom = 0, coincident = 0;
    const Point2* on = nullptr;
    for (const auto& q : points) {
      const Point2 p = q - origin;
      const double d = (p - y).norm();
      if (d == 0) {
        coincident += 1;
        on = &q;
        continue;
      }
      num += p / d;
      pull += (p - y) / d;
      denom += 1 / d;
    }
    if (denom == 0) return *on;  // every point coincides with y
    const Point2 t = num / denom;
    Point2 next = t;
    if (coincident > 0) {
      // Vardi-Zhang: stay on the data point when its weight balances the pull.
      const double r = pull.norm();
      if (r <= coincident) return *on;
      const double ratio = coincident / r;
      next = (1 - ratio) * t + ratio * y;
    }
    const double step = (next - y).norm();
    y = next;
    if (step == 0) break;
    // Convergence is linear near data points; bound the remaining error by
    // the geometric tail of the observed contraction.
    const double rate = previous_step > 0 ? std::min(step / previous_step, 0.999999) : 0.5;
    if (step * rate / (1 - rate) < tolerance) break;
    previous_step = step;
  }
  return origin + y;
}

std::vector<NearEntry> near_order(std::span<const GeoEntity> members, const Point2& anchor) {
  std::vector<NearEntry> out;
  out.reserve(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) out.push_back({i, (members[i].location - anchor).norm()});
  std::sort(out.begin(), out.end(), [&](const NearEntry& a, const NearEntry& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return members[a.member].building_id < members[b.member].building_id;
  });
  return out;
}

double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DataError("cosine_distance: dimension mismatch");
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0 || nv == 0) throw DataError("cosine_distance: zero vector");
  const double c = std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
  return 1.0 - c;
}

EmbeddingTable::EmbeddingTable(const io::EmbeddingStore& store)
    : dim_(store.dim), data_(store.data.begin(), store.data.end()) {}

EmbeddingTable::EmbeddingTable(std::size_t dim, std::vector<double> data) : dim_(dim), data_(std::move(data)) {
  if (dim_ == 0 || data_.size() % dim_) throw DataError("embedding table size is not a multiple of its dimension");
}

GroupAssignment group_buildings(std::span<const GeoEntity> ordered, const EmbeddingTable& embeddings, double tau) {
  if (!(tau > 0 && tau <= 2)) throw UsageError("tau must lie in (0, 2]");
  const std::size_t n = ordered.size();
  std::vector<std::span<const double>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = ordered[i];
    if (!e.embedding_row || *e.embedding_row >= embeddings.count()) {
      throw DataError("building " + e.building_id + " has no embedding");
    }
    rows[i] = embeddings.row(*e.embedding_row);
    if (std::all_of(rows[i].begin(), rows[i].end(), [](double x) { return x == 0; })) {
      throw DataError("building " + e.building_id + " has a zero embedding");
    }
  }

  GroupAssignment a;
  a.group.assign(n, 0);
  for (const auto& e : ordered) a.building_ids.push_back(e.building_id);
  int g = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (a.group[s]) continue;
    a.group[s] = ++g;
    a.seeds.push_back(ordered[s].building_id);
    for (std::size_t j = s + 1; j < n; ++j) {
      if (!a.group[j] && cosine_distance(rows[s], rows[j]) <= tau) a.group[j] = g;
    }
  }
  a.k_ratio = n ? static_cast<double>(n) / static_cast<double>(g) : 0.0;
  return a;
}

BoundingBox bounding_box(std::span<const GeoEntity> entities) {
  if (entities.empty()) throw DataError("bounding box of no entities");
  BoundingBox b{entities.front().location, entities.front().location};
  for (const auto& e : entities) {
    b.min = b.min.cwiseMin(e.location);
    b.max = b.max.cwiseMax(e.location);
  }
  return b;
}

std::vector<Boundary> make_tiles(std::span<const GeoEntity> entities, const BoundingBox& box, double tile_size) {
  if (!(tile_size > 0)) throw UsageError("tile size must be positive");
  std::map<std::pair<long long, long long>, Boundary> tiles;
  for (const auto& e : entities) {
    const auto ix = static_cast<long long>(std::floor((e.location.x() - box.min.x()) / tile_size));
    const auto iy = static_cast<long long>(std::floor((e.location.y() - box.min.y()) / tile_size));
    auto [it, fresh] = tiles.try_emplace({iy, ix});
    Boundary& b = it->second;
    if (fresh) {
      b.id = fmt::format("tile_{:04d}_{:04d}", iy, ix);
      b.kind = BoundaryKind::tile;
      const Point2 lo = box.min + Point2(static_cast<double>(ix), static_cast<double>(iy)) * tile_size;
      b.shape.push_back({{lo, lo + Point2(tile_size, 0), lo + Point2(tile_size, tile_size), lo + Point2(0, tile_size)}, {}});
    }
    b.members.push_back(e);
  }
  std::vector<Boundary> out;
  for (auto& [key, b] : tiles) out.push_back(std::move(b));
  std::sort(out.begin(), out.end(), [](const Boundary& a, const Boundary& b) { return a.id < b.id; });
  return out;
}

namespace {

bool on_segment(const Point2& a, const Point2& b, const Point2& p) {
  const Point2 ab = b - a, ap = p - a;
  const double cross = ab.x() * ap.y() - ab.y() * ap.x();
  const double scale = std::max({ab.cwiseAbs().maxCoeff(), ap.cwiseAbs().maxCoeff(), 1.0});
  if (std::abs(cross) > 1e-12 * scale * scale) return false;
  const double dot = ap.dot(ab);
  return dot >= 0 && dot <= ab.squaredNorm();
}

// Returns 1 inside, 0 outside, -1 on the boundary.
int ring_test(const Ring& ring, const Point2& p) {
  bool inside = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const Point2& a = ring[i];
    const Point2& b = ring[j];
    if (on_segment(a, b, p)) return -1;
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x) inside = !inside;
    }
  }
  return inside ? 1 : 0;
}

}  // namespace

bool point_in_polygon(const Polygon& polygon, const Point2& p) {
  if (polygon.exterior.size() < 3) return false;
  bool inside = false;
  auto toggle = [&](const Ring& r) {
    const int t = ring_test(r, p);
    if (t < 0) return true;
    if (t > 0) inside = !inside;
    return false;
  };
  if (toggle(polygon.exterior)) return true;
  for (const auto& h : polygon.holes) {
    if (h.size() >= 3 && toggle(h)) return true;
  }
  return inside;
}

namespace {

Ring parse_ring(const nlohmann::json& coords, const std::string& id) {
  Ring r;
  for (const auto& c : coords) {
    if (!c.is_array() || c.size() < 2) throw DataError("boundary " + id + ": malformed coordinate");
    r.emplace_back(c[0].get<double>(), c[1].get<double>());
  }
  if (r.size() > 1 && r.front() == r.back()) r.pop_back();
  if (r.size() < 3) throw DataError("boundary " + id + ": ring with fewer than 3 vertices");
  return r;
}

Polygon parse_polygon(const nlohmann::json& rings, const std::string& id) {
  if (!rings.is_array() || rings.empty()) throw DataError("boundary " + id + ": polygon without rings");
  Polygon p;
  p.exterior = parse_ring(rings[0], id);
  for (std::size_t i = 1; i < rings.size(); ++i) p.holes.push_back(parse_ring(rings[i], id));
  return p;
}

nlohmann::json ring_json(const Ring& r) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : r) a.push_back({p.x(), p.y()});
  if (!r.empty()) a.push_back({r.front().x(), r.front().y()});
  return a;
}

}  // namespace

std::vector<NamedPolygon> read_boundary_geojson(const nlohmann::json& doc) {
  try {
    if (doc.value("type", std::string()) != "FeatureCollection") throw DataError("boundaries must be a FeatureCollection");
    std::vector<NamedPolygon> out;
    for (const auto& f : doc.at("features")) {
      const auto& props = f.at("properties");
      if (!props.contains("boundary_id")) throw DataError("boundary feature without boundary_id property");
      const auto& idv = props.at("boundary_id");
      NamedPolygon np;
      np.boundary_id = idv.is_string() ? idv.get<std::string>() : idv.dump();
      const auto& geom = f.at("geometry");
      const auto type = geom.at("type").get<std::string>();
      if (type == "Polygon") {
        np.parts.push_back(parse_polygon(geom.at("coordinates"), np.boundary_id));
      } else if (type == "MultiPolygon") {
        for (const auto& poly : geom.at("coordinates")) np.parts.push_back(parse_polygon(poly, np.boundary_id));
      } else {
        throw DataError("boundary " + np.boundary_id + ": unsupported geometry type " + type);
      }
      out.push_back(std::move(np));
    }
    std::sort(out.begin(), out.end(),
              [](const NamedPolygon& a, const NamedPolygon& b) { return a.boundary_id < b.boundary_id; });
    for (std::size_t i = 1; i < out.size(); ++i) {
      if (out[i].boundary_id == out[i - 1].boundary_id) throw DataError("duplicate boundary_id " + out[i].boundary_id);
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed boundary GeoJSON: ") + e.what());
  }
}

Membership assign_to_polygons(std::span<const GeoEntity> entities, const std::vector<NamedPolygon>& polygons) {
  Membership m;
  for (const auto& np : polygons) {
    Boundary b;
    b.id = np.boundary_id;
    b.kind = BoundaryKind::administrative;
    b.shape = np.parts;
    m.boundaries.push_back(std::move(b));
  }
  for (const auto& e : entities) {
    bool placed = false;
    for (auto& b : m.boundaries) {
      for (const auto& part : b.shape) {
        if (point_in_polygon(part, e.location)) {
          b.members.push_back(e);
          placed = true;
          break;
        }
      }
      if (placed) break;
    }
    if (!placed) ++m.unassigned;
  }
  std::erase_if(m.boundaries, [](const Boundary& b) { return b.members.empty(); });
  return m;
}

std::vector<Boundary> boundaries_from_table(std::span<const GeoEntity> entities) {
  std::map<std::string, Boundary> by_id;
  for (const auto& e : entities) {
    if (e.boundary_id.empty()) throw DataError("entity " + e.building_id + " has no boundary_id");
    auto& b = by_id[e.boundary_id];
    b.id = e.boundary_id;
    b.members.push_back(e);
  }
  std::vector<Boundary> out;
  for (auto& [id, b] : by_id) out.push_back(std::move(b));
  return out;
}

std::vector<SummaryRow> RunResult::summary() const {
  std::vector<SummaryRow> rows;
  for (const auto& r : results) {
    rows.push_back({r.boundary_id, r.assignment.building_ids.size(), r.assignment.group_count(), r.assignment.k_ratio});
  }
  return rows;
}

RunResult run_boundaries(std::vector<Boundary> boundaries, const EmbeddingTable& embeddings, double tau,
                         CenterMethod method) {
  std::sort(boundaries.begin(), boundaries.end(), [](const Boundary& a, const Boundary& b) { return a.id < b.id; });
  std::vector<std::optional<BoundaryResult>> slots(boundaries.size());
  std::vector<std::string> reasons(boundaries.size());
  parallel_for(boundaries.size(), [&](std::size_t i) {
    const Boundary& b = boundaries[i];
    if (b.members.empty()) {
      reasons[i] = "no members";
      return;
    }
    for (const auto& m : b.members) {
      if (!m.embedding_row || *m.embedding_row >= embeddings.count()) {
        reasons[i] = "building " + m.building_id + " has no embedding";
        return;
      }
    }
    std::vector<Point2> locs;
    for (const auto& m : b.members) locs.push_back(m.location);
    BoundaryResult r{b.id, b.kind, median_center(locs, method), {}};
    const auto order = near_order(b.members, r.anchor);
    std::vector<GeoEntity> ordered;
    for (const auto& o : order) ordered.push_back(b.members[o.member]);
    try {
      r.assignment = group_buildings(ordered, embeddings, tau);
    } catch (const DataError& e) {
      reasons[i] = e.what();
      return;
    }
    for (const auto& o : order) r.assignment.nearness.push_back(o.distance);
    slots[i] = std::move(r);
  });
  RunResult run;
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    if (slots[i]) run.results.push_back(std::move(*slots[i]));
    else run.skipped.push_back({boundaries[i].id, reasons[i]});
  }
  return run;
}

void attach_embeddings(std::vector<GeoEntity>& entities, const std::vector<std::string>& embedding_ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < embedding_ids.size(); ++i) index.emplace(embedding_ids[i], i);
  for (auto& e : entities) {
    const auto it = index.find(e.building_id);
    e.embedding_row = it == index.end() ? std::nullopt : std::optional<std::size_t>(it->second);
  }
}

std::vector<GeoEntity> read_entities_csv(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  const std::size_t id = t.column("building_id"), x = t.column("x"), y = t.column("y");
  const long b = t.find_column("boundary_id");
  std::vector<GeoEntity> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = path.string() + " row " + std::to_string(r + 2);
    GeoEntity e;
    e.building_id = row[id];
    if (e.building_id.empty()) throw DataError(ctx + ": empty building_id");
    e.location = Point2(io::parse_double(row[x], ctx), io::parse_double(row[y], ctx));
    if (b >= 0) e.boundary_id = row[static_cast<std::size_t>(b)];
    out.push_back(std::move(e));
  }
  return out;
}

void write_entities_csv(const std::filesystem::path& path, std::span<const GeoEntity> entities) {
  const bool with_boundary =
      std::any_of(entities.begin(), entities.end(), [](const GeoEntity& e) { return !e.boundary_id.empty(); });
  std::string out = with_boundary ? "building_id,x,y,boundary_id\n" : "building_id,x,y\n";
  for (const auto& e : entities) {
    out += io::csv_field(e.building_id) + "," + io::format_double(e.location.x()) + "," +
           io::format_double(e.location.y());
    if (with_boundary) out += "," + io::csv_field(e.boundary_id);
    out += "\n";
  }
  io::write_file_atomic(path, out);
}

std::string assignment_csv(const RunResult& run) {
  std::string out = "building_id,boundary_id,group\n";
  for (const auto& r : run.results) {
    for (std::size_t i = 0; i < r.assignment.building_ids.size(); ++i) {
      out += io::csv_field(r.assignment.building_ids[i]) + "," + io::csv_field(r.boundary_id) + "," +
             std::to_string(r.assignment.group[i]) + "\n";
    }
  }
  return out;
}

std::string summary_csv(const RunResult& run) {
  std::string out = "boundary_id,count,groups,k_ratio\n";
  for (const auto& s : run.summary()) {
    out += io::csv_field(s.boundary_id) + "," + std::to_string(s.count) + "," + std::to_string(s.groups) + "," +
           io::format_double(s.k_ratio) + "\n";
  }
  return out;
}

nlohmann::json choropleth_geojson(const RunResult& run, const std::vector<Boundary>& boundaries) {
  std::map<std::string, const Boundary*> by_id;
  for (const auto& b : boundaries) by_id[b.id] = &b;
  nlohmann::json features = nlohmann::json::array();
  for (const auto& r : run.results) {
    nlohmann::json geom;
    const auto it = by_id.find(r.boundary_id);
    if (it != by_id.end() && !it->second->shape.empty()) {
      nlohmann::json polys = nlohmann::json::array();
      for (const auto& p : it->second->shape) {
        nlohmann::json rings = nlohmann::json::array({ring_json(p.exterior)});
        for (const auto& h : p.holes) rings.push_back(ring_json(h));
        polys.push_back(rings);
      }
      geom = polys.size() == 1 ? nlohmann::json{{"type", "Polygon"}, {"coordinates", polys[0]}}
                               : nlohmann::json{{"type", "MultiPolygon"}, {"coordinates", polys}};
    } else {
      geom = {{"type", "Point"}, {"coordinates", {r.anchor.x(), r.anchor.y()}}};
    }
    features.push_back({{"type", "Feature"},
                        {"geometry", geom},
                        {"properties",
                         {{"boundary_id", r.boundary_id},
                          {"kind", r.kind == BoundaryKind::tile ? "tile" : "administrative"},
                          {"count", r.assignment.building_ids.size()},
                          {"groups", r.assignment.group_count()},
                          {"k_ratio", r.assignment.k_ratio},
                          {"median_center", {r.anchor.x(), r.anchor.y()}}}}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

nlohmann::json points_geojson(const BoundaryResult& result, std::span<const GeoEntity> members) {
  std::unordered_map<std::string, const GeoEntity*> by_id;
  for (const auto& m : members) by_id.emplace(m.building_id, &m);
  const auto& a = result.assignment;
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t i = 0; i < a.building_ids.size(); ++i) {
    const auto it = by_id.find(a.building_ids[i]);
    if (it == by_id.end()) throw DataError("assignment lists unknown building " + a.building_ids[i]);
    const Point2& p = it->second->location;
    const int g = a.group[i];
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Point"}, {"coordinates", {p.x(), p.y()}}}},
                        {"properties",
                         {{"building_id", a.building_ids[i]},
                          {"boundary_id", result.boundary_id},
                          {"group", g},
                          {"seed", a.seeds[static_cast<std::size_t>(g - 1)] == a.building_ids[i]},
                          {"nearness_m", i < a.nearness.size() ? a.nearness[i] : 0.0}}}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

}  // namespace foldcity::geo
