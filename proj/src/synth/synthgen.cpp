#include "foldcity/synth/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "foldcity/error.hpp"
#include "foldcity/ingest/polygon.hpp"
#include "foldcity/io/csv.hpp"
#include "foldcity/parallel.hpp"
#include "foldcity/rng.hpp"

namespace foldcity::synth {
namespace {

// Roof height fraction a*x + b*y + c in local footprint coordinates.
struct Plane {
  double a, b, c;
  double at(const Point2& p) const { return a * p.x() + b * p.y() + c; }
};

struct Cell {
  double x0, y0, x1, y1;
};

struct Layout {
  std::vector<double> xs, ys;
  std::vector<std::vector<bool>> present;  // [row][col]

  bool has(long row, long col) const {
    if (row < 0 || col < 0 || row >= static_cast<long>(present.size())) return false;
    if (col >= static_cast<long>(present[static_cast<std::size_t>(row)].size())) return false;
    return present[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)];
  }
};

Layout layout(const SynthSpec& s) {
  const double w = s.width, d = s.depth;
  switch (s.footprint) {
    case Footprint::rect:
      return {{0, w}, {0, d}, {{true}}};
    case Footprint::L:
      return {{0, w / 2, w}, {0, d / 2, d}, {{true, true}, {true, false}}};
    case Footprint::U:
      return {{0, w / 3, 2 * w / 3, w}, {0, d / 2, d}, {{true, true, true}, {true, false, true}}};
  }
  throw UsageError("unknown footprint");
}

double hip_inset(const SynthSpec& s) { return s.hip_inset.value_or(std::min(s.width, s.depth) / 2); }

std::vector<Plane> roof_planes(const SynthSpec& s) {
  const double w = s.width, d = s.depth, half = d / 2;
  switch (s.roof) {
    case Roof::flat:
      return {};
    case Roof::pent:
      return {{0, 1 / d, 0}};
    case Roof::gable:
    case Roof::hip: {
      std::vector<Plane> p{{0, 1 / half, 0}, {0, -1 / half, d / half}};
      const double inset = hip_inset(s);
      if (s.roof == Roof::hip && inset > 0) {
        p.push_back({1 / inset, 0, 0});
        p.push_back({-1 / inset, 0, w / inset});
      }
      return p;
    }
  }
  throw UsageError("unknown roof");
}

double signed_area(const std::vector<Point2>& poly) {
  double a = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return a / 2;
}

// Keeps the part with (k - j)(p) <= 0.
std::vector<Point2> clip(const std::vector<Point2>& poly, const Plane& k, const Plane& j) {
  const Plane diff{k.a - j.a, k.b - j.b, k.c - j.c};
  std::vector<Point2> out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % poly.size()];
    const double sp = diff.at(p), sq = diff.at(q);
    if (sp <= 0) out.push_back(p);
    if ((sp < 0 && sq > 0) || (sp > 0 && sq < 0)) out.push_back(p + (sp / (sp - sq)) * (q - p));
  }
  return out;
}

// Merges points closer than the tolerance so shared corners are bit-identical.
class Snapper {
 public:
  explicit Snapper(double tol) : tol_(tol) {}
  Point2 operator()(const Point2& p) {
    for (const Point2& r : seen_) {
      if ((r - p).norm() <= tol_) return r;
    }
    seen_.push_back(p);
    return p;
  }

 private:
  double tol_;
  std::vector<Point2> seen_;
};

std::vector<Point2> tidy(const std::vector<Point2>& poly, Snapper& snap) {
  std::vector<Point2> out;
  for (const Point2& p : poly) {
    const Point2 s = snap(p);
    if (out.empty() || out.back() != s) out.push_back(s);
  }
  while (out.size() > 1 && out.front() == out.back()) out.pop_back();
  return out;
}

Point2 footprint_centroid_local(const Layout& l) {
  double area = 0;
  Point2 c = Point2::Zero();
  for (std::size_t r = 0; r + 1 < l.ys.size(); ++r) {
    for (std::size_t col = 0; col + 1 < l.xs.size(); ++col) {
      if (!l.present[r][col]) continue;
      const double a = (l.xs[col + 1] - l.xs[col]) * (l.ys[r + 1] - l.ys[r]);
      area += a;
      c += a * Point2((l.xs[col] + l.xs[col + 1]) / 2, (l.ys[r] + l.ys[r + 1]) / 2);
    }
  }
  return c / area;
}

std::string_view size_name(SizeClass s) {
  switch (s) {
    case SizeClass::small:
      return "small";
    case SizeClass::medium:
      return "medium";
    case SizeClass::large:
      return "large";
  }
  return "medium";
}

struct SizeRange {
  double w0, w1, d0, d1, e0, e1;
};

SizeRange size_range(SizeClass s) {
  switch (s) {
    case SizeClass::small:
      return {6, 10, 5, 8, 3, 5};
    case SizeClass::medium:
      return {10, 16, 8, 12, 5, 9};
    case SizeClass::large:
      return {18, 30, 12, 18, 8, 14};
  }
  return {10, 16, 8, 12, 5, 9};
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string_view to_string(Footprint f) {
  switch (f) {
    case Footprint::rect:
      return "rect";
    case Footprint::L:
      return "L";
    case Footprint::U:
      return "U";
  }
  return "?";
}

std::string_view to_string(Roof r) {
  switch (r) {
    case Roof::flat:
      return "flat";
    case Roof::gable:
      return "gable";
    case Roof::hip:
      return "hip";
    case Roof::pent:
      return "pent";
  }
  return "?";
}

Footprint parse_footprint(std::string_view name) {
  for (Footprint f : {Footprint::rect, Footprint::L, Footprint::U}) {
    if (name == to_string(f)) return f;
  }
  throw UsageError(fmt::format("unknown footprint '{}' (rect, L, U)", name));
}

Roof parse_roof(std::string_view name) {
  for (Roof r : {Roof::flat, Roof::gable, Roof::hip, Roof::pent}) {
    if (name == to_string(r)) return r;
  }
  throw UsageError(fmt::format("unknown roof '{}' (flat, gable, hip, pent)", name));
}

void SynthSpec::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0; };
  if (!positive(width) || !positive(depth) || !positive(eave_height)) {
    throw UsageError(fmt::format("{}: width, depth and eave height must be positive", building_id()));
  }
  if (!std::isfinite(roof_height) || roof_height < 0) throw UsageError(building_id() + ": negative roof height");
  if ((roof == Roof::flat) != (roof_height == 0)) {
    throw UsageError(building_id() + ": roof height must be zero exactly for flat roofs");
  }
  if (hip_inset && !(*hip_inset >= 0 && *hip_inset <= width / 2)) {
    throw UsageError(building_id() + ": hip inset must lie in [0, width / 2]");
  }
  if (!location.allFinite()) throw UsageError(building_id() + ": non-finite location");
}

std::string SynthSpec::building_id() const { return id.empty() ? fmt::format("synth_{:016x}", seed) : id; }

double footprint_area(const SynthSpec& spec) {
  switch (spec.footprint) {
    case Footprint::rect:
      return spec.width * spec.depth;
    case Footprint::L:
      return spec.width * spec.depth * 0.75;
    case Footprint::U:
      return spec.width * spec.depth * 5.0 / 6.0;
  }
  return 0;
}

std::vector<ingest::PolygonSurface> surfaces(const SynthSpec& spec) {
  spec.validate();
  const Layout l = layout(spec);
  const std::vector<Plane> planes = roof_planes(spec);
  const double scale = std::max(spec.width, spec.depth);
  Snapper snap(1e-9 * scale);
  const Point2 offset = spec.location - footprint_centroid_local(l);
  const std::string id = spec.building_id();

  auto height = [&](const Point2& p) {
    if (planes.empty()) return spec.eave_height;
    double f = planes.front().at(p);
    for (const Plane& q : planes) f = std::min(f, q.at(p));
    return spec.eave_height + spec.roof_height * f;
  };
  auto world = [&](const Point2& p, double z) { return Point3(p.x() + offset.x(), p.y() + offset.y(), z); };

  std::vector<ingest::PolygonSurface> floors, walls, roofs;
  for (std::size_t r = 0; r + 1 < l.ys.size(); ++r) {
    for (std::size_t c = 0; c + 1 < l.xs.size(); ++c) {
      if (!l.present[r][c]) continue;
      const Cell cell{l.xs[c], l.ys[r], l.xs[c + 1], l.ys[r + 1]};
      const std::vector<Point2> rect = tidy(
          {{cell.x0, cell.y0}, {cell.x1, cell.y0}, {cell.x1, cell.y1}, {cell.x0, cell.y1}}, snap);

      std::vector<std::vector<Point2>> pieces;
      if (planes.empty()) {
        pieces.push_back(rect);
      } else {
        for (std::size_t k = 0; k < planes.size(); ++k) {
          std::vector<Point2> poly = rect;
          for (std::size_t j = 0; j < planes.size() && poly.size() >= 3; ++j) {
            if (j != k) poly = clip(poly, planes[k], planes[j]);
          }
          poly = tidy(poly, snap);
          if (poly.size() >= 3 && signed_area(poly) > 1e-9 * scale * scale) pieces.push_back(std::move(poly));
        }
      }

      ingest::PolygonSurface floor{fmt::format("{}_floor_{}", id, floors.size()), {}, {}};
      for (auto it = rect.rbegin(); it != rect.rend(); ++it) floor.exterior.push_back(world(*it, 0));
      floors.push_back(std::move(floor));

      for (const auto& piece : pieces) {
        ingest::PolygonSurface roof{fmt::format("{}_roof_{}", id, roofs.size()), {}, {}};
        for (const Point2& p : piece) roof.exterior.push_back(world(p, height(p)));
        roofs.push_back(std::move(roof));
      }

      // Cell edges counter-clockwise, with the neighbour across each.
      const long ri = static_cast<long>(r), ci = static_cast<long>(c);
      const std::array<std::pair<long, long>, 4> across{{{ri - 1, ci}, {ri, ci + 1}, {ri + 1, ci}, {ri, ci - 1}}};
      for (std::size_t e = 0; e < 4; ++e) {
        if (l.has(across[e].first, across[e].second)) continue;
        const Point2 a = rect[e], b = rect[(e + 1) % 4];
        const Point2 dir = b - a;
        const double len2 = dir.squaredNorm();
        std::vector<std::pair<double, Point2>> top;
        for (const auto& piece : pieces) {
          for (const Point2& p : piece) {
            const double t = (p - a).dot(dir) / len2;
            const double off = std::abs(dir.x() * (p.y() - a.y()) - dir.y() * (p.x() - a.x())) / std::sqrt(len2);
            if (off <= 1e-9 * scale && t >= -1e-12 && t <= 1 + 1e-12) top.emplace_back(t, p);
          }
        }
        std::sort(top.begin(), top.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
        top.erase(std::unique(top.begin(), top.end(), [](const auto& x, const auto& y) { return x.second == y.second; }),
                  top.end());
        ingest::PolygonSurface wall{fmt::format("{}_wall_{}", id, walls.size()), {world(a, 0), world(b, 0)}, {}};
        for (const auto& [t, p] : top) wall.exterior.push_back(world(p, height(p)));
        walls.push_back(std::move(wall));
      }
    }
  }

  std::vector<ingest::PolygonSurface> out;
  out.reserve(floors.size() + walls.size() + roofs.size());
  for (auto* group : {&floors, &walls, &roofs}) {
    for (auto& s : *group) out.push_back(std::move(s));
  }
  return out;
}

ingest::BuildingRecord generate(const SynthSpec& spec) {
  ingest::MeshAssembler assembler;
  for (const auto& s : surfaces(spec)) assembler.add(s);
  ingest::BuildingRecord rec;
  rec.id = spec.building_id();
  rec.roof_type = std::string(to_string(spec.roof));
  rec.function = std::string(to_string(spec.footprint));
  rec.measured_height = spec.eave_height + spec.roof_height;
  rec.anchor_point = spec.location;
  rec.mesh = assembler.take();
  return rec;
}

ingest::CityGmlBuilding citygml_building(const SynthSpec& spec) {
  return {spec.building_id(), std::string(to_string(spec.roof)), std::string(to_string(spec.footprint)),
          spec.eave_height + spec.roof_height, surfaces(spec)};
}

std::string Family::name() const {
  return fmt::format("{}-{}-{}", to_string(footprint), to_string(roof), size_name(size));
}

Family parse_family(std::string_view text) {
  text = trim(text);
  Family f;
  std::string_view name = text;
  if (const auto colon = text.find(':'); colon != std::string_view::npos) {
    name = trim(text.substr(0, colon));
    f.weight = io::parse_double(trim(text.substr(colon + 1)), fmt::format("weight of family '{}'", name));
    if (!(f.weight > 0) || !std::isfinite(f.weight)) throw UsageError(fmt::format("family '{}': weight must be positive", name));
  }
  std::vector<std::string_view> parts;
  for (std::size_t start = 0;;) {
    const auto dash = name.find('-', start);
    parts.push_back(name.substr(start, dash == std::string_view::npos ? dash : dash - start));
    if (dash == std::string_view::npos) break;
    start = dash + 1;
  }
  if (parts.size() < 2 || parts.size() > 3) {
    throw UsageError(fmt::format("family '{}' is not <footprint>-<roof>[-<size>]", name));
  }
  f.footprint = parse_footprint(parts[0]);
  f.roof = parse_roof(parts[1]);
  if (parts.size() == 3) {
    if (parts[2] == "small") f.size = SizeClass::small;
    else if (parts[2] == "medium") f.size = SizeClass::medium;
    else if (parts[2] == "large") f.size = SizeClass::large;
    else throw UsageError(fmt::format("unknown size class '{}' (small, medium, large)", parts[2]));
  }
  return f;
}

std::vector<Family> parse_mix(std::string_view text) {
  std::vector<Family> mix;
  for (std::size_t start = 0; start <= text.size();) {
    const auto comma = text.find(',', start);
    const auto item = trim(text.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (!item.empty()) mix.push_back(parse_family(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (mix.empty()) throw UsageError("empty family mix");
  return mix;
}

std::string format_mix(std::span<const Family> mix) {
  std::string out;
  for (const Family& f : mix) {
    if (!out.empty()) out += ',';
    out += fmt::format("{}:{}", f.name(), io::format_double(f.weight));
  }
  return out;
}

std::vector<Family> three_family_mix() {
  return {{Footprint::rect, Roof::flat, SizeClass::small, 1},
          {Footprint::rect, Roof::gable, SizeClass::large, 1},
          {Footprint::U, Roof::flat, SizeClass::medium, 1}};
}

Dataset generate_dataset(std::size_t count, std::span<const Family> mix, const Area& area, std::uint64_t seed) {
  if (count == 0) throw UsageError("dataset count must be at least 1");
  if (mix.empty()) throw UsageError("empty family mix");
  if (!(area.max.x() > area.min.x() && area.max.y() > area.min.y())) throw UsageError("empty bounding box");

  // Largest remainder keeps family counts proportional to the weights.
  const double total = std::accumulate(mix.begin(), mix.end(), 0.0, [](double s, const Family& f) { return s + f.weight; });
  std::vector<std::size_t> quota(mix.size());
  std::vector<std::pair<double, std::size_t>> remainder;
  std::size_t assigned = 0;
  for (std::size_t f = 0; f < mix.size(); ++f) {
    const double exact = static_cast<double>(count) * mix[f].weight / total;
    quota[f] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[f];
    remainder.emplace_back(exact - std::floor(exact), f);
  }
  std::stable_sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < count; ++i, ++assigned) ++quota[remainder[i % remainder.size()].second];

  const std::uint64_t base = salted_seed(seed, "synth");
  Dataset ds;
  for (std::size_t f = 0; f < mix.size(); ++f) ds.family.insert(ds.family.end(), quota[f], f);
  SplitMix64 order(salted_seed(base, "order"));
  shuffle(ds.family, order);

  ds.specs.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Family& fam = mix[ds.family[i]];
    SplitMix64 rng(salted_seed(base, static_cast<std::uint64_t>(i)));
    const SizeRange r = size_range(fam.size);
    SynthSpec& s = ds.specs[i];
    s.id = fmt::format("synth_{:06d}", i);
    s.seed = salted_seed(base, static_cast<std::uint64_t>(i));
    s.footprint = fam.footprint;
    s.roof = fam.roof;
    s.width = rng.uniform(r.w0, r.w1);
    s.depth = rng.uniform(r.d0, r.d1);
    s.eave_height = rng.uniform(r.e0, r.e1);
    const double pitch = rng.uniform(0.3, 0.5);
    s.roof_height = fam.roof == Roof::flat ? 0.0 : pitch * s.depth;
    s.location = Point2(rng.uniform(area.min.x(), area.max.x()), rng.uniform(area.min.y(), area.max.y()));
  }
  ds.records.resize(count);
  parallel_for(count, [&](std::size_t i) { ds.records[i] = generate(ds.specs[i]); });
  return ds;
}

std::string labels_csv(std::span<const SynthSpec> specs) {
  std::string out = "building_id,footprint,roof,width,depth,eave_height,roof_height\n";
  for (const SynthSpec& s : specs) {
    out += fmt::format("{},{},{},{},{},{},{}\n", io::csv_field(s.building_id()), to_string(s.footprint),
                       to_string(s.roof), io::format_double(s.width), io::format_double(s.depth),
                       io::format_double(s.eave_height), io::format_double(s.roof_height));
  }
  return out;
}

std::vector<Label> parse_labels_csv(std::string_view text, const std::string& source) {
  const io::CsvTable t = io::parse_csv(text, source);
  const std::size_t ci = t.column("building_id"), cf = t.column("footprint"), cr = t.column("roof"),
                    cw = t.column("width"), cd = t.column("depth"), ce = t.column("eave_height"),
                    ch = t.column("roof_height");
  std::vector<Label> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string ctx = fmt::format("{} row {}", source, i + 2);
    Label l;
    l.building_id = row[ci];
    try {
      l.footprint = parse_footprint(row[cf]);
      l.roof = parse_roof(row[cr]);
    } catch (const UsageError& e) {
      throw DataError(ctx + ": " + e.what());
    }
    l.width = io::parse_double(row[cw], ctx);
    l.depth = io::parse_double(row[cd], ctx);
    l.eave_height = io::parse_double(row[ce], ctx);
    l.roof_height = io::parse_double(row[ch], ctx);
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace foldcity::synth
