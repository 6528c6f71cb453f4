#include "foldcity/ingest/citygml.hpp"

#include <expat.h>

#include <array>
#include <charconv>
#include <exception>
#include <memory>
#include <optional>
#include <sstream>
#include <unordered_set>

namespace foldcity::ingest {
namespace {

std::string_view local_name(const char* qname) {
  std::string_view s(qname);
  if (auto pos = s.rfind(':'); pos != std::string_view::npos) s.remove_prefix(pos + 1);
  return s;
}

bool is_member_wrapper(std::string_view name) {
  return name == "cityObjectMember" || name == "featureMember" || name == "featureMembers";
}

enum class RingKind { None, Exterior, Interior };

struct PendingBuilding {
  std::string id;
  std::optional<std::string> roof_type;
  std::optional<std::string> function;
  std::optional<std::string> measured_height;
  std::string srs_name;
  std::vector<PolygonSurface> polygons;
  std::unordered_set<std::string> polygon_ids;
  bool has_geometry_error = false;
  std::string geometry_error;
};

class CityGmlHandler {
 public:
  explicit CityGmlHandler(const std::function<void(BuildingRecord&&)>& sink) : sink_(sink) {}

  void start(const char* qname, const char** attrs) {
    const std::string_view name = local_name(qname);
    const std::size_t depth = stack_.size();
    const std::string_view parent = stack_.empty() ? std::string_view{} : std::string_view(stack_.back());
    stack_.emplace_back(name);

    std::string_view srs;
    std::string_view gml_id;
    std::string_view srs_dim;
    for (const char** a = attrs; a && *a; a += 2) {
      const std::string_view key = local_name(a[0]);
      if (key == "srsName") srs = a[1];
      else if (key == "id") gml_id = a[1];
      else if (key == "srsDimension") srs_dim = a[1];
    }
    if (!srs.empty()) {
      report_.srs_names.emplace(srs);
      if (building_) {
        if (building_->srs_name.empty()) building_->srs_name = std::string(srs);
      } else {
        document_srs_ = std::string(srs);
      }
    }

    if (skip_depth_) return;

    if (!building_ && is_member_wrapper(parent)) {
      if (name == "Building") {
        building_.emplace();
        building_->id = std::string(gml_id);
        building_depth_ = depth;
      } else {
        ++report_.non_building_skipped;
        skip_depth_ = depth + 1;
      }
      return;
    }
    if (!building_) return;

    if (ignore_depth_) return;
    if (name.starts_with("lod") && !name.starts_with("lod2") && lod2_depth_ == 0) {
      // LoD0/1/3/4 geometry is not consumed.
      ignore_depth_ = depth + 1;
      return;
    }
    if (name.starts_with("lod2")) ++lod2_depth_;

    if (lod2_depth_ > 0) {
      if (name == "Polygon") {
        polygon_.emplace();
        polygon_->id = std::string(gml_id);
      } else if (polygon_ && (name == "exterior" || name == "outerBoundaryIs")) {
        ring_kind_ = RingKind::Exterior;
      } else if (polygon_ && (name == "interior" || name == "innerBoundaryIs")) {
        ring_kind_ = RingKind::Interior;
      } else if (polygon_ && name == "LinearRing") {
        ring_.clear();
      } else if (polygon_ && (name == "posList" || name == "pos" || name == "coordinates")) {
        capture_ = true;
        text_.clear();
        dimension_ = 3;
        if (!srs_dim.empty()) {
          int d = 3;
          std::from_chars(srs_dim.data(), srs_dim.data() + srs_dim.size(), d);
          dimension_ = d;
        }
      }
      return;
    }

    if (name == "roofType" || name == "function" || name == "measuredHeight") {
      capture_ = true;
      text_.clear();
    }
  }

  void end(const char* qname) {
    const std::string_view name = local_name(qname);
    stack_.pop_back();
    const std::size_t depth = stack_.size();

    if (skip_depth_) {
      if (depth + 1 == skip_depth_) skip_depth_ = 0;
      return;
    }
    if (!building_) return;

    if (depth == building_depth_) {
      finish_building();
      return;
    }
    if (ignore_depth_) {
      if (depth + 1 == ignore_depth_) ignore_depth_ = 0;
      return;
    }

    if (lod2_depth_ > 0) {
      if (capture_ && (name == "posList" || name == "pos" || name == "coordinates")) {
        append_coordinates(name == "coordinates");
        capture_ = false;
      } else if (polygon_ && name == "LinearRing") {
        if (ring_kind_ == RingKind::Exterior) polygon_->exterior = open_ring(std::move(ring_));
        else if (ring_kind_ == RingKind::Interior) polygon_->interiors.push_back(open_ring(std::move(ring_)));
        ring_.clear();
      } else if (name == "exterior" || name == "interior" || name == "outerBoundaryIs" || name == "innerBoundaryIs") {
        ring_kind_ = RingKind::None;
      } else if (polygon_ && name == "Polygon") {
        const std::string& pid = polygon_->id;
        if (pid.empty() || building_->polygon_ids.insert(pid).second) building_->polygons.push_back(std::move(*polygon_));
        polygon_.reset();
      }
      if (name.starts_with("lod2")) --lod2_depth_;
      return;
    }

    if (capture_) {
      capture_ = false;
      std::string value = trim(text_);
      if (name == "roofType" && !building_->roof_type) building_->roof_type = value;
      else if (name == "function" && !building_->function) building_->function = value;
      else if (name == "measuredHeight" && !building_->measured_height) building_->measured_height = value;
    }
  }

  void text(const char* s, int len) {
    if (capture_) text_.append(s, static_cast<std::size_t>(len));
  }

  ParseReport& report() { return report_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  void append_coordinates(bool comma_tuples) {
    std::vector<double> values;
    const char* p = text_.data();
    const char* end = p + text_.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\n' || *p == '\t' || *p == '\r' || *p == ',')) ++p;
      if (p >= end) break;
      double v = 0;
      auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) {
        geometry_error("unparseable coordinate");
        return;
      }
      values.push_back(v);
      p = res.ptr;
    }
    const int dim = comma_tuples ? 3 : dimension_;
    if (dim != 3 || values.size() % 3 != 0) {
      geometry_error("coordinate list is not 3D");
      return;
    }
    for (std::size_t i = 0; i < values.size(); i += 3) ring_.emplace_back(values[i], values[i + 1], values[i + 2]);
  }

  void geometry_error(const std::string& what) {
    if (!building_->has_geometry_error) {
      building_->has_geometry_error = true;
      building_->geometry_error = what;
    }
  }

  void skip(const std::string& id, std::string reason) {
    report_.buildings_skipped.push_back({id, std::move(reason)});
  }

  void finish_building() {
    PendingBuilding b = std::move(*building_);
    building_.reset();
    lod2_depth_ = 0;
    ignore_depth_ = 0;
    polygon_.reset();
    capture_ = false;

    if (b.id.empty()) return skip(b.id, "missing_id");
    if (!seen_ids_.insert(b.id).second) return skip(b.id, "duplicate_id");
    if (b.has_geometry_error) return skip(b.id, "bad_coordinates: " + b.geometry_error);
    if (b.polygons.empty()) return skip(b.id, "no_lod2_geometry");

    MeshAssembler assembler;
    try {
      for (const auto& poly : b.polygons) assembler.add(poly);
    } catch (const TriangulationError& e) {
      return skip(b.id, std::string("triangulation_failed: ") + e.what());
    }

    BuildingRecord rec;
    rec.id = std::move(b.id);
    rec.roof_type = std::move(b.roof_type);
    rec.function = std::move(b.function);
    if (b.measured_height) {
      double h = 0;
      const std::string& s = *b.measured_height;
      auto res = std::from_chars(s.data(), s.data() + s.size(), h);
      if (res.ec == std::errc() && res.ptr == s.data() + s.size()) rec.measured_height = h;
    }
    rec.mesh = assembler.take();
    rec.anchor_point = footprint_centroid(rec.mesh);
    rec.srs_name = b.srs_name.empty() ? document_srs_ : b.srs_name;
    ++report_.buildings_parsed;
    sink_(std::move(rec));
  }

  const std::function<void(BuildingRecord&&)>& sink_;
  ParseReport report_;
  std::vector<std::string> stack_;
  std::unordered_set<std::string> seen_ids_;
  std::string document_srs_;

  std::optional<PendingBuilding> building_;
  std::size_t building_depth_ = 0;
  std::size_t skip_depth_ = 0;
  std::size_t ignore_depth_ = 0;
  int lod2_depth_ = 0;

  std::optional<PolygonSurface> polygon_;
  RingKind ring_kind_ = RingKind::None;
  std::vector<Point3> ring_;
  bool capture_ = false;
  int dimension_ = 3;
  std::string text_;
};

struct ParserDeleter {
  void operator()(XML_Parser p) const { XML_ParserFree(p); }
};

struct CallbackContext {
  CityGmlHandler* handler;
  XML_Parser parser;
  std::exception_ptr error;
};

void XMLCALL on_start(void* user, const XML_Char* name, const XML_Char** attrs) {
  auto* ctx = static_cast<CallbackContext*>(user);
  try {
    ctx->handler->start(name, attrs);
  } catch (...) {
    ctx->error = std::current_exception();
    XML_StopParser(ctx->parser, XML_FALSE);
  }
}

void XMLCALL on_end(void* user, const XML_Char* name) {
  auto* ctx = static_cast<CallbackContext*>(user);
  try {
    ctx->handler->end(name);
  } catch (...) {
    ctx->error = std::current_exception();
    XML_StopParser(ctx->parser, XML_FALSE);
  }
}

void XMLCALL on_text(void* user, const XML_Char* s, int len) {
  static_cast<CallbackContext*>(user)->handler->text(s, len);
}

}  // namespace

Point2 footprint_centroid(const TriangleMesh& mesh) {
  auto accumulate = [&](bool downward_only, Point2& c) {
    double total = 0;
    Point2 sum = Point2::Zero();
    for (const Triangle& t : mesh.triangles) {
      const Point3& a = mesh.vertices[t[0]];
      const Point3& b = mesh.vertices[t[1]];
      const Point3& d = mesh.vertices[t[2]];
      const double nz = (b.x() - a.x()) * (d.y() - a.y()) - (b.y() - a.y()) * (d.x() - a.x());
      if (downward_only && nz >= 0) continue;
      const double w = 0.5 * std::abs(nz);
      sum += w * (a.head<2>() + b.head<2>() + d.head<2>()) / 3.0;
      total += w;
    }
    if (total <= 0) return false;
    c = sum / total;
    return true;
  };
  Point2 c;
  if (accumulate(true, c) || accumulate(false, c)) return c;
  Point2 mean = Point2::Zero();
  for (const Point3& v : mesh.vertices) mean += v.head<2>();
  return mesh.vertices.empty() ? mean : Point2(mean / static_cast<double>(mesh.vertices.size()));
}

void ParseReport::merge(const ParseReport& other) {
  buildings_parsed += other.buildings_parsed;
  buildings_skipped.insert(buildings_skipped.end(), other.buildings_skipped.begin(), other.buildings_skipped.end());
  non_building_skipped += other.non_building_skipped;
  srs_names.insert(other.srs_names.begin(), other.srs_names.end());
}

void to_json(nlohmann::json& j, const ParseReport& r) {
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& s : r.buildings_skipped) skipped.push_back({{"id", s.id}, {"reason", s.reason}});
  j = nlohmann::json{{"buildings_parsed", r.buildings_parsed},
                     {"buildings_skipped", skipped},
                     {"non_building_skipped", r.non_building_skipped},
                     {"srs_names", r.srs_names}};
}

ParseReport parse_citygml(std::istream& in, const std::function<void(BuildingRecord&&)>& sink) {
  CityGmlHandler handler(sink);
  std::unique_ptr<XML_ParserStruct, ParserDeleter> parser(XML_ParserCreate(nullptr));
  if (!parser) throw Error("cannot create XML parser");
  CallbackContext ctx{&handler, parser.get(), nullptr};
  XML_SetUserData(parser.get(), &ctx);
  XML_SetElementHandler(parser.get(), on_start, on_end);
  XML_SetCharacterDataHandler(parser.get(), on_text);

  std::array<char, 1 << 16> buf{};
  for (;;) {
    in.read(buf.data(), buf.size());
    const auto got = static_cast<int>(in.gcount());
    const bool final = got < static_cast<int>(buf.size());
    if (XML_Parse(parser.get(), buf.data(), got, final ? XML_TRUE : XML_FALSE) == XML_STATUS_ERROR) {
      if (ctx.error) std::rethrow_exception(ctx.error);
      const auto offset = static_cast<std::size_t>(XML_GetCurrentByteIndex(parser.get()));
      throw XmlError("malformed XML at byte " + std::to_string(offset) + ": " +
                         XML_ErrorString(XML_GetErrorCode(parser.get())),
                     offset);
    }
    if (final) break;
  }
  return std::move(handler.report());
}

ParseResult parse_citygml(std::istream& in) {
  ParseResult result;
  result.report = parse_citygml(in, [&](BuildingRecord&& r) { result.buildings.push_back(std::move(r)); });
  return result;
}

ParseResult parse_citygml(std::string_view document) {
  std::istringstream in{std::string(document)};
  return parse_citygml(in);
}

namespace {

void write_number(std::ostream& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, res.ptr - buf);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_ring(std::ostream& out, const std::vector<Point3>& ring) {
  out << "<gml:LinearRing><gml:posList srsDimension=\"3\">";
  for (std::size_t i = 0; i <= ring.size(); ++i) {
    const Point3& p = ring[i % ring.size()];
    if (i) out << ' ';
    write_number(out, p.x());
    out << ' ';
    write_number(out, p.y());
    out << ' ';
    write_number(out, p.z());
  }
  out << "</gml:posList></gml:LinearRing>";
}

}  // namespace

void write_citygml(std::ostream& out, const std::vector<CityGmlBuilding>& buildings, const std::string& srs_name) {
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         "<core:CityModel xmlns:core=\"http://www.opengis.net/citygml/2.0\" "
         "xmlns:bldg=\"http://www.opengis.net/citygml/building/2.0\" "
         "xmlns:gml=\"http://www.opengis.net/gml\">\n";
  out << "<gml:boundedBy><gml:Envelope srsName=\"" << xml_escape(srs_name) << "\" srsDimension=\"3\"/></gml:boundedBy>\n";
  for (const auto& b : buildings) {
    out << "<core:cityObjectMember><bldg:Building gml:id=\"" << xml_escape(b.id) << "\">\n";
    if (b.function) out << "<bldg:function>" << xml_escape(*b.function) << "</bldg:function>\n";
    if (b.roof_type) out << "<bldg:roofType>" << xml_escape(*b.roof_type) << "</bldg:roofType>\n";
    if (b.measured_height) {
      out << "<bldg:measuredHeight uom=\"m\">";
      write_number(out, *b.measured_height);
      out << "</bldg:measuredHeight>\n";
    }
    out << "<bldg:lod2Solid><gml:Solid><gml:exterior><gml:CompositeSurface>\n";
    for (std::size_t i = 0; i < b.surfaces.size(); ++i) {
      const auto& s = b.surfaces[i];
      out << "<gml:surfaceMember><gml:Polygon gml:id=\"" << xml_escape(b.id) << "_p" << i << "\"><gml:exterior>";
      write_ring(out, s.exterior);
      out << "</gml:exterior>";
      for (const auto& hole : s.interiors) {
        out << "<gml:interior>";
        write_ring(out, hole);
        out << "</gml:interior>";
      }
      out << "</gml:Polygon></gml:surfaceMember>\n";
    }
    out << "</gml:CompositeSurface></gml:exterior></gml:Solid></bldg:lod2Solid>\n";
    out << "</bldg:Building></core:cityObjectMember>\n";
  }
  out << "</core:CityModel>\n";
}

}  // namespace foldcity::ingest
