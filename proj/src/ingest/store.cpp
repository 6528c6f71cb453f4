#include "foldcity/ingest/store.hpp"

#include <bit>
#include <cstring>

#include <nlohmann/json.hpp>

#include "foldcity/error.hpp"
#include "foldcity/io/stores.hpp"

namespace foldcity::ingest {
namespace {

static_assert(std::endian::native == std::endian::little, "stores assume a little-endian host");

constexpr char kMagic[4] = {'B', 'M', 'S', 'H'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw DataError(what_ + ": truncated at byte " + std::to_string(pos_));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

std::filesystem::path attributes_sidecar(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

void write_building_store(const std::filesystem::path& path, std::span<const BuildingRecord> buildings) {
  std::string out(kMagic, 4);
  put(out, kVersion);
  put(out, static_cast<std::uint32_t>(buildings.size()));
  nlohmann::json attrs = nlohmann::json::array();
  for (const auto& b : buildings) {
    put(out, static_cast<std::uint32_t>(b.mesh.vertices.size()));
    put(out, static_cast<std::uint32_t>(b.mesh.triangles.size()));
    for (const auto& v : b.mesh.vertices) {
      put(out, v.x());
      put(out, v.y());
      put(out, v.z());
    }
    for (const auto& t : b.mesh.triangles) {
      for (auto i : t) put(out, i);
    }
    nlohmann::json a{{"id", b.id}, {"anchor", {b.anchor_point.x(), b.anchor_point.y()}}, {"srs_name", b.srs_name}};
    if (b.roof_type) a["roof_type"] = *b.roof_type;
    if (b.function) a["function"] = *b.function;
    if (b.measured_height) a["measured_height"] = *b.measured_height;
    attrs.push_back(std::move(a));
  }
  io::write_file_atomic(path, out);
  io::write_file_atomic(attributes_sidecar(path), attrs.dump(1) + "\n");
}

std::vector<BuildingRecord> read_building_store(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  const std::string what = path.string();
  Reader r(bytes, what);
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError(what + ": not a building store");
  if (const auto v = r.get<std::uint32_t>(); v != kVersion) {
    throw DataError(what + ": unsupported version " + std::to_string(v));
  }
  const auto count = r.get<std::uint32_t>();

  nlohmann::json attrs;
  const auto sidecar = attributes_sidecar(path);
  try {
    attrs = nlohmann::json::parse(io::read_file(sidecar));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar.string() + ": " + e.what());
  }
  if (!attrs.is_array() || attrs.size() != count) {
    throw DataError(sidecar.string() + ": expected " + std::to_string(count) + " attribute entries");
  }

  std::vector<BuildingRecord> out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    BuildingRecord& b = out[i];
    const auto nv = r.get<std::uint32_t>(), nt = r.get<std::uint32_t>();
    b.mesh.vertices.resize(nv);
    for (auto& v : b.mesh.vertices) {
      const double x = r.get<double>(), y = r.get<double>(), z = r.get<double>();
      v = Point3(x, y, z);
    }
    b.mesh.triangles.resize(nt);
    for (auto& t : b.mesh.triangles) {
      for (auto& idx : t) {
        idx = r.get<std::uint32_t>();
        if (idx >= nv) throw DataError(what + ": building " + std::to_string(i) + " has an index out of range");
      }
    }
    try {
      const auto& a = attrs[i];
      b.id = a.at("id").get<std::string>();
      b.anchor_point = Point2(a.at("anchor").at(0).get<double>(), a.at("anchor").at(1).get<double>());
      b.srs_name = a.value("srs_name", "");
      if (a.contains("roof_type")) b.roof_type = a["roof_type"].get<std::string>();
      if (a.contains("function")) b.function = a["function"].get<std::string>();
      if (a.contains("measured_height")) b.measured_height = a["measured_height"].get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(sidecar.string() + " entry " + std::to_string(i) + ": " + e.what());
    }
  }
  if (!r.done()) throw DataError(what + ": trailing bytes");
  return out;
}

}  // namespace foldcity::ingest
