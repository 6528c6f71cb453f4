#include "foldcity/io/stores.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "foldcity/error.hpp"

namespace foldcity::io {
namespace {

static_assert(std::endian::native == std::endian::little, "stores assume a little-endian host");

constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos, const std::string& what) {
  if (pos + 4 > in.size()) throw DataError(what + ": truncated header");
  std::uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

void write_ids(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  write_file_atomic(ids_sidecar(path), nlohmann::json(ids).dump() + "\n");
}

std::vector<std::string> read_ids(const std::filesystem::path& path, std::size_t expected) {
  const auto sidecar = ids_sidecar(path);
  std::vector<std::string> ids;
  try {
    ids = nlohmann::json::parse(read_file(sidecar)).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar.string() + ": " + e.what());
  }
  if (ids.size() != expected) {
    throw DataError(sidecar.string() + ": " + std::to_string(ids.size()) + " ids for " + std::to_string(expected) + " rows");
  }
  return ids;
}

std::string header_and_floats(const char* magic, std::uint32_t a, std::uint32_t b, std::uint32_t c,
                              const std::vector<float>& data) {
  std::string out(magic, 4);
  put_u32(out, kVersion);
  put_u32(out, a);
  put_u32(out, b);
  if (c) put_u32(out, c);
  out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  return out;
}

}  // namespace

std::filesystem::path ids_sidecar(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".ids.json");
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PointCloud CloudStore::cloud(std::size_t i) const {
  PointCloud c;
  c.source_id = ids.at(i);
  c.points.reserve(points_per_cloud);
  const float* p = data.data() + i * points_per_cloud * 3;
  for (std::uint32_t k = 0; k < points_per_cloud; ++k) c.points.emplace_back(p[3 * k], p[3 * k + 1], p[3 * k + 2]);
  return c;
}

void CloudStore::append(const PointCloud& c) {
  if (ids.empty() && points_per_cloud == 0) points_per_cloud = static_cast<std::uint32_t>(c.size());
  if (c.size() != points_per_cloud) throw DataError("cloud " + c.source_id + " has the wrong point count");
  ids.push_back(c.source_id);
  for (const Point3& p : c.points) {
    data.push_back(static_cast<float>(p.x()));
    data.push_back(static_cast<float>(p.y()));
    data.push_back(static_cast<float>(p.z()));
  }
}

void write_cloud_store(const std::filesystem::path& path, const CloudStore& store) {
  if (store.data.size() != store.count() * store.points_per_cloud * 3) throw DataError("cloud store size mismatch");
  write_file_atomic(path, header_and_floats("BPCL", static_cast<std::uint32_t>(store.count()), store.points_per_cloud, 0,
                                            store.data));
  write_ids(path, store.ids);
}

CloudStore read_cloud_store(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string what = path.string();
  if (bytes.size() < 4 || bytes.compare(0, 4, "BPCL") != 0) throw DataError(what + ": not a BPCL file");
  std::size_t pos = 4;
  if (get_u32(bytes, pos, what) != kVersion) throw DataError(what + ": unsupported BPCL version");
  const std::uint32_t count = get_u32(bytes, pos, what);
  CloudStore store;
  store.points_per_cloud = get_u32(bytes, pos, what);
  const std::size_t floats = static_cast<std::size_t>(count) * store.points_per_cloud * 3;
  if (bytes.size() - pos != floats * sizeof(float)) throw DataError(what + ": payload size does not match header");
  store.data.resize(floats);
  std::memcpy(store.data.data(), bytes.data() + pos, floats * sizeof(float));
  store.ids = read_ids(path, count);
  return store;
}

std::vector<double> EmbeddingStore::row(std::size_t i) const {
  if (i >= count()) throw DataError("embedding row out of range");
  return {data.begin() + static_cast<std::ptrdiff_t>(i * dim), data.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim)};
}

void write_embedding_store(const std::filesystem::path& path, const EmbeddingStore& store) {
  if (store.data.size() != store.count() * store.dim) throw DataError("embedding store size mismatch");
  write_file_atomic(path, header_and_floats("BEMB", static_cast<std::uint32_t>(store.count()), store.dim, 0, store.data));
  write_ids(path, store.ids);
}

EmbeddingStore read_embedding_store(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string what = path.string();
  if (bytes.size() < 4 || bytes.compare(0, 4, "BEMB") != 0) throw DataError(what + ": not a BEMB file");
  std::size_t pos = 4;
  if (get_u32(bytes, pos, what) != kVersion) throw DataError(what + ": unsupported BEMB version");
  const std::uint32_t count = get_u32(bytes, pos, what);
  EmbeddingStore store;
  store.dim = get_u32(bytes, pos, what);
  const std::size_t floats = static_cast<std::size_t>(count) * store.dim;
  if (bytes.size() - pos != floats * sizeof(float)) throw DataError(what + ": payload size does not match header");
  store.data.resize(floats);
  std::memcpy(store.data.data(), bytes.data() + pos, floats * sizeof(float));
  store.ids = read_ids(path, count);
  return store;
}

}  // namespace foldcity::io
