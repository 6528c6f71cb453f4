#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "foldcity/mesh/types.hpp"

namespace foldcity::io {

/// Fixed-size clouds: "BPCL", u32 version = 1, u32 cloud count, u32 points per
/// cloud, then float32 little-endian xyz rows. Ids live in `<path>.ids.json`.
struct CloudStore {
  std::uint32_t points_per_cloud = 0;
  std::vector<std::string> ids;
  std::vector<float> data;  ///< count * points_per_cloud * 3

  std::size_t count() const { return ids.size(); }
  PointCloud cloud(std::size_t i) const;
  void append(const PointCloud& cloud);
};

void write_cloud_store(const std::filesystem::path& path, const CloudStore& store);
CloudStore read_cloud_store(const std::filesystem::path& path);

/// Codewords: "BEMB", u32 version = 1, u32 count, u32 dim, float32 rows.
/// Ids live in `<path>.ids.json`.
struct EmbeddingStore {
  std::uint32_t dim = 0;
  std::vector<std::string> ids;
  std::vector<float> data;  ///< count * dim

  std::size_t count() const { return ids.size(); }
  std::vector<double> row(std::size_t i) const;
};

void write_embedding_store(const std::filesystem::path& path, const EmbeddingStore& store);
EmbeddingStore read_embedding_store(const std::filesystem::path& path);

std::filesystem::path ids_sidecar(const std::filesystem::path& path);

/// Writes bytes to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace foldcity::io
