#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace foldcity::cli {

inline constexpr const char* kToolVersion = "0.1.0";

struct FileRecord {
  std::string path;  ///< relative to the manifest directory when below it
  std::uintmax_t bytes = 0;
  std::string sha256;
};

struct StageRecord {
  std::string stage;
  std::vector<std::string> argv;
  std::string started_utc;
  double wall_seconds = 0;
  std::uint64_t run_seed = 0;
  std::uint64_t seed = 0;  ///< stage-salted
  int threads = 0;
  nlohmann::json config;  ///< effective options after flag > file > default
  std::string config_hash;
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;
  nlohmann::json counts = nlohmann::json::object();
};

/// Append-only record of pipeline stages. Saved atomically after each stage.
class PipelineManifest {
 public:
  /// Loads `path` when it exists, otherwise starts an empty manifest.
  static PipelineManifest open(const std::filesystem::path& path);

  void append(StageRecord stage);
  void save() const;

  const std::filesystem::path& path() const { return path_; }
  const std::string& run_id() const { return run_id_; }
  const std::vector<StageRecord>& stages() const { return stages_; }
  nlohmann::json to_json() const;

  /// Size and SHA-256 of a file, with its path made relative to the manifest.
  FileRecord describe(const std::filesystem::path& file) const;

 private:
  std::filesystem::path path_;
  std::string run_id_;
  std::string created_utc_;
  std::vector<StageRecord> stages_;
};

std::string utc_now();

void to_json(nlohmann::json& j, const FileRecord& f);
void from_json(const nlohmann::json& j, FileRecord& f);
void to_json(nlohmann::json& j, const StageRecord& s);
void from_json(const nlohmann::json& j, StageRecord& s);

}  // namespace foldcity::cli
