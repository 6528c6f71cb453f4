#include "foldcity/cli/manifest.hpp"

#include <chrono>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "foldcity/digest.hpp"
#include "foldcity/error.hpp"
#include "foldcity/io/stores.hpp"

namespace foldcity::cli {

namespace fs = std::filesystem;

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(now));
}

void to_json(nlohmann::json& j, const FileRecord& f) {
  j = {{"path", f.path}, {"bytes", f.bytes}, {"sha256", f.sha256}};
}

void from_json(const nlohmann::json& j, FileRecord& f) {
  f.path = j.at("path").get<std::string>();
  f.bytes = j.at("bytes").get<std::uintmax_t>();
  f.sha256 = j.at("sha256").get<std::string>();
}

void to_json(nlohmann::json& j, const StageRecord& s) {
  j = {{"stage", s.stage},
       {"argv", s.argv},
       {"started_utc", s.started_utc},
       {"wall_seconds", s.wall_seconds},
       {"run_seed", s.run_seed},
       {"seed", s.seed},
       {"threads", s.threads},
       {"config", s.config},
       {"config_hash", s.config_hash},
       {"inputs", s.inputs},
       {"outputs", s.outputs},
       {"counts", s.counts}};
}

void from_json(const nlohmann::json& j, StageRecord& s) {
  s.stage = j.at("stage").get<std::string>();
  s.argv = j.value("argv", std::vector<std::string>{});
  s.started_utc = j.value("started_utc", "");
  s.wall_seconds = j.value("wall_seconds", 0.0);
  s.run_seed = j.value("run_seed", std::uint64_t{0});
  s.seed = j.value("seed", std::uint64_t{0});
  s.threads = j.value("threads", 0);
  s.config = j.value("config", nlohmann::json::object());
  s.config_hash = j.value("config_hash", "");
  s.inputs = j.value("inputs", std::vector<FileRecord>{});
  s.outputs = j.value("outputs", std::vector<FileRecord>{});
  s.counts = j.value("counts", nlohmann::json::object());
}

PipelineManifest PipelineManifest::open(const fs::path& path) {
  PipelineManifest m;
  m.path_ = path;
  if (!fs::exists(path)) return m;
  try {
    const auto j = nlohmann::json::parse(io::read_file(path));
    if (j.value("format", "") != "foldcity.manifest") throw DataError(path.string() + ": not a pipeline manifest");
    m.run_id_ = j.value("run_id", "");
    m.created_utc_ = j.value("created_utc", "");
    m.stages_ = j.at("stages").get<std::vector<StageRecord>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return m;
}

void PipelineManifest::append(StageRecord stage) {
  if (stage.config_hash.empty()) stage.config_hash = sha256_hex(stage.config.dump());
  if (run_id_.empty()) {
    created_utc_ = stage.started_utc;
    run_id_ = sha256_hex(created_utc_ + stage.config_hash).substr(0, 16);
  }
  stages_.push_back(std::move(stage));
}

nlohmann::json PipelineManifest::to_json() const {
  return {{"format", "foldcity.manifest"}, {"version", 1},          {"run_id", run_id_},
          {"created_utc", created_utc_},   {"tool_version", kToolVersion}, {"stages", stages_}};
}

void PipelineManifest::save() const { io::write_file_atomic(path_, to_json().dump(2) + "\n"); }

FileRecord PipelineManifest::describe(const fs::path& file) const {
  FileRecord r;
  const fs::path base = fs::absolute(path_).parent_path();
  const fs::path abs = fs::absolute(file).lexically_normal();
  const fs::path rel = abs.lexically_relative(base);
  r.path = (!rel.empty() && *rel.begin() != "..") ? rel.generic_string() : abs.generic_string();
  r.bytes = fs::file_size(file);
  r.sha256 = sha256_file(file);
  return r;
}

}  // namespace foldcity::cli
