#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace foldcity::cli {

namespace fs = std::filesystem;

/// What a command consumed and produced; the front end adds timing and
/// digests before appending it to the manifest.
struct StageResult {
  nlohmann::json config;
  std::uint64_t seed = 0;  ///< stage-salted seed actually used
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  nlohmann::json counts = nlohmann::json::object();
};

struct SynthOptions {
  std::size_t count = 300;
  std::string mix = "rect-flat-small:1,rect-gable-large:1,U-flat-medium:1";
  std::string bbox = "0,0,2000,2000";  ///< xmin,ymin,xmax,ymax in metres
  std::string format = "gml";          ///< gml | obj
  std::string srs = "EPSG:25833";
  fs::path out;
};

struct IngestOptions {
  std::vector<fs::path> inputs;  ///< CityGML/OBJ files or directories
  fs::path out;
};

struct SampleOptions {
  fs::path store;
  std::string preset = "desk";  ///< desk: 64 points, paper: 2048
  std::size_t points = 0;       ///< 0: from the preset
  std::string split;            ///< "a:b" or empty
  double lo_pct = 1;
  double hi_pct = 99;
  fs::path out;
};

struct TrainOptions {
  fs::path clouds;
  std::string preset = "desk";  ///< desk | paper
  std::size_t codeword_dim = 0;  ///< 0: from the preset
  std::size_t epochs = 0;        ///< 0 with given_epochs false: from the preset
  bool given_epochs = false;
  double lr = 0;  ///< 0: from the preset
  std::size_t batch = 0;
  std::size_t checkpoint_every = 0;
  fs::path resume;
  fs::path out;
};

struct EncodeOptions {
  fs::path checkpoint;
  fs::path clouds;
  fs::path out;  ///< BEMB file
};

struct ClusterOptions {
  fs::path embeddings;
  std::size_t pca = 15;  ///< 0 disables; clamped to the embedding dimension
  double cut = 0;        ///< distance cut; used when k == 0
  std::size_t k = 0;
  std::size_t sample = 0;  ///< members drawn per cluster for inspection
  fs::path out;
};

struct TsneOptions {
  fs::path embeddings;
  double perplexity = 80;
  std::size_t iterations = 1000;
  std::size_t pca = 0;
  fs::path out;  ///< CSV file
};

struct GroupOptions {
  fs::path embeddings;
  fs::path entities;
  double tau = 0.03;
  std::vector<double> sweep;  ///< non-empty: run every tau
  fs::path boundaries;        ///< GeoJSON polygons
  double tiles = 0;           ///< tile size in metres; 0 disables
  std::string center = "geometric";
  fs::path out;
};

struct ReportOptions {
  fs::path labels;    ///< synthgen labels CSV
  fs::path clusters;  ///< cluster labels CSV
  fs::path out;       ///< JSON file
};

/// Every command takes the run seed and salts it with the stage name.
StageResult cmd_synth(const SynthOptions& o, std::uint64_t run_seed);
StageResult cmd_ingest(const IngestOptions& o);
StageResult cmd_sample(const SampleOptions& o, std::uint64_t run_seed);
StageResult cmd_train(const TrainOptions& o, std::uint64_t run_seed);
StageResult cmd_encode(const EncodeOptions& o);
StageResult cmd_cluster(const ClusterOptions& o, std::uint64_t run_seed);
StageResult cmd_tsne(const TsneOptions& o, std::uint64_t run_seed);
StageResult cmd_group(const GroupOptions& o);
/// Summarises the manifest's stages; adds cluster purity when labels are given.
StageResult cmd_report(const ReportOptions& o, const nlohmann::json& manifest);

/// Parses "a:b" into positive integers.
std::pair<std::size_t, std::size_t> parse_split(const std::string& text);

}  // namespace foldcity::cli
