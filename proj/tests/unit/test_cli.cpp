#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "foldcity/cli/cli.hpp"
#include "foldcity/cli/commands.hpp"
#include "foldcity/digest.hpp"
#include "foldcity/error.hpp"
#include "foldcity/ingest/citygml.hpp"
#include "foldcity/ingest/store.hpp"
#include "foldcity/io/csv.hpp"
#include "foldcity/io/stores.hpp"
#include "foldcity/mesh/meshops.hpp"
#include "foldcity/nn/train.hpp"
#include "foldcity/rng.hpp"
#include "foldcity/synth/synthgen.hpp"
#include "oracles.hpp"

using namespace foldcity;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("foldcity_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path p(const std::string& rel) const { return dir_ / rel; }

  /// Runs the tool quietly with this test's manifest.
  int tool(std::vector<std::string> args) const {
    args.insert(args.begin(), {"-q", "--manifest", p("manifest.json").string()});
    return cli::run(args);
  }

  json manifest() const { return json::parse(io::read_file(p("manifest.json"))); }

  /// Synthetic GML of `count` buildings with labels.
  void synth(std::size_t count, const std::string& out, std::uint64_t seed = 1) const {
    ASSERT_EQ(tool({"--seed", std::to_string(seed), "synth", "--count", std::to_string(count), "--out", p(out).string()}),
              0);
  }

  fs::path dir_;
};

std::string sha(const fs::path& f) { return sha256_file(f); }

}  // namespace

TEST(CliSplit, ParsesRatios) {
  EXPECT_EQ(cli::parse_split("3:1"), (std::pair<std::size_t, std::size_t>{3, 1}));
  for (const char* bad : {"3", "3:", ":1", "0:1", "3:-1", "a:b", "3:1x"}) {
    EXPECT_THROW(cli::parse_split(bad), UsageError) << bad;
  }
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(tool({}), cli::kUsageError);
  EXPECT_EQ(tool({"--help"}), cli::kSuccess);
  EXPECT_EQ(tool({"nonsense"}), cli::kUsageError);
  EXPECT_EQ(tool({"sample", "--store", p("missing.bmsh").string(), "--out", p("s").string()}), cli::kDataError);
  EXPECT_EQ(tool({"cluster", "--embeddings", p("x").string(), "--out", p("c").string()}), cli::kDataError);
  EXPECT_EQ(tool({"synth", "--count", "3"}), cli::kUsageError);  // no --out
  io::write_file_atomic(p("broken.gml"), "<CityModel><cityObjectMember>");
  EXPECT_EQ(tool({"ingest", p("broken.gml").string(), "--out", p("i").string()}), cli::kDataError);
  EXPECT_FALSE(fs::exists(p("manifest.json")));
}

TEST_F(CliTest, IngestCountsAndDropsOpenBuildings) {
  synth(10, "synth");
  ASSERT_EQ(tool({"ingest", p("synth/buildings.gml").string(), "--out", p("ingest").string()}), 0);
  auto report = json::parse(io::read_file(p("ingest/parse_report.json")));
  EXPECT_EQ(report["ingested"], 10);
  EXPECT_EQ(report["dropped_non_watertight"].size(), 0u);

  // Same buildings plus one whose roof is missing.
  const auto ds = synth::generate_dataset(10, synth::three_family_mix(), {}, 5);
  std::vector<ingest::CityGmlBuilding> buildings;
  for (const auto& s : ds.specs) buildings.push_back(synth::citygml_building(s));
  auto open = synth::citygml_building(ds.specs[0]);
  open.id = "open_box";
  std::erase_if(open.surfaces, [](const auto& s) { return s.id.find("_roof_") != std::string::npos; });
  buildings.back() = open;
  std::ostringstream doc;
  ingest::write_citygml(doc, buildings, "EPSG:25833");
  io::write_file_atomic(p("injected.gml"), doc.str());
  ASSERT_EQ(tool({"ingest", p("injected.gml").string(), "--out", p("ingest2").string()}), 0);
  report = json::parse(io::read_file(p("ingest2/parse_report.json")));
  EXPECT_EQ(report["ingested"], 9);
  ASSERT_EQ(report["dropped_non_watertight"].size(), 1u);
  EXPECT_EQ(report["dropped_non_watertight"][0]["id"], "open_box");
  EXPECT_GT(report["dropped_non_watertight"][0]["boundary_edges"].get<int>(), 0);

  const std::string first = sha(p("ingest2/buildings.bmsh"));
  ASSERT_EQ(tool({"--threads", "3", "ingest", p("injected.gml").string(), "--out", p("ingest2").string()}), 0);
  EXPECT_EQ(sha(p("ingest2/buildings.bmsh")), first);
}

TEST_F(CliTest, IngestObjDirectoryAndDuplicates) {
  ASSERT_EQ(tool({"synth", "--count", "6", "--format", "obj", "--out", p("objs").string()}), 0);
  ASSERT_EQ(tool({"ingest", p("objs").string(), p("objs/obj").string(), "--out", p("ingest").string()}), 0);
  const auto report = json::parse(io::read_file(p("ingest/parse_report.json")));
  EXPECT_EQ(report["ingested"], 6);
  EXPECT_EQ(report["buildings_skipped"].size(), 6u);  // each file listed twice
  EXPECT_EQ(report["buildings_skipped"][0]["reason"], "duplicate_id");
  const auto entities = io::read_csv(p("ingest/entities.csv"));
  EXPECT_EQ(entities.header, (std::vector<std::string>{"building_id", "x", "y"}));
  EXPECT_EQ(entities.rows.size(), 6u);
}

TEST_F(CliTest, SampleKeepsPercentileRangeAndSplits) {
  synth(100, "synth");
  ASSERT_EQ(tool({"ingest", p("synth/buildings.gml").string(), "--out", p("ingest").string()}), 0);
  ASSERT_EQ(tool({"--seed", "4", "sample", "--store", p("ingest/buildings.bmsh").string(), "--split", "3:1", "--out",
                  p("sample").string()}),
            0);
  const auto clouds = io::read_cloud_store(p("sample/clouds.bpcl"));
  EXPECT_GE(clouds.count(), 98u);
  EXPECT_EQ(clouds.points_per_cloud, 64u);
  EXPECT_EQ(io::read_cloud_store(p("sample/train.bpcl")).count() + io::read_cloud_store(p("sample/test.bpcl")).count(),
            clouds.count());

  // Kept ids agree with percentiles recomputed from independently sampled radii.
  const auto buildings = ingest::read_building_store(p("ingest/buildings.bmsh"));
  std::vector<double> radii;
  for (const auto& b : buildings) {
    const auto c = mesh::surface_sample(b.mesh, 64, salted_seed(salted_seed(4, "sample"), b.id));
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& q : c.points) mean += q.cast<double>();
    mean /= static_cast<double>(c.points.size());
    double r = 0;
    for (const auto& q : c.points) r = std::max(r, (q.cast<double>() - mean).norm());
    radii.push_back(r);
  }
  const double lo = oracle::reference_percentile(radii, 1), hi = oracle::reference_percentile(radii, 99);
  std::vector<std::string> expected;
  for (std::size_t i = 0; i < buildings.size(); ++i) {
    if (radii[i] >= lo && radii[i] <= hi) expected.push_back(buildings[i].id);
  }
  EXPECT_EQ(clouds.ids, expected);
  for (std::size_t i = 0; i < clouds.count(); ++i) {
    const auto c = clouds.cloud(i);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& q : c.points) mean += q.cast<double>();
    mean /= static_cast<double>(c.points.size());
    for (const auto& q : c.points) EXPECT_LE((q.cast<double>() - mean).norm(), 1 + 1e-6);
  }

  // 100 buildings with a 3:1 split gives 75/25 when nothing is dropped.
  ASSERT_EQ(tool({"--seed", "4", "sample", "--store", p("ingest/buildings.bmsh").string(), "--split", "3:1",
                  "--lo-pct", "0", "--hi-pct", "100", "--out", p("all").string()}),
            0);
  EXPECT_EQ(io::read_cloud_store(p("all/train.bpcl")).count(), 75u);
  EXPECT_EQ(io::read_cloud_store(p("all/test.bpcl")).count(), 25u);

  ASSERT_EQ(tool({"--seed", "4", "--threads", "2", "sample", "--store", p("ingest/buildings.bmsh").string(),
                  "--split", "3:1", "--out", p("again").string()}),
            0);
  EXPECT_EQ(sha(p("again/split.csv")), sha(p("sample/split.csv")));
  EXPECT_EQ(sha(p("again/clouds.bpcl")), sha(p("sample/clouds.bpcl")));
}

TEST_F(CliTest, TrainZeroEpochsAndResume) {
  synth(12, "synth");
  ASSERT_EQ(tool({"ingest", p("synth/buildings.gml").string(), "--out", p("ingest").string()}), 0);
  ASSERT_EQ(tool({"sample", "--store", p("ingest/buildings.bmsh").string(), "--out", p("sample").string()}), 0);
  const auto clouds = p("sample/clouds.bpcl").string();

  ASSERT_EQ(tool({"--seed", "2", "train", "--clouds", clouds, "--epochs", "0", "--out", p("zero").string()}), 0);
  const auto zero = nn::load_checkpoint(p("zero/model.ckpt"));
  EXPECT_EQ(zero.state.epoch, 0u);
  const auto init = nn::initial_state(zero.config);
  std::vector<float> saved, fresh;
  zero.state.params.for_each([&](const std::string&, const nn::Tensor<float>& t) { saved.insert(saved.end(), t.data.begin(), t.data.end()); });
  init.params.for_each([&](const std::string&, const nn::Tensor<float>& t) { fresh.insert(fresh.end(), t.data.begin(), t.data.end()); });
  EXPECT_EQ(saved, fresh);

  ASSERT_EQ(tool({"--seed", "2", "train", "--clouds", clouds, "--epochs", "6", "--out", p("full").string()}), 0);
  ASSERT_EQ(tool({"--seed", "2", "train", "--clouds", clouds, "--epochs", "3", "--out", p("half").string()}), 0);
  ASSERT_EQ(tool({"train", "--clouds", clouds, "--epochs", "6", "--resume", p("half/model.ckpt").string(), "--out",
                  p("resumed").string()}),
            0);
  EXPECT_EQ(io::read_file(p("resumed/loss.csv")), io::read_file(p("full/loss.csv")));
  EXPECT_EQ(sha(p("resumed/model.ckpt.bin")), sha(p("full/model.ckpt.bin")));

  const auto loss = io::read_csv(p("full/loss.csv"));
  EXPECT_EQ(loss.header, (std::vector<std::string>{"epoch", "mean_loss"}));
  EXPECT_EQ(loss.rows.size(), 6u);
}

TEST_F(CliTest, EncodeIgnoresCloudAndPointOrder) {
  synth(10, "synth");
  ASSERT_EQ(tool({"ingest", p("synth/buildings.gml").string(), "--out", p("ingest").string()}), 0);
  ASSERT_EQ(tool({"sample", "--store", p("ingest/buildings.bmsh").string(), "--lo-pct", "0", "--hi-pct", "100",
                  "--out", p("sample").string()}),
            0);
  ASSERT_EQ(tool({"train", "--clouds", p("sample/clouds.bpcl").string(), "--epochs", "2", "--codeword-dim", "12",
                  "--out", p("model").string()}),
            0);
  ASSERT_EQ(tool({"encode", "--checkpoint", p("model/model.ckpt").string(), "--clouds",
                  p("sample/clouds.bpcl").string(), "--out", p("a.bemb").string()}),
            0);

  const auto store = io::read_cloud_store(p("sample/clouds.bpcl"));
  io::CloudStore permuted;
  permuted.points_per_cloud = store.points_per_cloud;
  SplitMix64 rng(99);
  std::vector<std::size_t> order(store.count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);
  for (std::size_t i : order) {
    auto c = store.cloud(i);
    shuffle(c.points, rng);
    permuted.append(c);
  }
  io::write_cloud_store(p("perm.bpcl"), permuted);
  ASSERT_EQ(tool({"encode", "--checkpoint", p("model/model.ckpt").string(), "--clouds", p("perm.bpcl").string(),
                  "--out", p("b.bemb").string()}),
            0);

  const auto a = io::read_embedding_store(p("a.bemb")), b = io::read_embedding_store(p("b.bemb"));
  EXPECT_EQ(a.count(), store.count());
  EXPECT_EQ(a.dim, 12u);
  std::map<std::string, std::vector<double>> by_id;
  for (std::size_t i = 0; i < a.count(); ++i) by_id[a.ids[i]] = a.row(i);
  for (std::size_t i = 0; i < b.count(); ++i) EXPECT_EQ(b.row(i), by_id.at(b.ids[i])) << b.ids[i];
}

TEST_F(CliTest, ClusterCsvContractsAndLargeCut) {
  io::EmbeddingStore emb;
  emb.dim = 4;
  SplitMix64 rng(3);
  for (int i = 0; i < 30; ++i) {
    emb.ids.push_back("b" + std::to_string(i));
    for (int j = 0; j < 4; ++j) emb.data.push_back(static_cast<float>(rng.uniform(-1, 1) + (i < 15 ? 5 : 0)));
  }
  io::write_embedding_store(p("e.bemb"), emb);
  ASSERT_EQ(tool({"cluster", "--embeddings", p("e.bemb").string(), "--k", "2", "--out", p("k2").string()}), 0);
  const auto linkage = io::read_csv(p("k2/linkage.csv"));
  EXPECT_EQ(linkage.header, (std::vector<std::string>{"cluster_a", "cluster_b", "distance", "size"}));
  EXPECT_EQ(linkage.rows.size(), 29u);
  const auto labels = io::read_csv(p("k2/labels.csv"));
  EXPECT_EQ(labels.header, (std::vector<std::string>{"building_id", "cluster"}));
  for (std::size_t i = 0; i < labels.rows.size(); ++i) EXPECT_EQ(labels.rows[i][1], i < 15 ? "0" : "1");
  const auto counts = io::read_csv(p("k2/cluster_counts.csv"));
  EXPECT_EQ(counts.rows.size(), 30u);
  EXPECT_EQ(counts.rows.back()[1], "1");
  EXPECT_EQ(json::parse(io::read_file(p("k2/pca.json")))["components"], 4);  // clamped to D

  const double max_d = io::parse_double(linkage.rows.back()[2], "linkage");
  ASSERT_EQ(tool({"cluster", "--embeddings", p("e.bemb").string(), "--cut", std::to_string(max_d * 1.01), "--out",
                  p("cut").string()}),
            0);
  for (const auto& row : io::read_csv(p("cut/labels.csv")).rows) EXPECT_EQ(row[1], "0");
  EXPECT_EQ(tool({"cluster", "--embeddings", p("e.bemb").string(), "--cut", "1", "--k", "2", "--out",
                  p("both").string()}),
            cli::kUsageError);

  ASSERT_EQ(tool({"tsne", "--embeddings", p("e.bemb").string(), "--perplexity", "5", "--iters", "200", "--out",
                  p("t.csv").string()}),
            0);
  const auto t = io::read_csv(p("t.csv"));
  EXPECT_EQ(t.header, (std::vector<std::string>{"building_id", "x", "y"}));
  EXPECT_EQ(t.rows.size(), 30u);
}

TEST_F(CliTest, GroupTilesAndSweep) {
  io::EmbeddingStore emb;
  emb.dim = 3;
  std::string entities = "building_id,x,y\n";
  SplitMix64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const std::string id = "b" + std::to_string(i);
    emb.ids.push_back(id);
    for (int j = 0; j < 3; ++j) emb.data.push_back(static_cast<float>(1 + 0.3 * rng.uniform(-1, 1)));
    entities += id + "," + io::format_double(rng.uniform(0, 1999.9)) + "," + io::format_double(rng.uniform(0, 1999.9)) + "\n";
  }
  io::write_embedding_store(p("e.bemb"), emb);
  io::write_file_atomic(p("entities.csv"), entities);
  ASSERT_EQ(tool({"group", "--embeddings", p("e.bemb").string(), "--entities", p("entities.csv").string(), "--tiles",
                  "1000", "--tau-sweep", "--out", p("g").string()}),
            0);

  std::map<std::string, std::vector<std::pair<double, double>>> by_boundary;  // groups, k per tau
  for (const char* tau : {"0.01", "0.02", "0.03", "0.04", "0.05"}) {
    const auto summary = io::read_csv(p(std::string("g/tau_") + tau + "/summary.csv"));
    EXPECT_EQ(summary.header, (std::vector<std::string>{"boundary_id", "count", "groups", "k_ratio"}));
    EXPECT_LE(summary.rows.size(), 4u);
    for (const auto& row : summary.rows) {
      const double n = io::parse_double(row[1], "count"), g = io::parse_double(row[2], "groups");
      EXPECT_EQ(io::parse_double(row[3], "k"), n / g);
      by_boundary[row[0]].push_back({g, n / g});
    }
    EXPECT_TRUE(fs::exists(p(std::string("g/tau_") + tau + "/choropleth.geojson")));
  }
  for (const auto& [id, series] : by_boundary) {
    ASSERT_EQ(series.size(), 5u);
    for (std::size_t i = 1; i < series.size(); ++i) EXPECT_GE(series[i].second, series[i - 1].second) << id;
  }
  EXPECT_TRUE(fs::exists(p("g/sweep.csv")));
}

TEST_F(CliTest, ConfigPrecedence) {
  synth(8, "synth");
  io::write_file_atomic(p("run.conf"), "# shared\nseed = 11\n[synth]\ncount = 5\nformat = obj\n");
  ASSERT_EQ(tool({"--config", p("run.conf").string(), "synth", "--count", "4", "--out", p("c1").string()}), 0);
  auto stage = manifest()["stages"].back();
  EXPECT_EQ(stage["run_seed"], 11);
  EXPECT_EQ(stage["config"]["count"], 4);      // flag beats file
  EXPECT_EQ(stage["config"]["format"], "obj");  // file beats default
  EXPECT_EQ(stage["config"]["srs"], "EPSG:25833");

  io::write_file_atomic(p("run.json"), R"({"seed": 5, "synth": {"count": 3, "mix": "L-hip:1"}})");
  ASSERT_EQ(tool({"--seed", "6", "--config", p("run.json").string(), "synth", "--out", p("c2").string()}), 0);
  stage = manifest()["stages"].back();
  EXPECT_EQ(stage["run_seed"], 6);
  EXPECT_EQ(stage["config"]["count"], 3);
  EXPECT_EQ(stage["config"]["mix"], "L-hip-medium:1");

  io::write_file_atomic(p("bad.json"), R"({"synth": {"colour": "red"}})");
  EXPECT_EQ(tool({"--config", p("bad.json").string(), "synth", "--out", p("c3").string()}), cli::kUsageError);
}

TEST_F(CliTest, ManifestListsDigestsAndIsAppendOnly) {
  synth(5, "synth");
  ASSERT_EQ(tool({"ingest", p("synth/buildings.gml").string(), "--out", p("ingest").string()}), 0);
  const auto m = manifest();
  EXPECT_EQ(m["format"], "foldcity.manifest");
  ASSERT_EQ(m["stages"].size(), 2u);
  EXPECT_EQ(m["stages"][0]["stage"], "synth");
  EXPECT_EQ(m["stages"][1]["stage"], "ingest");
  EXPECT_EQ(m["stages"][0]["seed"].get<std::uint64_t>(), salted_seed(1, "synth"));
  for (const auto& s : m["stages"]) {
    EXPECT_EQ(s["config_hash"], sha256_hex(s["config"].dump()));
    for (const auto& key : {"inputs", "outputs"}) {
      for (const auto& f : s[key]) {
        const fs::path file = p(f["path"].get<std::string>());
        ASSERT_TRUE(fs::exists(file)) << file;
        EXPECT_EQ(f["bytes"].get<std::uintmax_t>(), fs::file_size(file));
        EXPECT_EQ(f["sha256"], sha256_file(file));
      }
    }
  }
  EXPECT_EQ(m["stages"][1]["inputs"][0]["sha256"], m["stages"][0]["outputs"][0]["sha256"]);
}
