#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "foldcity/error.hpp"
#include "foldcity/io/stores.hpp"
#include "foldcity/nn/geometry.hpp"
#include "foldcity/nn/kdtree.hpp"
#include "foldcity/nn/train.hpp"
#include "foldcity/parallel.hpp"
#include "foldcity/rng.hpp"
#include "oracles.hpp"

using namespace foldcity;
using namespace foldcity::nn;

namespace {

Architecture tiny_arch(std::size_t d = 8) {
  Architecture a = Architecture::desk(d);
  a.grid_side = 3;
  a.k_neighbors = 4;
  a.point_mlp = {8, 8};
  a.graph_widths = {12, 16};
  a.head_hidden = 12;
  a.fold_hidden = 10;
  return a;
}

PointCloud permuted(const PointCloud& c, std::uint64_t seed) {
  std::vector<std::size_t> order(c.size());
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(seed);
  shuffle(order, rng);
  PointCloud out;
  for (auto i : order) out.points.push_back(c.points[i]);
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("foldcity_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Knn, CollinearExample) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
  EXPECT_EQ(knn_indices(c, 1), (std::vector<std::uint32_t>{1, 0, 1}));
}

TEST(Knn, ExhaustiveCase) {
  const auto c = oracle::random_cloud(7, 3);
  const auto t = knn_indices(c, 6);
  for (std::size_t i = 0; i < 7; ++i) {
    std::vector<std::uint32_t> row(t.begin() + i * 6, t.begin() + (i + 1) * 6);
    std::sort(row.begin(), row.end());
    std::vector<std::uint32_t> expect;
    for (std::uint32_t j = 0; j < 7; ++j) {
      if (j != i) expect.push_back(j);
    }
    EXPECT_EQ(row, expect);
  }
}

TEST(Knn, DuplicatePairPicksEachOther) {
  PointCloud c;
  c.points = {{0, 0, 0}, {5, 5, 5}, {5, 5, 5}, {9, 0, 0}};
  const auto t = knn_indices(c, 1);
  EXPECT_EQ(t[1], 2u);
  EXPECT_EQ(t[2], 1u);
}

TEST(Knn, RejectsKAtLeastN) {
  const auto c = oracle::random_cloud(4, 1);
  EXPECT_THROW(knn_indices(c, 4), UsageError);
}

TEST(KdTree, MatchesBruteForceWithTies) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    SplitMix64 rng(seed);
    std::vector<float> xyz;
    const std::size_t n = 1 + rng.below(300);
    for (std::size_t i = 0; i < n * 3; ++i) xyz.push_back(static_cast<float>(rng.below(6)));  // many ties
    KdTree3<float> tree(xyz, 4);
    std::vector<Neighbor<float>> got;
    for (int q = 0; q < 20; ++q) {
      const float p[3] = {static_cast<float>(rng.uniform(-1, 6)), static_cast<float>(rng.uniform(-1, 6)),
                          static_cast<float>(rng.uniform(-1, 6))};
      const auto a = tree.nearest(p), b = brute_nearest<float>(xyz, p);
      EXPECT_EQ(a.index, b.index);
      EXPECT_EQ(a.dist2, b.dist2);
      const std::size_t k = 1 + rng.below(10);
      const auto ex = static_cast<std::uint32_t>(rng.below(n));
      tree.knn(p, k, ex, got);
      const auto want = brute_knn<float>(xyz, p, k, ex);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].index, want[i].index);
    }
  }
}

TEST(Chamfer, Examples) {
  PointCloud a, b;
  a.points = {{0, 0, 0}};
  b.points = {{1, 0, 0}};
  EXPECT_DOUBLE_EQ(chamfer(a, b), 1.0);
  a.points = {{0, 0, 0}, {2, 0, 0}};
  b.points = {{0, 0, 0}};
  EXPECT_DOUBLE_EQ(chamfer(a, b), 1.0);
  EXPECT_EQ(chamfer(a, a), 0.0);
  EXPECT_THROW(chamfer(a, PointCloud{}), DataError);
}

TEST(Chamfer, SymmetricAndNotTranslationInvariant) {
  const auto a = oracle::random_cloud(50, 1), b = oracle::random_cloud(70, 2);
  EXPECT_EQ(chamfer(a, b), chamfer(b, a));
  double prev = 0;
  for (double t : {1.0, 10.0, 100.0, 1000.0}) {
    PointCloud moved = a;
    for (auto& p : moved.points) p.x() += t;
    const double d = chamfer(a, moved);
    EXPECT_GT(d, prev);
    EXPECT_GT(d, t - 1.0);
    prev = d;
  }
}

TEST(Chamfer, AcceleratedEqualsBruteForce) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto a = flatten(oracle::random_cloud(1 + s % 97, s));
    const auto b = flatten(oracle::random_cloud(1 + (s * 7) % 113, s + 1000));
    const double fast = chamfer_terms<double>(a, b).value();
    const double slow = chamfer_brute_force<double>(a, b);
    EXPECT_NEAR(fast, slow, 1e-12 * std::max(1.0, slow));
  }
}

TEST(Encode, PermutationInvariantExact) {
  const auto params = NetworkParams<float>::initialize(Architecture::desk(16), 11);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto c = oracle::random_cloud(64, s);
    EXPECT_EQ(encode(params, c), encode(params, permuted(c, s + 99)));
  }
}

TEST(Encode, ZeroParamsGiveZeroCodeword) {
  const auto params = NetworkParams<float>::zeros(Architecture::desk(16));
  const auto cw = encode(params, oracle::random_cloud(64, 1));
  EXPECT_EQ(cw, std::vector<float>(16, 0.0f));
}

TEST(Encode, ReproducibleAcrossCalls) {
  const auto params = NetworkParams<float>::initialize(Architecture::desk(16), 5);
  const auto c = oracle::random_cloud(64, 5);
  EXPECT_EQ(encode(params, c), encode(params, c));
  EXPECT_EQ(encode(NetworkParams<float>::initialize(Architecture::desk(16), 5), c), encode(params, c));
}

TEST(Encode, NonFiniteActivationNamesLayer) {
  auto params = NetworkParams<float>::initialize(Architecture::desk(16), 5);
  params.layer("encoder.graph.0").bias.data[0] = std::numeric_limits<float>::infinity();
  try {
    encode(params, oracle::random_cloud(64, 5));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.graph.0"), std::string::npos);
  }
}

TEST(Decode, OutputCountIsGridSquared) {
  const auto params = NetworkParams<float>::initialize(Architecture::paper(16), 1);
  EXPECT_EQ(decode<float>(params, std::vector<float>(16, 0.1f)).size(), 2025u);
  const auto desk = NetworkParams<float>::initialize(Architecture::desk(16), 1);
  EXPECT_EQ(decode<float>(desk, std::vector<float>(16, 0.1f)).size(), 25u);
}

TEST(Decode, ZeroFoldWeightsGiveBias) {
  auto params = NetworkParams<double>::initialize(Architecture::desk(16), 1);
  for (const char* n : {"decoder.fold2.0", "decoder.fold2.1", "decoder.fold2.2"}) params.layer(n).weight.fill(0);
  auto& out = params.layer("decoder.fold2.2").bias;
  out.data = {0.25, -1.5, 3.0};
  // Hidden biases still feed the output through zero weights, so only the bias survives.
  const auto pc = decode<double>(params, std::vector<double>(16, 0.7));
  for (const auto& p : pc.points) EXPECT_EQ(p, Point3(0.25, -1.5, 3.0));
}

TEST(Decode, DimensionMismatchThrows) {
  const auto params = NetworkParams<float>::initialize(Architecture::desk(16), 1);
  EXPECT_THROW(decode<float>(params, std::vector<float>(8, 0.0f)), DataError);
}

TEST(Gradients, ReferenceLossAgrees) {
  const auto params = NetworkParams<double>::initialize(tiny_arch(), 3);
  const auto c0 = prepare_cloud<double>(oracle::random_cloud(16, 1), 4);
  const auto c1 = prepare_cloud<double>(oracle::random_cloud(16, 2), 4);
  const std::vector<const PreparedCloud<double>*> batch{&c0, &c1};
  EXPECT_NEAR(batch_loss<double>(params, batch), oracle::reference_loss(params, batch), 1e-12);
}

TEST(Gradients, TinyNetMatchesFiniteDifferences) {
  const auto params = NetworkParams<double>::initialize(tiny_arch(), 3);
  const auto c0 = prepare_cloud<double>(oracle::random_cloud(16, 1), 4);
  const auto c1 = prepare_cloud<double>(oracle::random_cloud(16, 2), 4);
  const std::vector<const PreparedCloud<double>*> batch{&c0, &c1};
  const auto r = oracle::finite_difference_check(params, batch, 1e-4);
  EXPECT_EQ(r.checked, params.parameter_count());
  EXPECT_LT(r.max_error, 1e-4) << r.worst;
}

TEST(Gradients, DuplicateBatchEntriesMatchSingle) {
  const auto params = NetworkParams<float>::initialize(Architecture::desk(16), 3);
  const auto c = prepare_cloud<float>(oracle::random_cloud(64, 1), 8);
  const std::vector<const PreparedCloud<float>*> one{&c}, three{&c, &c, &c};
  EXPECT_FLOAT_EQ(loss_and_gradients<float>(params, one).loss, loss_and_gradients<float>(params, three).loss);
  EXPECT_FLOAT_EQ(minibatch_gradients<float>(params, one).loss, minibatch_gradients<float>(params, three).loss);
}

TEST(Gradients, MinibatchIndependentOfThreadCount) {
  const auto params = NetworkParams<float>::initialize(Architecture::desk(16), 3);
  std::vector<PreparedCloud<float>> clouds;
  for (int i = 0; i < 6; ++i) clouds.push_back(prepare_cloud<float>(oracle::random_cloud(64, i), 8));
  std::vector<const PreparedCloud<float>*> batch;
  for (auto& c : clouds) batch.push_back(&c);
  const int saved = thread_count();
  set_thread_count(1);
  const auto a = minibatch_gradients<float>(params, batch);
  set_thread_count(4);
  const auto b = minibatch_gradients<float>(params, batch);
  set_thread_count(saved);
  EXPECT_EQ(a.loss, b.loss);
  for (std::size_t l = 0; l < a.gradients.layers.size(); ++l) {
    EXPECT_EQ(a.gradients.layers[l].weight.data, b.gradients.layers[l].weight.data);
  }
}

TEST(Adam, ZeroGradientsAreFixedPoint) {
  auto params = NetworkParams<double>::initialize(tiny_arch(), 1);
  const auto before = params;
  auto state = AdamState<double>::zeros(params.arch);
  adam_step(state, params, NetworkParams<double>::zeros(params.arch), 0.1);
  EXPECT_EQ(state.step, 1u);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    EXPECT_EQ(params.layers[l].weight.data, before.layers[l].weight.data);
    for (double m : state.m.layers[l].weight.data) EXPECT_EQ(m, 0.0);
    for (double v : state.v.layers[l].weight.data) EXPECT_EQ(v, 0.0);
  }
}

TEST(Adam, HandEvaluatedFirstStep) {
  auto params = NetworkParams<double>::zeros(tiny_arch());
  auto grads = NetworkParams<double>::zeros(tiny_arch());
  params.layers[0].weight.data[0] = 1.0;
  grads.layers[0].weight.data[0] = 1.0;
  auto state = AdamState<double>::zeros(params.arch);
  adam_step(state, params, grads, 0.1);
  // m_hat = 1, v_hat = 1
  EXPECT_NEAR(params.layers[0].weight.data[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ShapeMismatchThrows) {
  auto params = NetworkParams<double>::zeros(tiny_arch(8));
  auto state = AdamState<double>::zeros(tiny_arch(8));
  EXPECT_THROW(adam_step(state, params, NetworkParams<double>::zeros(tiny_arch(4)), 0.1), DataError);
}

TEST(Train, ZeroLearningRateKeepsLoss) {
  auto cfg = TrainConfig::desk();
  cfg.learning_rate = 0;
  auto state = initial_state(cfg);
  const auto c = prepare_cloud<float>(oracle::random_cloud(64, 1), 8);
  const std::vector<const PreparedCloud<float>*> batch{&c};
  const float before = batch_loss<float>(state.params, batch);
  const auto lg = minibatch_gradients<float>(state.params, batch);
  adam_step(state.adam, state.params, lg.gradients, 0.0);
  EXPECT_EQ(batch_loss<float>(state.params, batch), before);
}

TEST(Train, ZeroEpochsReturnsInitialParams) {
  auto cfg = TrainConfig::desk();
  cfg.epochs = 0;
  const std::vector<PointCloud> data{oracle::random_cloud(64, 1)};
  const auto s = train(data, cfg);
  EXPECT_TRUE(s.loss_curve.empty());
  EXPECT_EQ(s.params.layers[3].weight.data, initial_state(cfg).params.layers[3].weight.data);
}

TEST(Train, CopiesOfOneCloudHalveLoss) {
  TrainConfig cfg;
  cfg.arch = tiny_arch();
  cfg.epochs = 100;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.seed = 7;
  const std::vector<PointCloud> data(10, oracle::random_cloud(16, 3));
  const auto s = train(data, cfg);
  ASSERT_EQ(s.loss_curve.size(), 100u);
  EXPECT_LT(s.loss_curve.back(), 0.5 * s.loss_curve.front());
}

TEST(Train, SameSeedSameCurve) {
  auto cfg = TrainConfig::desk();
  cfg.epochs = 5;
  std::vector<PointCloud> data;
  for (int i = 0; i < 12; ++i) data.push_back(oracle::random_cloud(64, i));
  EXPECT_EQ(train(data, cfg).loss_curve, train(data, cfg).loss_curve);
}

TEST(Train, ResumeContinuesTrajectory) {
  const auto dir = temp_dir("resume");
  auto cfg = TrainConfig::desk();
  cfg.epochs = 6;
  std::vector<PointCloud> data;
  for (int i = 0; i < 10; ++i) data.push_back(oracle::random_cloud(64, i));
  const auto full = train(data, cfg);

  auto first = cfg;
  first.epochs = 3;
  first.checkpoint_every = 3;
  first.checkpoint_path = dir / "ck.json";
  train(data, first);
  auto loaded = load_checkpoint(first.checkpoint_path, cfg.arch);
  const auto resumed = train(data, cfg, loaded.state);
  EXPECT_EQ(resumed.loss_curve, full.loss_curve);
  EXPECT_EQ(resumed.params.layers.back().weight.data, full.params.layers.back().weight.data);
}

TEST(Checkpoint, SaveLoadSaveIdenticalBytes) {
  const auto dir = temp_dir("ck");
  auto cfg = TrainConfig::desk();
  cfg.epochs = 2;
  const std::vector<PointCloud> data{oracle::random_cloud(64, 1), oracle::random_cloud(64, 2)};
  const auto s = train(data, cfg);
  save_checkpoint(dir / "a.json", cfg, s);
  const auto ck = load_checkpoint(dir / "a.json");
  save_checkpoint(dir / "b.json", ck.config, ck.state);
  EXPECT_EQ(io::read_file(dir / "a.json.bin"), io::read_file(dir / "b.json.bin"));
  auto ma = nlohmann::json::parse(io::read_file(dir / "a.json"));
  auto mb = nlohmann::json::parse(io::read_file(dir / "b.json"));
  ma.erase("blob");
  mb.erase("blob");
  EXPECT_EQ(ma, mb);
  EXPECT_EQ(ck.state.adam.step, s.adam.step);
  EXPECT_EQ(ck.state.loss_curve, s.loss_curve);
}

TEST(Checkpoint, TruncatedBlobRejected) {
  const auto dir = temp_dir("trunc");
  const auto cfg = TrainConfig::desk();
  save_checkpoint(dir / "c.json", cfg, initial_state(cfg));
  const auto blob = io::read_file(dir / "c.json.bin");
  io::write_file_atomic(dir / "c.json.bin", blob.substr(0, blob.size() / 2));
  EXPECT_THROW(load_checkpoint(dir / "c.json"), DataError);
}

TEST(Checkpoint, MismatchNamesBottleneckTensor) {
  const auto dir = temp_dir("mismatch");
  const auto cfg = TrainConfig::desk(16);
  save_checkpoint(dir / "c.json", cfg, initial_state(cfg));
  try {
    load_checkpoint(dir / "c.json", Architecture::desk(32));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.codeword.weight"), std::string::npos) << e.what();
  }
}
