#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "foldcity/mesh/types.hpp"
#include "foldcity/nn/network.hpp"

namespace foldcity::nn {

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  NetworkParams<T> m;  ///< first moments, shaped like the parameters
  NetworkParams<T> v;  ///< second moments

  static AdamState zeros(const Architecture& arch);
};

/// One bias-corrected Adam update. Throws DataError when shapes disagree.
template <typename T>
void adam_step(AdamState<T>& state, NetworkParams<T>& params, const NetworkParams<T>& grads, double lr);

struct TrainConfig {
  Architecture arch;
  std::size_t epochs = 800;
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  std::filesystem::path checkpoint_path;

  static TrainConfig paper(std::size_t codeword_dim = 512);
  /// 200 epochs, batch 8 and the narrow architecture.
  static TrainConfig desk(std::size_t codeword_dim = 16);

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainState {
  NetworkParams<float> params;
  AdamState<float> adam;
  std::size_t epoch = 0;            ///< completed epochs
  std::vector<double> loss_curve;   ///< mean loss per completed epoch
};

TrainState initial_state(const TrainConfig& config);

/// Called after every epoch with (epoch number from 1, mean loss).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Mean loss and gradients of a mini-batch. Items run in parallel; their
/// gradients are summed in batch order so the result ignores the worker count.
template <typename T>
LossAndGradients<T> minibatch_gradients(const NetworkParams<T>& params,
                                        std::span<const PreparedCloud<T>* const> batch);

/// Continues `state` until config.epochs epochs are complete. Each epoch
/// visits the clouds in an order shuffled from salted_seed(seed, epoch).
TrainState train(std::span<const PointCloud> dataset, const TrainConfig& config, TrainState state,
                 const EpochCallback& on_epoch = {});
TrainState train(std::span<const PointCloud> dataset, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Checkpoint = JSON manifest at `path` plus a float32 little-endian blob at
/// `path` + ".bin". Both are written atomically.
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const TrainState& state);

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);
/// As above, but every tensor must match `expected`; the error names the
/// first tensor that does not.
Checkpoint load_checkpoint(const std::filesystem::path& path, const Architecture& expected);

std::filesystem::path checkpoint_blob_path(const std::filesystem::path& path);

}  // namespace foldcity::nn
