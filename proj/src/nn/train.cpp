#include "foldcity/nn/train.hpp"

#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "foldcity/error.hpp"
#include "foldcity/parallel.hpp"
#include "foldcity/rng.hpp"

namespace foldcity::nn {

template <typename T>
AdamState<T> AdamState<T>::zeros(const Architecture& arch) {
  AdamState<T> s;
  s.m = NetworkParams<T>::zeros(arch);
  s.v = NetworkParams<T>::zeros(arch);
  return s;
}

template <typename T>
void adam_step(AdamState<T>& state, NetworkParams<T>& params, const NetworkParams<T>& grads, double lr) {
  const std::size_t layers = params.layers.size();
  if (grads.layers.size() != layers || state.m.layers.size() != layers || state.v.layers.size() != layers) {
    throw DataError("adam_step: layer count mismatch");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto update = [&](const std::string& name, Tensor<T>& p, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v) {
    if (g.shape != p.shape || m.shape != p.shape || v.shape != p.shape) {
      throw DataError("adam_step: shape mismatch for tensor " + name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.data[i];
      const double mi = state.beta1 * m.data[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v.data[i] + (1.0 - state.beta2) * gi * gi;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      const double step = lr * (mi / c1) / (std::sqrt(vi / c2) + state.epsilon);
      p.data[i] = static_cast<T>(p.data[i] - step);
    }
  };
  for (std::size_t l = 0; l < layers; ++l) {
    auto& p = params.layers[l];
    auto& m = state.m.layers[l];
    auto& v = state.v.layers[l];
    const auto& g = grads.layers[l];
    update(p.name + ".weight", p.weight, g.weight, m.weight, v.weight);
    update(p.name + ".bias", p.bias, g.bias, m.bias, v.bias);
  }
}

TrainConfig TrainConfig::paper(std::size_t codeword_dim) {
  TrainConfig c;
  c.arch = Architecture::paper(codeword_dim);
  return c;
}

TrainConfig TrainConfig::desk(std::size_t codeword_dim) {
  TrainConfig c;
  c.arch = Architecture::desk(codeword_dim);
  c.epochs = 200;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw UsageError("batch size must be positive");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw UsageError("learning rate must be finite and >= 0");
  if (checkpoint_every && checkpoint_path.empty()) throw UsageError("checkpoint_every needs a checkpoint path");
  (void)NetworkParams<float>::zeros(arch);  // rejects malformed architectures
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"architecture", c.arch},
                     {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"checkpoint_path", c.checkpoint_path.string()}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("architecture").get_to(c.arch);
  j.at("epochs").get_to(c.epochs);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("batch_size").get_to(c.batch_size);
  j.at("seed").get_to(c.seed);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  c.checkpoint_path = j.value("checkpoint_path", std::string());
}

TrainState initial_state(const TrainConfig& config) {
  TrainState s;
  s.params = NetworkParams<float>::initialize(config.arch, config.seed);
  s.adam = AdamState<float>::zeros(config.arch);
  return s;
}

template <typename T>
LossAndGradients<T> minibatch_gradients(const NetworkParams<T>& params,
                                        std::span<const PreparedCloud<T>* const> batch) {
  if (batch.empty()) throw DataError("empty batch");
  std::vector<LossAndGradients<T>> items(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { items[i] = loss_and_gradients<T>(params, batch.subspan(i, 1)); });

  LossAndGradients<T> out;
  out.gradients = NetworkParams<T>::zeros(params.arch);
  double loss = 0;
  const T scale = T(1) / static_cast<T>(batch.size());
  for (const auto& item : items) {
    loss += item.loss;
    for (std::size_t l = 0; l < out.gradients.layers.size(); ++l) {
      auto& dst = out.gradients.layers[l];
      const auto& src = item.gradients.layers[l];
      for (std::size_t k = 0; k < dst.weight.size(); ++k) dst.weight.data[k] += src.weight.data[k];
      for (std::size_t k = 0; k < dst.bias.size(); ++k) dst.bias.data[k] += src.bias.data[k];
    }
  }
  for (auto& l : out.gradients.layers) {
    for (T& g : l.weight.data) g *= scale;
    for (T& g : l.bias.data) g *= scale;
  }
  out.loss = static_cast<T>(loss / static_cast<double>(batch.size()));
  return out;
}

TrainState train(std::span<const PointCloud> dataset, const TrainConfig& config, TrainState state,
                 const EpochCallback& on_epoch) {
  config.validate();
  check_shapes(state.params);
  if (state.params.arch != config.arch) throw DataError("training state architecture differs from the configuration");
  if (state.epoch >= config.epochs) return state;
  if (dataset.empty()) throw DataError("training needs at least one cloud");

  std::vector<PreparedCloud<float>> prepared(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    prepared[i] = prepare_cloud<float>(dataset[i], config.arch.k_neighbors);
  });
  const std::size_t n = dataset[0].size();
  for (const auto& c : dataset) {
    if (c.size() != n) throw DataError("all training clouds must have the same point count");
  }

  std::vector<std::uint32_t> order(dataset.size());
  std::vector<const PreparedCloud<float>*> batch;
  while (state.epoch < config.epochs) {
    std::iota(order.begin(), order.end(), 0u);
    SplitMix64 rng(salted_seed(config.seed, static_cast<std::uint64_t>(state.epoch)));
    shuffle(order, rng);

    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&prepared[order[i]]);
      const auto lg = minibatch_gradients<float>(state.params, batch);
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(batch.size());
      adam_step(state.adam, state.params, lg.gradients, config.learning_rate);
    }
    const double mean = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(mean)) throw NumericError("non-finite epoch loss at epoch " + std::to_string(state.epoch + 1));
    state.loss_curve.push_back(mean);
    ++state.epoch;
    spdlog::debug("epoch {} mean loss {:.6f}", state.epoch, mean);
    if (on_epoch) on_epoch(state.epoch, mean);
    if (config.checkpoint_every && (state.epoch % config.checkpoint_every == 0 || state.epoch == config.epochs)) {
      save_checkpoint(config.checkpoint_path, config, state);
    }
  }
  return state;
}

TrainState train(std::span<const PointCloud> dataset, const TrainConfig& config, const EpochCallback& on_epoch) {
  return train(dataset, config, initial_state(config), on_epoch);
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(AdamState<float>&, NetworkParams<float>&, const NetworkParams<float>&, double);
template void adam_step<double>(AdamState<double>&, NetworkParams<double>&, const NetworkParams<double>&, double);
template LossAndGradients<float> minibatch_gradients<float>(const NetworkParams<float>&,
                                                            std::span<const PreparedCloud<float>* const>);
template LossAndGradients<double> minibatch_gradients<double>(const NetworkParams<double>&,
                                                              std::span<const PreparedCloud<double>* const>);

}  // namespace foldcity::nn
