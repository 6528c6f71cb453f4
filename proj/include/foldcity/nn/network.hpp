#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "foldcity/mesh/types.hpp"
#include "foldcity/nn/tensor.hpp"

namespace foldcity::nn {

/// Layer widths of the folding autoencoder.
///
/// Encoder: per-point perceptron 3 -> point_mlp..., two graph layers (kNN max
/// pool, then linear + ReLU to graph_widths[i]), global max pool, perceptron
/// head_hidden -> codeword_dim (ReLU then linear).
/// Decoder: two folds, each (input + codeword_dim) -> fold_hidden -> fold_hidden
/// -> 3 with ReLU hidden layers; the first consumes grid points, the second
/// the first fold's output.
struct Architecture {
  std::size_t codeword_dim = 512;
  std::size_t k_neighbors = 16;
  std::size_t grid_side = 45;
  std::vector<std::size_t> point_mlp{64, 64, 64};
  std::vector<std::size_t> graph_widths{128, 1024};
  std::size_t head_hidden = 512;
  std::size_t fold_hidden = 512;
  double grid_extent = 0.3;  ///< grid spans [-extent, extent]^2

  std::size_t grid_points() const { return grid_side * grid_side; }

  /// Published FoldingNet widths with a plain xyz input.
  static Architecture paper(std::size_t codeword_dim = 512);
  /// Narrow widths for CI-sized runs: points 64, D 16, grid 5x5, k 8.
  static Architecture desk(std::size_t codeword_dim = 16);

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

template <typename T>
struct Layer {
  std::string name;
  Tensor<T> weight;  ///< (in, out)
  Tensor<T> bias;    ///< (out)
};

/// Named weights in a fixed order: encoder.point.{0..}, encoder.graph.{0,1},
/// encoder.head, encoder.codeword, decoder.fold1.{0,1,2}, decoder.fold2.{0,1,2}.
/// The same type carries gradients.
template <typename T>
struct NetworkParams {
  Architecture arch;
  std::vector<Layer<T>> layers;

  /// Zero-filled parameters with the shapes implied by `arch`.
  static NetworkParams zeros(const Architecture& arch);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static NetworkParams initialize(const Architecture& arch, std::uint64_t seed);

  const Layer<T>& layer(const std::string& name) const;
  Layer<T>& layer(const std::string& name);

  /// Visits every tensor as ("<layer>.weight" | "<layer>.bias", tensor).
  void for_each(const std::function<void(const std::string&, Tensor<T>&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;

  std::size_t parameter_count() const;

  template <typename U>
  NetworkParams<U> cast() const {
    NetworkParams<U> out;
    out.arch = arch;
    for (const auto& l : layers) out.layers.push_back({l.name, l.weight.template cast<U>(), l.bias.template cast<U>()});
    return out;
  }
};

/// Throws DataError naming the first tensor whose shape disagrees with arch.
template <typename T>
void check_shapes(const NetworkParams<T>& params);

/// Grid points in row-major order, grid_side^2 x 2.
template <typename T>
Tensor<T> folding_grid(const Architecture& arch);

/// Points of one cloud as a (N, 3) tensor.
template <typename T>
Tensor<T> cloud_tensor(const PointCloud& cloud);

/// Neighbour groups for the graph layers: for each point, itself plus its k
/// nearest neighbours, sorted by index. Offsets rows by `row_offset`.
template <typename T>
std::vector<std::uint32_t> pooling_groups(std::span<const T> xyz, std::size_t k, std::uint32_t row_offset = 0);

/// Codewords for a batch of clouds stacked in `points` ((B*N), 3) with
/// matching pooling groups. Returns (B, D).
template <typename T>
Tensor<T> encode_batch(const NetworkParams<T>& params, const Tensor<T>& points, std::span<const std::uint32_t> groups,
                       std::size_t batch);

template <typename T>
std::vector<T> encode(const NetworkParams<T>& params, const PointCloud& cloud);

/// Decoded point set (grid_side^2, 3) for each codeword row; returns ((B*m), 3).
template <typename T>
Tensor<T> decode_batch(const NetworkParams<T>& params, const Tensor<T>& codewords);

template <typename T>
PointCloud decode(const NetworkParams<T>& params, std::span<const T> codeword);

/// Training sample ready for the network: stacked xyz and pooling groups.
template <typename T>
struct PreparedCloud {
  std::vector<T> xyz;
  std::vector<std::uint32_t> groups;  ///< (N, k+1), local indices
};

template <typename T>
PreparedCloud<T> prepare_cloud(const PointCloud& cloud, std::size_t k);

template <typename T>
struct LossAndGradients {
  T loss = 0;
  NetworkParams<T> gradients;
};

/// Mean chamfer(input, decode(encode(input))) over the batch with gradients for
/// every parameter. All clouds must share a point count.
template <typename T>
LossAndGradients<T> loss_and_gradients(const NetworkParams<T>& params,
                                       std::span<const PreparedCloud<T>* const> batch);

/// Forward-only loss for the same batch.
template <typename T>
T batch_loss(const NetworkParams<T>& params, std::span<const PreparedCloud<T>* const> batch);

}  // namespace foldcity::nn
