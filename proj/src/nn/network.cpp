#include "foldcity/nn/network.hpp"

#include <algorithm>
#include <cmath>

#include "foldcity/nn/autograd.hpp"
#include "foldcity/nn/geometry.hpp"
#include "foldcity/rng.hpp"

namespace foldcity::nn {

Architecture Architecture::paper(std::size_t codeword_dim) {
  Architecture a;
  a.codeword_dim = codeword_dim;
  return a;
}

Architecture Architecture::desk(std::size_t codeword_dim) {
  Architecture a;
  a.codeword_dim = codeword_dim;
  a.k_neighbors = 8;
  a.grid_side = 5;
  a.point_mlp = {32, 32, 32};
  a.graph_widths = {64, 128};
  a.head_hidden = 64;
  a.fold_hidden = 64;
  return a;
}

void to_json(nlohmann::json& j, const Architecture& a) {
  j = nlohmann::json{{"codeword_dim", a.codeword_dim}, {"k_neighbors", a.k_neighbors}, {"grid_side", a.grid_side},
                     {"point_mlp", a.point_mlp},       {"graph_widths", a.graph_widths}, {"head_hidden", a.head_hidden},
                     {"fold_hidden", a.fold_hidden},   {"grid_extent", a.grid_extent}};
}

void from_json(const nlohmann::json& j, Architecture& a) {
  j.at("codeword_dim").get_to(a.codeword_dim);
  j.at("k_neighbors").get_to(a.k_neighbors);
  j.at("grid_side").get_to(a.grid_side);
  j.at("point_mlp").get_to(a.point_mlp);
  j.at("graph_widths").get_to(a.graph_widths);
  j.at("head_hidden").get_to(a.head_hidden);
  j.at("fold_hidden").get_to(a.fold_hidden);
  j.at("grid_extent").get_to(a.grid_extent);
}

namespace {

struct LayerShape {
  std::string name;
  std::size_t in, out;
};

std::vector<LayerShape> layer_shapes(const Architecture& a) {
  if (a.graph_widths.size() != 2) throw UsageError("the encoder has exactly two graph layers");
  if (a.point_mlp.empty()) throw UsageError("the per-point perceptron needs at least one layer");
  if (a.codeword_dim == 0 || a.grid_side == 0 || a.k_neighbors == 0 || a.fold_hidden == 0 || a.head_hidden == 0) {
    throw UsageError("architecture dimensions must be positive");
  }
  std::vector<LayerShape> s;
  std::size_t in = 3;
  for (std::size_t i = 0; i < a.point_mlp.size(); ++i) {
    s.push_back({"encoder.point." + std::to_string(i), in, a.point_mlp[i]});
    in = a.point_mlp[i];
  }
  for (std::size_t i = 0; i < 2; ++i) {
    s.push_back({"encoder.graph." + std::to_string(i), in, a.graph_widths[i]});
    in = a.graph_widths[i];
  }
  s.push_back({"encoder.head", in, a.head_hidden});
  s.push_back({"encoder.codeword", a.head_hidden, a.codeword_dim});
  const std::size_t h = a.fold_hidden, d = a.codeword_dim;
  s.push_back({"decoder.fold1.0", d + 2, h});
  s.push_back({"decoder.fold1.1", h, h});
  s.push_back({"decoder.fold1.2", h, 3});
  s.push_back({"decoder.fold2.0", d + 3, h});
  s.push_back({"decoder.fold2.1", h, h});
  s.push_back({"decoder.fold2.2", h, 3});
  return s;
}

// Layer positions inside NetworkParams::layers.
struct LayerIndex {
  std::size_t point_begin, point_end, graph0, graph1, head, codeword, fold1, fold2;

  explicit LayerIndex(const Architecture& a) {
    point_begin = 0;
    point_end = a.point_mlp.size();
    graph0 = point_end;
    graph1 = graph0 + 1;
    head = graph1 + 1;
    codeword = head + 1;
    fold1 = codeword + 1;
    fold2 = fold1 + 3;
  }
};

template <typename T>
struct ParamVars {
  std::vector<Var> weight, bias;
};

template <typename T>
ParamVars<T> bind(Tape<T>& tape, const NetworkParams<T>& params) {
  ParamVars<T> v;
  for (const auto& l : params.layers) {
    v.weight.push_back(tape.parameter(l.weight));
    v.bias.push_back(tape.parameter(l.bias));
  }
  return v;
}

template <typename T>
Var dense(Tape<T>& tape, const NetworkParams<T>& params, const ParamVars<T>& pv, std::size_t layer, Var x, bool relu) {
  Var y = tape.linear(x, pv.weight[layer], pv.bias[layer]);
  if (relu) y = tape.relu(y);
  tape.check_finite(y, params.layers[layer].name);
  return y;
}

template <typename T>
Var encoder_graph(Tape<T>& tape, const NetworkParams<T>& params, const ParamVars<T>& pv, Var x,
                  std::span<const std::uint32_t> groups, std::size_t batch) {
  const LayerIndex li(params.arch);
  const std::size_t group_size = params.arch.k_neighbors + 1;
  const std::size_t rows = tape.value(x).rows();
  if (groups.size() != rows * group_size) throw DataError("pooling groups do not match the point count");
  if (rows % batch) throw DataError("point rows are not divisible by the batch size");
  Var h = x;
  for (std::size_t l = li.point_begin; l < li.point_end; ++l) h = dense(tape, params, pv, l, h, true);
  h = tape.gather_max(h, groups, group_size);
  h = dense(tape, params, pv, li.graph0, h, true);
  h = tape.gather_max(h, groups, group_size);
  h = dense(tape, params, pv, li.graph1, h, true);
  h = tape.segment_max(h, rows / batch);
  h = dense(tape, params, pv, li.head, h, true);
  return dense(tape, params, pv, li.codeword, h, false);
}

template <typename T>
Var decoder_graph(Tape<T>& tape, const NetworkParams<T>& params, const ParamVars<T>& pv, Var codewords) {
  const LayerIndex li(params.arch);
  const std::size_t batch = tape.value(codewords).rows();
  const std::size_t m = params.arch.grid_points();
  const Tensor<T> grid = folding_grid<T>(params.arch);
  Tensor<T> tiled = Tensor<T>::matrix(batch * m, 2);
  for (std::size_t b = 0; b < batch; ++b) std::copy(grid.data.begin(), grid.data.end(), tiled.row(b * m));
  Var h = tape.concat_repeat(tape.constant(std::move(tiled)), codewords, m);
  h = dense(tape, params, pv, li.fold1, h, true);
  h = dense(tape, params, pv, li.fold1 + 1, h, true);
  h = dense(tape, params, pv, li.fold1 + 2, h, false);
  h = tape.concat_repeat(h, codewords, m);
  h = dense(tape, params, pv, li.fold2, h, true);
  h = dense(tape, params, pv, li.fold2 + 1, h, true);
  return dense(tape, params, pv, li.fold2 + 2, h, false);
}

template <typename T>
struct StackedBatch {
  Tensor<T> points;
  std::vector<std::uint32_t> groups;
};

template <typename T>
StackedBatch<T> stack(std::span<const PreparedCloud<T>* const> batch, std::size_t group_size) {
  if (batch.empty()) throw DataError("empty batch");
  const std::size_t n = batch[0]->xyz.size() / 3;
  StackedBatch<T> s;
  s.points = Tensor<T>::matrix(batch.size() * n, 3);
  s.groups.reserve(batch.size() * n * group_size);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& c = *batch[b];
    if (c.xyz.size() != n * 3) throw DataError("all clouds in a batch must have the same point count");
    if (c.groups.size() != n * group_size) throw DataError("pooling groups do not match the architecture");
    std::copy(c.xyz.begin(), c.xyz.end(), s.points.row(b * n));
    const auto offset = static_cast<std::uint32_t>(b * n);
    for (auto g : c.groups) s.groups.push_back(g + offset);
  }
  return s;
}

}  // namespace

template <typename T>
NetworkParams<T> NetworkParams<T>::zeros(const Architecture& arch) {
  NetworkParams<T> p;
  p.arch = arch;
  for (const auto& s : layer_shapes(arch)) p.layers.push_back({s.name, Tensor<T>({s.in, s.out}), Tensor<T>({s.out})});
  return p;
}

template <typename T>
NetworkParams<T> NetworkParams<T>::initialize(const Architecture& arch, std::uint64_t seed) {
  NetworkParams<T> p = zeros(arch);
  SplitMix64 rng(salted_seed(seed, "init"));
  for (auto& l : p.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.rows()));
    for (T& w : l.weight.data) w = static_cast<T>(rng.uniform(-bound, bound));
    for (T& b : l.bias.data) b = static_cast<T>(rng.uniform(-bound, bound));
  }
  return p;
}

template <typename T>
const Layer<T>& NetworkParams<T>::layer(const std::string& name) const {
  for (const auto& l : layers) {
    if (l.name == name) return l;
  }
  throw DataError("no layer named " + name);
}

template <typename T>
Layer<T>& NetworkParams<T>::layer(const std::string& name) {
  return const_cast<Layer<T>&>(std::as_const(*this).layer(name));
}

template <typename T>
void NetworkParams<T>::for_each(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  for (auto& l : layers) {
    fn(l.name + ".weight", l.weight);
    fn(l.name + ".bias", l.bias);
  }
}

template <typename T>
void NetworkParams<T>::for_each(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
  for (const auto& l : layers) {
    fn(l.name + ".weight", l.weight);
    fn(l.name + ".bias", l.bias);
  }
}

template <typename T>
std::size_t NetworkParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

template <typename T>
void check_shapes(const NetworkParams<T>& params) {
  const auto shapes = layer_shapes(params.arch);
  if (shapes.size() != params.layers.size()) throw DataError("layer count does not match the architecture");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& l = params.layers[i];
    const std::vector<std::size_t> ws{shapes[i].in, shapes[i].out}, bs{shapes[i].out};
    if (l.name != shapes[i].name) throw DataError("expected layer " + shapes[i].name + ", found " + l.name);
    if (l.weight.shape != ws) {
      throw DataError("tensor " + l.name + ".weight has shape " + shape_string(l.weight.shape) + ", expected " +
                      shape_string(ws));
    }
    if (l.bias.shape != bs) {
      throw DataError("tensor " + l.name + ".bias has shape " + shape_string(l.bias.shape) + ", expected " +
                      shape_string(bs));
    }
  }
}

template <typename T>
Tensor<T> folding_grid(const Architecture& arch) {
  const std::size_t side = arch.grid_side;
  Tensor<T> g = Tensor<T>::matrix(side * side, 2);
  auto coord = [&](std::size_t i) {
    if (side == 1) return 0.0;
    return -arch.grid_extent + 2.0 * arch.grid_extent * static_cast<double>(i) / static_cast<double>(side - 1);
  };
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      g(r * side + c, 0) = static_cast<T>(coord(c));
      g(r * side + c, 1) = static_cast<T>(coord(r));
    }
  }
  return g;
}

template <typename T>
Tensor<T> cloud_tensor(const PointCloud& cloud) {
  Tensor<T> t = Tensor<T>::matrix(cloud.size(), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int c = 0; c < 3; ++c) t(i, c) = static_cast<T>(cloud.points[i][c]);
  }
  return t;
}

template <typename T>
std::vector<std::uint32_t> pooling_groups(std::span<const T> xyz, std::size_t k, std::uint32_t row_offset) {
  const std::size_t n = xyz.size() / 3;
  const auto knn = knn_table<T>(xyz, k);
  std::vector<std::uint32_t> groups(n * (k + 1));
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t* g = groups.data() + i * (k + 1);
    g[0] = static_cast<std::uint32_t>(i);
    std::copy(knn.begin() + static_cast<std::ptrdiff_t>(i * k), knn.begin() + static_cast<std::ptrdiff_t>((i + 1) * k),
              g + 1);
    std::sort(g, g + k + 1);
    for (std::size_t j = 0; j <= k; ++j) g[j] += row_offset;
  }
  return groups;
}

template <typename T>
Tensor<T> encode_batch(const NetworkParams<T>& params, const Tensor<T>& points, std::span<const std::uint32_t> groups,
                       std::size_t batch) {
  Tape<T> tape(false);
  const auto pv = bind(tape, params);
  const Var x = tape.constant(points);
  return tape.value(encoder_graph(tape, params, pv, x, groups, batch));
}

template <typename T>
std::vector<T> encode(const NetworkParams<T>& params, const PointCloud& cloud) {
  const Tensor<T> pts = cloud_tensor<T>(cloud);
  const auto groups = pooling_groups<T>(pts.data, params.arch.k_neighbors);
  return encode_batch(params, pts, groups, 1).data;
}

template <typename T>
Tensor<T> decode_batch(const NetworkParams<T>& params, const Tensor<T>& codewords) {
  if (codewords.cols() != params.arch.codeword_dim) {
    throw DataError("codeword dimension " + std::to_string(codewords.cols()) + " does not match the model's " +
                    std::to_string(params.arch.codeword_dim));
  }
  Tape<T> tape(false);
  const auto pv = bind(tape, params);
  const Var cw = tape.constant(codewords);
  return tape.value(decoder_graph(tape, params, pv, cw));
}

template <typename T>
PointCloud decode(const NetworkParams<T>& params, std::span<const T> codeword) {
  Tensor<T> cw = Tensor<T>::matrix(1, codeword.size());
  std::copy(codeword.begin(), codeword.end(), cw.data.begin());
  const Tensor<T> out = decode_batch(params, cw);
  PointCloud pc;
  for (std::size_t i = 0; i < out.rows(); ++i) pc.points.emplace_back(out(i, 0), out(i, 1), out(i, 2));
  return pc;
}

template <typename T>
PreparedCloud<T> prepare_cloud(const PointCloud& cloud, std::size_t k) {
  PreparedCloud<T> p;
  p.xyz = cloud_tensor<T>(cloud).data;
  p.groups = pooling_groups<T>(p.xyz, k);
  return p;
}

template <typename T>
LossAndGradients<T> loss_and_gradients(const NetworkParams<T>& params,
                                       std::span<const PreparedCloud<T>* const> batch) {
  const auto stacked = stack(batch, params.arch.k_neighbors + 1);
  Tape<T> tape(true);
  const auto pv = bind(tape, params);
  const Var x = tape.constant(stacked.points);
  const Var cw = encoder_graph(tape, params, pv, x, stacked.groups, batch.size());
  const Var recon = decoder_graph(tape, params, pv, cw);
  const Var loss = tape.chamfer_loss(recon, stacked.points, batch.size());
  tape.check_finite(loss, "chamfer loss");
  tape.backward(loss);

  LossAndGradients<T> out;
  out.loss = tape.value(loss).data[0];
  out.gradients.arch = params.arch;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    out.gradients.layers.push_back({params.layers[l].name, tape.grad(pv.weight[l]), tape.grad(pv.bias[l])});
  }
  return out;
}

template <typename T>
T batch_loss(const NetworkParams<T>& params, std::span<const PreparedCloud<T>* const> batch) {
  const auto stacked = stack(batch, params.arch.k_neighbors + 1);
  Tape<T> tape(false);
  const auto pv = bind(tape, params);
  const Var x = tape.constant(stacked.points);
  const Var cw = encoder_graph(tape, params, pv, x, stacked.groups, batch.size());
  const Var recon = decoder_graph(tape, params, pv, cw);
  const Var loss = tape.chamfer_loss(recon, stacked.points, batch.size());
  tape.check_finite(loss, "chamfer loss");
  return tape.value(loss).data[0];
}

#define FOLDCITY_INSTANTIATE(T)                                                                                  \
  template struct NetworkParams<T>;                                                                              \
  template void check_shapes<T>(const NetworkParams<T>&);                                                        \
  template Tensor<T> folding_grid<T>(const Architecture&);                                                       \
  template Tensor<T> cloud_tensor<T>(const PointCloud&);                                                         \
  template std::vector<std::uint32_t> pooling_groups<T>(std::span<const T>, std::size_t, std::uint32_t);         \
  template Tensor<T> encode_batch<T>(const NetworkParams<T>&, const Tensor<T>&, std::span<const std::uint32_t>,  \
                                     std::size_t);                                                               \
  template std::vector<T> encode<T>(const NetworkParams<T>&, const PointCloud&);                                 \
  template Tensor<T> decode_batch<T>(const NetworkParams<T>&, const Tensor<T>&);                                 \
  template PointCloud decode<T>(const NetworkParams<T>&, std::span<const T>);                                    \
  template PreparedCloud<T> prepare_cloud<T>(const PointCloud&, std::size_t);                                    \
  template LossAndGradients<T> loss_and_gradients<T>(const NetworkParams<T>&,                                    \
                                                     std::span<const PreparedCloud<T>* const>);                  \
  template T batch_loss<T>(const NetworkParams<T>&, std::span<const PreparedCloud<T>* const>);

FOLDCITY_INSTANTIATE(float)
FOLDCITY_INSTANTIATE(double)

#undef FOLDCITY_INSTANTIATE

}  // namespace foldcity::nn
