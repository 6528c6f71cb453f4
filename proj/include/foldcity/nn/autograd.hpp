#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "foldcity/nn/tensor.hpp"

namespace foldcity::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id;
};

/// Minimal reverse-mode engine over rank-2 tensors. Operations append nodes in
/// evaluation order; backward() walks them in reverse. With recording disabled
/// the tape only evaluates (inference).
template <typename T>
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  /// Leaf whose gradient is accumulated and can be read after backward().
  /// The tensor must outlive the tape.
  Var parameter(const Tensor<T>& value);
  /// Leaf without gradient.
  Var constant(Tensor<T> value);

  const Tensor<T>& value(Var v) const;
  /// Gradient of the last backward() root with respect to v (zeros if unused).
  const Tensor<T>& grad(Var v) const;

  /// x W + b with x (n, in), W (in, out), b (out).
  Var linear(Var x, Var weight, Var bias);
  Var relu(Var x);
  /// out(i, c) = max over j in groups[i] of x(j, c); groups are `group_size`
  /// row indices per output row. Gradient goes to the first maximal entry.
  Var gather_max(Var x, std::span<const std::uint32_t> groups, std::size_t group_size);
  /// Max over consecutive blocks of `segment` rows; gradient to the first maximum.
  Var segment_max(Var x, std::size_t segment);
  /// Row r of the output is [left(r), right(r / repeat)].
  Var concat_repeat(Var left, Var right, std::size_t repeat);
  /// Mean over the batch of chamfer(target_b, pred_b) where both are stacked
  /// xyz blocks of `pred_points` and `target_points` rows.
  Var chamfer_loss(Var pred, const Tensor<T>& targets, std::size_t batch);

  /// Throws NumericError naming `layer` if v holds a non-finite entry.
  void check_finite(Var v, const std::string& layer) const;

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every node.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void()> backward;

    const Tensor<T>& value() const { return external ? *external : owned; }
  };

  Var push(Tensor<T> value, bool needs_grad);
  Tensor<T>& grad_buffer(Var v);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace foldcity::nn
