#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "foldcity/error.hpp"

namespace foldcity::nn {

/// Dense row-major tensor. Network math only needs rank 1 and rank 2; the
/// shape is kept general for checkpoints.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, T fill = T(0)) : shape(std::move(dims)) {
    data.assign(element_count(shape), fill);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) { return Tensor({rows, cols}, fill); }

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  T* row(std::size_t r) { return data.data() + r * cols(); }
  const T* row(std::size_t r) const { return data.data() + r * cols(); }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// C(n x m) += A(n x k) * B(k x m). Every output element accumulates its k
/// products in ascending k order whatever its row position, so results for a
/// row never depend on the other rows present.
template <typename T>
void matmul_acc(const T* a, std::size_t n, std::size_t k, const T* b, std::size_t m, T* c);

/// out(m x n) = in(n x m)^T
template <typename T>
void transpose(const T* in, std::size_t n, std::size_t m, T* out);

}  // namespace foldcity::nn
