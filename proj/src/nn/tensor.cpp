#include "foldcity/nn/tensor.hpp"

#include <algorithm>

namespace foldcity::nn {

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
void matmul_acc(const T* a, std::size_t n, std::size_t k, const T* b, std::size_t m, T* c) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    T* c0 = c + i * m;
    T* c1 = c0 + m;
    T* c2 = c1 + m;
    T* c3 = c2 + m;
    const T* a0 = a + i * k;
    const T* a1 = a0 + k;
    const T* a2 = a1 + k;
    const T* a3 = a2 + k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* brow = b + kk * m;
      const T x0 = a0[kk], x1 = a1[kk], x2 = a2[kk], x3 = a3[kk];
      for (std::size_t j = 0; j < m; ++j) {
        const T bv = brow[j];
        c0[j] += x0 * bv;
        c1[j] += x1 * bv;
        c2[j] += x2 * bv;
        c3[j] += x3 * bv;
      }
    }
  }
  for (; i < n; ++i) {
    T* ci = c + i * m;
    const T* ai = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* brow = b + kk * m;
      const T x = ai[kk];
      for (std::size_t j = 0; j < m; ++j) ci[j] += x * brow[j];
    }
  }
}

template <typename T>
void transpose(const T* in, std::size_t n, std::size_t m, T* out) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < n; i0 += kBlock) {
    for (std::size_t j0 = 0; j0 < m; j0 += kBlock) {
      const std::size_t i1 = std::min(n, i0 + kBlock), j1 = std::min(m, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) out[j * n + i] = in[i * m + j];
      }
    }
  }
}

template void matmul_acc<float>(const float*, std::size_t, std::size_t, const float*, std::size_t, float*);
template void matmul_acc<double>(const double*, std::size_t, std::size_t, const double*, std::size_t, double*);
template void transpose<float>(const float*, std::size_t, std::size_t, float*);
template void transpose<double>(const double*, std::size_t, std::size_t, double*);

}  // namespace foldcity::nn
