#include "foldcity/nn/geometry.hpp"

#include <cmath>
#include <limits>

#include "foldcity/error.hpp"
#include "foldcity/nn/kdtree.hpp"

namespace foldcity::nn {

template <typename T>
std::vector<std::uint32_t> knn_table(std::span<const T> xyz, std::size_t k) {
  const std::size_t n = xyz.size() / 3;
  if (k >= n) {
    throw UsageError("k = " + std::to_string(k) + " neighbours requested for a cloud of " + std::to_string(n) + " points");
  }
  std::vector<std::uint32_t> table(n * k);
  KdTree3<T> tree(xyz);
  std::vector<Neighbor<T>> found;
  for (std::size_t i = 0; i < n; ++i) {
    tree.knn(&xyz[3 * i], k, static_cast<std::uint32_t>(i), found);
    for (std::size_t j = 0; j < k; ++j) table[i * k + j] = found[j].index;
  }
  return table;
}

std::vector<double> flatten(const PointCloud& cloud) {
  std::vector<double> xyz;
  xyz.reserve(cloud.size() * 3);
  for (const Point3& p : cloud.points) {
    xyz.push_back(p.x());
    xyz.push_back(p.y());
    xyz.push_back(p.z());
  }
  return xyz;
}

std::vector<std::uint32_t> knn_indices(const PointCloud& cloud, std::size_t k) {
  const auto xyz = flatten(cloud);
  return knn_table<double>(xyz, k);
}

template <typename T>
ChamferTerms<T> chamfer_terms(std::span<const T> a, std::span<const T> b) {
  if (a.empty() || b.empty()) throw DataError("chamfer distance of an empty cloud");
  ChamferTerms<T> out;
  const std::size_t na = a.size() / 3, nb = b.size() / 3;
  out.nearest_in_b.resize(na);
  out.nearest_in_a.resize(nb);
  {
    KdTree3<T> tree(b);
    T sum = 0;
    for (std::size_t i = 0; i < na; ++i) {
      const auto nn = tree.nearest(&a[3 * i]);
      out.nearest_in_b[i] = nn.index;
      sum += std::sqrt(nn.dist2);
    }
    out.a_to_b = sum / static_cast<T>(na);
  }
  {
    KdTree3<T> tree(a);
    T sum = 0;
    for (std::size_t j = 0; j < nb; ++j) {
      const auto nn = tree.nearest(&b[3 * j]);
      out.nearest_in_a[j] = nn.index;
      sum += std::sqrt(nn.dist2);
    }
    out.b_to_a = sum / static_cast<T>(nb);
  }
  return out;
}

template <typename T>
T chamfer_brute_force(std::span<const T> a, std::span<const T> b) {
  if (a.empty() || b.empty()) throw DataError("chamfer distance of an empty cloud");
  auto directed = [](std::span<const T> from, std::span<const T> to) {
    T sum = 0;
    for (std::size_t i = 0; i < from.size() / 3; ++i) {
      T best = std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < to.size() / 3; ++j) {
        T d2 = 0;
        for (int c = 0; c < 3; ++c) {
          const T d = from[3 * i + c] - to[3 * j + c];
          d2 += d * d;
        }
        best = std::min(best, d2);
      }
      sum += std::sqrt(best);
    }
    return sum / static_cast<T>(from.size() / 3);
  };
  return std::max(directed(a, b), directed(b, a));
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  const auto fa = flatten(a), fb = flatten(b);
  return chamfer_terms<double>(fa, fb).value();
}

template std::vector<std::uint32_t> knn_table<float>(std::span<const float>, std::size_t);
template std::vector<std::uint32_t> knn_table<double>(std::span<const double>, std::size_t);
template ChamferTerms<float> chamfer_terms<float>(std::span<const float>, std::span<const float>);
template ChamferTerms<double> chamfer_terms<double>(std::span<const double>, std::span<const double>);
template float chamfer_brute_force<float>(std::span<const float>, std::span<const float>);
template double chamfer_brute_force<double>(std::span<const double>, std::span<const double>);

}  // namespace foldcity::nn
