#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "foldcity/mesh/types.hpp"

namespace foldcity::nn {

/// Row i lists the k nearest points to point i (excluding i) by Euclidean
/// distance, nearest first, equal distances by lower index. Returned row-major
/// with k entries per point. Throws UsageError when k >= point count.
template <typename T>
std::vector<std::uint32_t> knn_table(std::span<const T> xyz, std::size_t k);

std::vector<std::uint32_t> knn_indices(const PointCloud& cloud, std::size_t k);

/// Both directed terms of the chamfer distance together with the argmin of
/// each point (lowest index on ties).
template <typename T>
struct ChamferTerms {
  T a_to_b = 0;  ///< mean over a of the distance to the nearest b
  T b_to_a = 0;
  std::vector<std::uint32_t> nearest_in_b;  ///< per point of a
  std::vector<std::uint32_t> nearest_in_a;  ///< per point of b

  /// max of the two directed means
  T value() const { return a_to_b >= b_to_a ? a_to_b : b_to_a; }
};

/// kd-tree accelerated evaluation; both spans hold xyz triples.
template <typename T>
ChamferTerms<T> chamfer_terms(std::span<const T> a, std::span<const T> b);

/// O(|a||b|) evaluation of the same definition.
template <typename T>
T chamfer_brute_force(std::span<const T> a, std::span<const T> b);

/// max(mean_a min_b |x-y|, mean_b min_a |x-y|). Throws DataError on empty input.
double chamfer(const PointCloud& a, const PointCloud& b);

std::vector<double> flatten(const PointCloud& cloud);

}  // namespace foldcity::nn
