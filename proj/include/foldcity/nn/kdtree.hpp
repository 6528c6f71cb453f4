#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace foldcity::nn {

/// Squared distance and point index; ordered lexicographically so that equal
/// distances resolve to the lower index.
template <typename T>
struct Neighbor {
  T dist2;
  std::uint32_t index;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
};

/// Static 3-D kd-tree over a flat xyz array. Queries are exact: results equal a
/// brute-force scan ordered by (squared distance, index).
template <typename T>
class KdTree3 {
 public:
  /// `xyz` holds count*3 coordinates and must outlive the tree.
  explicit KdTree3(std::span<const T> xyz, std::uint32_t leaf_size = 8);

  std::size_t size() const { return count_; }

  /// Nearest point to q.
  Neighbor<T> nearest(const T* q) const;

  /// k nearest points to q in ascending order, skipping index `exclude`
  /// (pass UINT32_MAX to skip nothing).
  void knn(const T* q, std::size_t k, std::uint32_t exclude, std::vector<Neighbor<T>>& out) const;

 private:
  struct Node {
    std::uint32_t begin, end;  // range in order_
    std::int32_t left = -1, right = -1;
    int axis = 0;
    T split = 0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end, int depth);
  T dist2(const T* q, std::uint32_t i) const;

  std::span<const T> xyz_;
  std::size_t count_;
  std::uint32_t leaf_size_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Reference implementations used as oracles and for tiny inputs.
template <typename T>
Neighbor<T> brute_nearest(std::span<const T> xyz, const T* q);

template <typename T>
std::vector<Neighbor<T>> brute_knn(std::span<const T> xyz, const T* q, std::size_t k, std::uint32_t exclude);

}  // namespace foldcity::nn
