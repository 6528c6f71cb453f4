#include "foldcity/nn/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>

namespace foldcity::nn {

template <typename T>
KdTree3<T>::KdTree3(std::span<const T> xyz, std::uint32_t leaf_size)
    : xyz_(xyz), count_(xyz.size() / 3), leaf_size_(std::max<std::uint32_t>(1, leaf_size)) {
  order_.resize(count_);
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * (count_ / leaf_size_ + 1));
  if (count_) build(0, static_cast<std::uint32_t>(count_), 0);
}

template <typename T>
std::int32_t KdTree3<T>::build(std::uint32_t begin, std::uint32_t end, int depth) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  T lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::numeric_limits<T>::max();
    hi[a] = std::numeric_limits<T>::lowest();
  }
  for (std::uint32_t i = begin; i < end; ++i) {
    const T* p = &xyz_[3 * order_[i]];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  int axis = 0;
  for (int a = 1; a < 3; ++a) {
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  }
  if (hi[axis] == lo[axis]) return id;  // all points coincide

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const T va = xyz_[3 * a + axis], vb = xyz_[3 * b + axis];
                     return va < vb || (va == vb && a < b);
                   });
  const T split = xyz_[3 * order_[mid] + axis];
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  (void)depth;
  const std::int32_t left = build(begin, mid, depth + 1);
  const std::int32_t right = build(mid, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

template <typename T>
T KdTree3<T>::dist2(const T* q, std::uint32_t i) const {
  const T* p = &xyz_[3 * i];
  const T dx = q[0] - p[0], dy = q[1] - p[1], dz = q[2] - p[2];
  return dx * dx + dy * dy + dz * dz;
}

// Points left of the split have coordinate <= split and points right have
// coordinate >= split, so the plane distance is a lower bound for both sides.
template <typename T>
Neighbor<T> KdTree3<T>::nearest(const T* q) const {
  Neighbor<T> best{std::numeric_limits<T>::infinity(), std::numeric_limits<std::uint32_t>::max()};
  if (!count_) return best;
  struct Item {
    std::int32_t node;
    T bound;
  };
  Item stack[128];
  int top = 0;
  stack[top++] = {0, T(0)};
  while (top) {
    const Item it = stack[--top];
    if (it.bound > best.dist2) continue;
    const Node& n = nodes_[it.node];
    if (n.left < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const Neighbor<T> cand{dist2(q, order_[i]), order_[i]};
        if (cand < best) best = cand;
      }
      continue;
    }
    const T diff = q[n.axis] - n.split;
    const std::int32_t near = diff <= 0 ? n.left : n.right;
    const std::int32_t far = diff <= 0 ? n.right : n.left;
    stack[top++] = {far, std::max(it.bound, diff * diff)};
    stack[top++] = {near, it.bound};
  }
  return best;
}

template <typename T>
void KdTree3<T>::knn(const T* q, std::size_t k, std::uint32_t exclude, std::vector<Neighbor<T>>& out) const {
  out.clear();
  if (k == 0 || !count_) return;
  std::priority_queue<Neighbor<T>> heap;  // max-heap on (dist2, index)
  auto worst = [&] { return heap.size() < k ? std::numeric_limits<T>::infinity() : heap.top().dist2; };

  struct Item {
    std::int32_t node;
    T bound;
  };
  Item stack[128];
  int top = 0;
  stack[top++] = {0, T(0)};
  while (top) {
    const Item it = stack[--top];
    if (it.bound > worst()) continue;
    const Node& n = nodes_[it.node];
    if (n.left < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::uint32_t idx = order_[i];
        if (idx == exclude) continue;
        const Neighbor<T> cand{dist2(q, idx), idx};
        if (heap.size() < k) heap.push(cand);
        else if (cand < heap.top()) {
          heap.pop();
          heap.push(cand);
        }
      }
      continue;
    }
    const T diff = q[n.axis] - n.split;
    const std::int32_t near = diff <= 0 ? n.left : n.right;
    const std::int32_t far = diff <= 0 ? n.right : n.left;
    stack[top++] = {far, std::max(it.bound, diff * diff)};
    stack[top++] = {near, it.bound};
  }
  out.resize(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
}

template <typename T>
Neighbor<T> brute_nearest(std::span<const T> xyz, const T* q) {
  Neighbor<T> best{std::numeric_limits<T>::infinity(), std::numeric_limits<std::uint32_t>::max()};
  for (std::uint32_t i = 0; i < xyz.size() / 3; ++i) {
    const T dx = q[0] - xyz[3 * i], dy = q[1] - xyz[3 * i + 1], dz = q[2] - xyz[3 * i + 2];
    const Neighbor<T> cand{dx * dx + dy * dy + dz * dz, i};
    if (cand < best) best = cand;
  }
  return best;
}

template <typename T>
std::vector<Neighbor<T>> brute_knn(std::span<const T> xyz, const T* q, std::size_t k, std::uint32_t exclude) {
  std::vector<Neighbor<T>> all;
  for (std::uint32_t i = 0; i < xyz.size() / 3; ++i) {
    if (i == exclude) continue;
    const T dx = q[0] - xyz[3 * i], dy = q[1] - xyz[3 * i + 1], dz = q[2] - xyz[3 * i + 2];
    all.push_back({dx * dx + dy * dy + dz * dz, i});
  }
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end());
  all.resize(keep);
  return all;
}

template class KdTree3<float>;
template class KdTree3<double>;
template Neighbor<float> brute_nearest<float>(std::span<const float>, const float*);
template Neighbor<double> brute_nearest<double>(std::span<const double>, const double*);
template std::vector<Neighbor<float>> brute_knn<float>(std::span<const float>, const float*, std::size_t, std::uint32_t);
template std::vector<Neighbor<double>> brute_knn<double>(std::span<const double>, const double*, std::size_t,
                                                         std::uint32_t);

}  // namespace foldcity::nn
