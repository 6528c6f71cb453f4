#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "foldcity/analysis/analysis.hpp"
#include "foldcity/error.hpp"
#include "foldcity/rng.hpp"

namespace foldcity::analysis {
namespace {

// Candidate pair ordered by (squared distance, smaller id, larger id).
struct Candidate {
  double d2 = std::numeric_limits<double>::infinity();
  std::size_t lo = std::numeric_limits<std::size_t>::max();
  std::size_t hi = std::numeric_limits<std::size_t>::max();
  std::size_t slot = std::numeric_limits<std::size_t>::max();

  bool operator<(const Candidate& o) const { return std::tie(d2, lo, hi) < std::tie(o.d2, o.lo, o.hi); }
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

std::vector<int> labels_after(const Dendrogram& dg, std::size_t merges) {
  const std::size_t n = dg.leaves;
  // Each internal cluster id maps to one representative leaf.
  std::vector<std::size_t> rep(n + dg.merges.size());
  std::iota(rep.begin(), rep.begin() + static_cast<std::ptrdiff_t>(n), 0);
  UnionFind uf(n);
  for (std::size_t m = 0; m < dg.merges.size(); ++m) {
    const auto& row = dg.merges[m];
    rep[n + m] = rep[row.a];
    if (m < merges) uf.unite(rep[row.a], rep[row.b]);
  }
  std::vector<int> labels(n, -1);
  std::vector<int> by_root(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = uf.find(i);
    if (by_root[r] < 0) by_root[r] = next++;
    labels[i] = by_root[r];
  }
  return labels;
}

}  // namespace

Dendrogram ward_linkage(const Matrix& points) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n < 2) throw UsageError("ward_linkage needs at least two points");
  if (!points.allFinite()) throw DataError("ward_linkage: non-finite input");

  // Squared Ward distances between slots; slot i starts as leaf i and is
  // reused by the cluster formed when it absorbs another slot.
  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      d2[i * n + j] = d2[j * n + i] = (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).squaredNorm();
    }
  }
  std::vector<std::size_t> id(n), size(n, 1);
  std::iota(id.begin(), id.end(), 0);
  std::vector<char> active(n, 1);
  std::vector<Candidate> nearest(n);

  auto candidate = [&](std::size_t i, std::size_t j) {
    return Candidate{d2[i * n + j], std::min(id[i], id[j]), std::max(id[i], id[j]), j};
  };
  auto rescan = [&](std::size_t i) {
    Candidate best;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && active[j]) best = std::min(best, candidate(i, j));
    }
    nearest[i] = best;
  };
  for (std::size_t i = 0; i < n; ++i) rescan(i);

  Dendrogram dg;
  dg.leaves = n;
  for (std::size_t step = 0; step + 1 < n; ++step) {
    // Pairs within the tie window of the minimum are ordered by ids alone;
    // only rows whose nearest distance is inside the window can hold them.
    double m2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (active[i]) m2 = std::min(m2, nearest[i].d2);
    }
    const double window = m2 + kWardTieTolerance * m2;
    std::size_t bi = n, bj = n, blo = 0, bhi = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i] || nearest[i].d2 > window) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!active[j] || d2[i * n + j] > window) continue;
        const std::size_t lo = std::min(id[i], id[j]), hi = std::max(id[i], id[j]);
        if (bi == n || std::tie(lo, hi) < std::tie(blo, bhi)) {
          bi = i;
          bj = j;
          blo = lo;
          bhi = hi;
        }
      }
    }
    const std::size_t keep = std::min(bi, bj), drop = std::max(bi, bj);
    const double dij = d2[bi * n + bj];
    dg.merges.push_back({std::min(id[bi], id[bj]), std::max(id[bi], id[bj]), std::sqrt(dij), size[bi] + size[bj]});

    const double ni = static_cast<double>(size[keep]), nj = static_cast<double>(size[drop]);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == keep || k == drop) continue;
      const double nk = static_cast<double>(size[k]);
      const double v = ((ni + nk) * d2[keep * n + k] + (nj + nk) * d2[drop * n + k] - nk * dij) / (ni + nj + nk);
      d2[keep * n + k] = d2[k * n + keep] = std::max(v, 0.0);
    }
    active[drop] = 0;
    size[keep] += size[drop];
    id[keep] = n + step;

    rescan(keep);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == keep) continue;
      if (nearest[k].slot == keep || nearest[k].slot == drop) {
        rescan(k);
      } else {
        nearest[k] = std::min(nearest[k], candidate(k, keep));
      }
    }
  }
  return dg;
}

std::vector<int> cut_dendrogram(const Dendrogram& dendrogram, double cutoff) {
  if (!(cutoff >= 0)) throw UsageError("cut distance must be >= 0");
  std::size_t applied = 0;
  while (applied < dendrogram.merges.size() && dendrogram.merges[applied].distance <= cutoff) ++applied;
  return labels_after(dendrogram, applied);
}

std::vector<int> cut_dendrogram_count(const Dendrogram& dendrogram, std::size_t clusters) {
  if (clusters == 0 || clusters > dendrogram.leaves) {
    throw UsageError("cluster count must be in [1, " + std::to_string(dendrogram.leaves) + "]");
  }
  return labels_after(dendrogram, dendrogram.leaves - clusters);
}

std::vector<std::size_t> sample_cluster(const std::vector<int>& labels, int cluster, std::size_t m, std::uint64_t seed) {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == cluster) members.push_back(i);
  }
  if (members.empty()) throw UsageError("unknown cluster id " + std::to_string(cluster));
  if (m >= members.size()) return members;
  SplitMix64 rng(salted_seed(seed, static_cast<std::uint64_t>(cluster)));
  for (std::size_t i = 0; i < m; ++i) std::swap(members[i], members[i + rng.below(members.size() - i)]);
  members.resize(m);
  std::sort(members.begin(), members.end());
  return members;
}

}  // namespace foldcity::analysis
