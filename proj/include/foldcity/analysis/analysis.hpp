#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace foldcity::analysis {

/// One observation per row.
using Matrix = Eigen::MatrixXd;

struct PcaModel {
  Eigen::VectorXd mean;                    ///< D
  Eigen::MatrixXd components;              ///< q x D, orthonormal rows
  std::vector<double> explained_variance;  ///< per component, non-increasing
  double total_variance = 0;               ///< sum of per-column sample variances

  std::size_t dim() const { return static_cast<std::size_t>(components.cols()); }
  std::size_t rank() const { return static_cast<std::size_t>(components.rows()); }
};

/// Top-q right singular vectors of the centred data. Each component is signed
/// so its largest-magnitude entry (first on ties) is positive.
PcaModel pca_fit(const Matrix& data, std::size_t q = 15);
Matrix pca_transform(const PcaModel& model, const Matrix& data);
Matrix pca_inverse(const PcaModel& model, const Matrix& reduced);

/// Row of a merge table. Leaves are 0..n-1; the cluster created by merge m is n+m.
struct Merge {
  std::size_t a;  ///< smaller cluster id
  std::size_t b;
  double distance;
  std::size_t size;

  friend bool operator==(const Merge&, const Merge&) = default;
};

struct Dendrogram {
  std::size_t leaves = 0;
  std::vector<Merge> merges;  ///< leaves - 1 rows
};

/// Squared merge distances within this relative margin of the step minimum
/// count as tied, so equal distances reached by different arithmetic agree.
inline constexpr double kWardTieTolerance = 1e-10;

/// Ward agglomeration with Lance-Williams updates. Ties go to the pair with
/// the smallest (a, b) cluster ids.
Dendrogram ward_linkage(const Matrix& points);

/// Clusters after applying every merge with distance <= cutoff. Labels are
/// 0-based and numbered by each cluster's smallest leaf.
std::vector<int> cut_dendrogram(const Dendrogram& dendrogram, double cutoff);
/// Same labelling after the first leaves - clusters merges.
std::vector<int> cut_dendrogram_count(const Dendrogram& dendrogram, std::size_t clusters);

/// Up to m member indices of `cluster` without replacement, ascending.
std::vector<std::size_t> sample_cluster(const std::vector<int>& labels, int cluster, std::size_t m, std::uint64_t seed);

/// Share of items whose cluster's most frequent reference label is their own.
double label_purity(std::span<const int> clusters, std::span<const std::string> reference);

struct TsneConfig {
  double perplexity = 80;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 0;  ///< 0 selects max(count / 12, 50)
  double early_exaggeration = 12;
  std::size_t exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;
  double init_sigma = 1e-4;
  double entropy_tolerance = 1e-5;
  std::size_t max_search_steps = 50;
};

struct TsneResult {
  Matrix embedding;                  ///< count x 2
  double initial_kl = 0;             ///< KL(P || Q) at the initial layout
  double kl_after_exaggeration = 0;  ///< once exaggeration has ended
  double final_kl = 0;
  double learning_rate = 0;
};

/// Symmetrised input affinities P (count x count, zero diagonal, sums to 1).
Matrix tsne_affinities(const Matrix& points, const TsneConfig& config);

/// Exact t-SNE into two dimensions.
TsneResult tsne(const Matrix& points, const TsneConfig& config = {});

}  // namespace foldcity::analysis
