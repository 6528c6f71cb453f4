#include <map>

#include "foldcity/analysis/analysis.hpp"
#include "foldcity/error.hpp"

namespace foldcity::analysis {

double label_purity(std::span<const int> clusters, std::span<const std::string> reference) {
  if (clusters.size() != reference.size()) throw DataError("purity: label lists differ in length");
  if (clusters.empty()) throw DataError("purity of an empty labelling");
  std::map<int, std::map<std::string, std::size_t>> table;
  for (std::size_t i = 0; i < clusters.size(); ++i) ++table[clusters[i]][reference[i]];
  std::size_t majority = 0;
  for (const auto& [cluster, counts] : table) {
    std::size_t best = 0;
    for (const auto& [label, n] : counts) best = std::max(best, n);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(clusters.size());
}

}  // namespace foldcity::analysis
