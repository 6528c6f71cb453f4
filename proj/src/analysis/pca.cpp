#include <Eigen/SVD>

#include "foldcity/analysis/analysis.hpp"
#include "foldcity/error.hpp"

namespace foldcity::analysis {

PcaModel pca_fit(const Matrix& data, std::size_t q) {
  const auto n = static_cast<std::size_t>(data.rows());
  const auto d = static_cast<std::size_t>(data.cols());
  if (q == 0) throw UsageError("pca needs at least one component");
  if (n < q) throw UsageError("pca: " + std::to_string(n) + " rows cannot give " + std::to_string(q) + " components");
  if (q > d) throw UsageError("pca: " + std::to_string(q) + " components exceed dimension " + std::to_string(d));
  if (!data.allFinite()) throw DataError("pca: non-finite input");

  PcaModel m;
  m.mean = data.colwise().mean().transpose();
  const Matrix centred = data.rowwise() - m.mean.transpose();
  const double dof = n > 1 ? static_cast<double>(n - 1) : 1.0;
  m.total_variance = centred.squaredNorm() / dof;

  Eigen::BDCSVD<Matrix> svd(centred, Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const Matrix& v = svd.matrixV();
  m.components.resize(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < q; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    Eigen::VectorXd c = col < v.cols() ? Eigen::VectorXd(v.col(col)) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < c.size(); ++j) {
      if (std::abs(c[j]) > std::abs(c[arg])) arg = j;
    }
    if (c[arg] < 0) c = -c;
    m.components.row(col) = c.transpose();
    const double sv = col < s.size() ? s[col] : 0.0;
    m.explained_variance.push_back(sv * sv / dof);
  }
  return m;
}

Matrix pca_transform(const PcaModel& model, const Matrix& data) {
  if (static_cast<std::size_t>(data.cols()) != model.dim()) {
    throw DataError("pca_transform: input has " + std::to_string(data.cols()) + " columns, model expects " +
                    std::to_string(model.dim()));
  }
  return (data.rowwise() - model.mean.transpose()) * model.components.transpose();
}

Matrix pca_inverse(const PcaModel& model, const Matrix& reduced) {
  if (static_cast<std::size_t>(reduced.cols()) != model.rank()) throw DataError("pca_inverse: rank mismatch");
  return (reduced * model.components).rowwise() + model.mean.transpose();
}

}  // namespace foldcity::analysis
