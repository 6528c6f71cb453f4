#include <algorithm>
#include <cmath>
#include <limits>

#include "foldcity/analysis/analysis.hpp"
#include "foldcity/error.hpp"
#include "foldcity/parallel.hpp"
#include "foldcity/rng.hpp"

namespace foldcity::analysis {
namespace {

constexpr double kMinProbability = 1e-12;

Matrix squared_distances(const Matrix& x) {
  const auto n = x.rows();
  Matrix d(n, n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t iu) {
    const auto i = static_cast<Eigen::Index>(iu);
    for (Eigen::Index j = 0; j < n; ++j) d(i, j) = (x.row(i) - x.row(j)).squaredNorm();
  });
  return d;
}

// Row i of the conditional affinities with precision beta; returns entropy (nats).
double conditional_row(const Matrix& d2, Eigen::Index i, double beta, double dmin, Eigen::VectorXd& row) {
  const auto n = d2.cols();
  double sum = 0, weighted = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == i) {
      row[j] = 0;
      continue;
    }
    const double shifted = d2(i, j) - dmin;
    row[j] = std::exp(-beta * shifted);
    sum += row[j];
    weighted += shifted * row[j];
  }
  row /= sum;
  return std::log(sum) + beta * weighted / sum;
}

double kl_divergence(const Matrix& p, const Matrix& y) {
  const auto n = y.rows();
  double zsum = 0;
  Matrix num(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
      zsum += num(i, j);
    }
  }
  double kl = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double q = std::max(num(i, j) / zsum, kMinProbability);
      kl += p(i, j) * std::log(p(i, j) / q);
    }
  }
  return kl;
}

}  // namespace

Matrix tsne_affinities(const Matrix& points, const TsneConfig& config) {
  const auto n = points.rows();
  const Matrix d2 = squared_distances(points);
  const double target = std::log(config.perplexity);
  Matrix cond(n, n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t iu) {
    const auto i = static_cast<Eigen::Index>(iu);
    double dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) dmin = std::min(dmin, d2(i, j));
    }
    double beta = 1, lo = 0, hi = std::numeric_limits<double>::infinity();
    Eigen::VectorXd row(n);
    double h = conditional_row(d2, i, beta, dmin, row);
    for (std::size_t step = 0; step < config.max_search_steps && std::abs(h - target) > config.entropy_tolerance; ++step) {
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
      h = conditional_row(d2, i, beta, dmin, row);
    }
    cond.row(i) = row.transpose();
  });
  Matrix p = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) p(i, j) = i == j ? 0.0 : std::max(p(i, j), kMinProbability);
  }
  return p;
}

TsneResult tsne(const Matrix& points, const TsneConfig& config) {
  const auto n = points.rows();
  if (!(config.perplexity > 0)) throw UsageError("perplexity must be positive");
  if (static_cast<double>(n) <= 3.0 * config.perplexity) {
    throw UsageError("t-SNE needs more than 3 x perplexity points (" + std::to_string(n) +
                     " given); choose a perplexity below " + std::to_string(static_cast<double>(n) / 3.0));
  }
  if (!points.allFinite()) throw DataError("t-SNE: non-finite input");

  const Matrix p = tsne_affinities(points, config);
  TsneResult r;
  r.learning_rate = config.learning_rate > 0 ? config.learning_rate : std::max(static_cast<double>(n) / 12.0, 50.0);

  SplitMix64 rng(salted_seed(config.seed, "tsne"));
  Matrix y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = config.init_sigma * rng.normal();
    y(i, 1) = config.init_sigma * rng.normal();
  }
  r.initial_kl = kl_divergence(p, y);

  Matrix update = Matrix::Zero(n, 2), gains = Matrix::Ones(n, 2), grad(n, 2), num(n, n);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const double exaggeration = it < config.exaggeration_iterations ? config.early_exaggeration : 1.0;
    const double momentum = it < config.momentum_switch ? config.initial_momentum : config.final_momentum;
    double zsum = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        zsum += num(i, j);
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      double gx = 0, gy = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double q = std::max(num(i, j) / zsum, kMinProbability);
        const double w = (exaggeration * p(i, j) - q) * num(i, j);
        gx += w * (y(i, 0) - y(j, 0));
        gy += w * (y(i, 1) - y(j, 1));
      }
      grad(i, 0) = 4 * gx;
      grad(i, 1) = 4 * gy;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < 2; ++c) {
        double& g = gains(i, c);
        g = (grad(i, c) > 0) != (update(i, c) > 0) ? g + 0.2 : g * 0.8;
        g = std::max(g, 0.01);
        update(i, c) = momentum * update(i, c) - r.learning_rate * g * grad(i, c);
      }
    }
    y += update;
    y.rowwise() -= y.colwise().mean();
    if (!y.allFinite()) throw NumericError("t-SNE diverged at iteration " + std::to_string(it + 1));
    if (it + 1 == config.exaggeration_iterations) r.kl_after_exaggeration = kl_divergence(p, y);
  }
  if (config.iterations < config.exaggeration_iterations) r.kl_after_exaggeration = kl_divergence(p, y);
  r.final_kl = kl_divergence(p, y);
  r.embedding = std::move(y);
  return r;
}

}  // namespace foldcity::analysis
