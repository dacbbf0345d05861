#include "eegscribe/eval/projection.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "eegscribe/errors.hpp"

namespace eegscribe::eval {

using nx::Tensor;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

Eigen::Map<const RowMatrix> as_matrix(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1))};
}

Tensor from_matrix(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<RowMatrix>(t.data().data(), m.rows(), m.cols()) = m;
  return t;
}

Tensor squared_distances(const Tensor& x) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x.at(i, k) - x.at(j, k);
        s += diff * diff;
      }
      out.at(i, j) = out.at(j, i) = s;
    }
  }
  return out;
}

// Entropy (nats) of row i's conditional distribution at precision beta;
// writes the normalized row into p.
double row_entropy(const Tensor& d, std::size_t i, double beta, double shift, std::vector<double>& p) {
  const std::size_t n = d.dim(0);
  double sum = 0.0, weighted = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) {
      p[j] = 0.0;
      continue;
    }
    const double dj = d.at(i, j) - shift;
    p[j] = std::exp(-beta * dj);
    sum += p[j];
    weighted += dj * p[j];
  }
  for (double& v : p) v /= sum;
  return std::log(sum) + beta * weighted / sum;
}

// Student-t kernel values and their off-diagonal sum.
double student_kernel(const Tensor& y, Tensor& num) {
  const std::size_t n = y.dim(0), dims = y.dim(1);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num.at(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < dims; ++k) {
        const double diff = y.at(i, k) - y.at(j, k);
        s += diff * diff;
      }
      num.at(i, j) = num.at(j, i) = 1.0 / (1.0 + s);
      z += 2.0 * num.at(i, j);
    }
  }
  return z;
}

void check_pq(const Tensor& p, const Tensor& y) {
  if (p.rank() != 2 || p.dim(0) != p.dim(1) || y.rank() != 2 || y.dim(0) != p.dim(0)) {
    throw DimensionError("t-SNE: P must be [N×N] and y [N×k]");
  }
}

}  // namespace

ProjectionResult pca_project(const Tensor& x, std::size_t k) {
  if (x.rank() != 2) throw DimensionError("pca: input must be [N×D]");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n < 2) throw ContractError("pca: needs at least two samples");
  if (k < 1 || k > std::min(n, d)) throw ContractError("pca: k must lie in [1, min(N, D)]");
  x.require_finite("pca input");
  const RowMatrix centred = as_matrix(x).rowwise() - as_matrix(x).colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  Eigen::MatrixXd v = svd.matrixV().leftCols(static_cast<Eigen::Index>(k));
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index arg = 0;
    v.col(c).cwiseAbs().maxCoeff(&arg);
    if (v(arg, c) < 0.0) v.col(c) *= -1.0;
  }
  ProjectionResult r;
  r.method = "pca";
  r.components = from_matrix(v);
  r.coords = from_matrix(centred * v);
  const auto& s = svd.singularValues();
  const double total = s.squaredNorm();
  for (std::size_t c = 0; c < k; ++c) {
    const double var = s(static_cast<Eigen::Index>(c)) * s(static_cast<Eigen::Index>(c));
    r.explained_variance.push_back(var / static_cast<double>(n - 1));
    r.explained_variance_ratio.push_back(total > 0.0 ? var / total : 0.0);
  }
  return r;
}

Affinities conditional_affinities(const Tensor& sq_dist, double perplexity) {
  const std::size_t n = sq_dist.dim(0);
  if (sq_dist.rank() != 2 || sq_dist.dim(1) != n) throw DimensionError("affinities: distances must be [N×N]");
  if (!(perplexity >= 1.0) || perplexity > static_cast<double>(n - 1)) {
    throw ParameterError("affinities: perplexity must lie in [1, N − 1]");
  }
  constexpr int kBisections = 50;
  constexpr double kTolerance = 1e-7;
  const double target = std::log(perplexity);
  Affinities a{Tensor({n, n}), std::vector<double>(n)};
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    double shift = std::numeric_limits<double>::infinity(), mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) shift = std::min(shift, sq_dist.at(i, j));
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) mean += (sq_dist.at(i, j) - shift) / static_cast<double>(n - 1);
    }
    // Entropy falls as beta grows; bracket the target in log(beta).
    double lo = std::log(1.0 / std::max(mean, 1e-300)), hi = lo;
    while (row_entropy(sq_dist, i, std::exp(lo), shift, p) < target && lo > -700.0) lo -= 1.0;
    while (row_entropy(sq_dist, i, std::exp(hi), shift, p) > target && hi < 700.0) hi += 1.0;
    double h = 0.0;
    for (int it = 0; it < kBisections; ++it) {
      const double mid = 0.5 * (lo + hi);
      h = row_entropy(sq_dist, i, std::exp(mid), shift, p);
      if (std::abs(std::exp(h) - perplexity) < kTolerance) break;
      (h > target ? lo : hi) = mid;
    }
    a.perplexities[i] = std::exp(h);
    for (std::size_t j = 0; j < n; ++j) a.conditional.at(i, j) = p[j];
  }
  return a;
}

Tensor joint_affinities(const Tensor& conditional) {
  const std::size_t n = conditional.dim(0);
  Tensor p({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      p.at(i, j) = (conditional.at(i, j) + conditional.at(j, i)) / (2.0 * static_cast<double>(n));
    }
  }
  return p;
}

double tsne_kl(const Tensor& p, const Tensor& y) {
  check_pq(p, y);
  const std::size_t n = y.dim(0);
  Tensor num({n, n});
  const double z = student_kernel(y, num);
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double pij = p.at(i, j);
      if (i != j && pij > 0.0) kl += pij * std::log(pij * z / num.at(i, j));
    }
  }
  return kl;
}

Tensor tsne_gradient(const Tensor& p, const Tensor& y) {
  check_pq(p, y);
  const std::size_t n = y.dim(0), dims = y.dim(1);
  Tensor num({n, n});
  const double z = student_kernel(y, num);
  Tensor g({n, dims});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double w = 4.0 * (p.at(i, j) - num.at(i, j) / z) * num.at(i, j);
      for (std::size_t k = 0; k < dims; ++k) g.at(i, k) += w * (y.at(i, k) - y.at(j, k));
    }
  }
  return g;
}

nx::Var tsne_kl(nx::Var y, const Tensor& p) {
  const Tensor& yv = y.value();
  return y.graph->record("tsne_kl", Tensor::scalar(tsne_kl(p, yv)), {y.id}, [y = y.id, p](nx::Graph& gr, std::size_t self) {
    const double up = gr.grad(self)[0];
    const Tensor g = tsne_gradient(p, gr.value(y));
    auto gy = gr.grad(y);
    for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += up * g[i];
  });
}

ProjectionResult tsne_project(const Tensor& x, const TsneConfig& config) {
  if (x.rank() != 2) throw DimensionError("t-SNE: input must be [N×D]");
  const std::size_t n = x.dim(0);
  constexpr std::size_t kMaxPoints = 5000;
  if (n > kMaxPoints) throw ContractError("t-SNE: exact variant limited to 5000 points");
  if (!(config.perplexity >= 5.0) || config.perplexity > static_cast<double>(n - 1) / 3.0) {
    throw ParameterError("t-SNE: perplexity must lie in [5, (N − 1) / 3]");
  }
  x.require_finite("t-SNE input");

  const Affinities a = conditional_affinities(squared_distances(x), config.perplexity);
  const Tensor p = joint_affinities(a.conditional);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> init(0.0, 1e-4);
  Tensor y({n, 2}), update({n, 2}), gains({n, 2}, 1.0);
  for (auto& v : y.data()) v = init(rng);

  ProjectionResult r;
  r.method = "tsne";
  r.perplexities = a.perplexities;
  Tensor exaggerated = p;
  for (auto& v : exaggerated.data()) v *= config.exaggeration;
  for (std::size_t it = 0; it < config.iters; ++it) {
    const bool early = it < config.exaggeration_iters;
    const double momentum = early ? config.initial_momentum : config.final_momentum;
    const Tensor g = tsne_gradient(early ? exaggerated : p, y);
    for (std::size_t i = 0; i < y.numel(); ++i) {
      // Delta-bar-delta step-size adaptation.
      gains[i] = (g[i] > 0.0) != (update[i] > 0.0) ? gains[i] + 0.2 : std::max(0.01, gains[i] * 0.8);
      update[i] = momentum * update[i] - config.learning_rate * gains[i] * g[i];
      y[i] += update[i];
    }
    for (std::size_t k = 0; k < 2; ++k) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += y.at(i, k);
      m /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) y.at(i, k) -= m;
    }
    r.kl_history.push_back(tsne_kl(p, y));
  }
  r.kl = config.iters > 0 ? r.kl_history.back() : tsne_kl(p, y);
  r.coords = std::move(y);
  return r;
}

}  // namespace eegscribe::eval
