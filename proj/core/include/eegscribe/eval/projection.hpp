#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eegscribe/numerics/graph.hpp"
#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::eval {

struct ProjectionResult {
  std::string method;
  /// [N×k]
  nx::Tensor coords;

  // PCA only.
  /// [D×k], orthonormal columns.
  nx::Tensor components;
  std::vector<double> explained_variance;
  std::vector<double> explained_variance_ratio;

  // t-SNE only.
  double kl = 0.0;
  std::vector<double> kl_history;
  /// Realized perplexity of every point's conditional distribution.
  std::vector<double> perplexities;
};

/// Centred SVD projection onto the top k right singular vectors. Each
/// component's largest-magnitude entry is made positive.
ProjectionResult pca_project(const nx::Tensor& x, std::size_t k);

struct TsneConfig {
  double perplexity = 30.0;
  std::size_t iters = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  std::size_t exaggeration_iters = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
};

/// Row-conditional Gaussian affinities [N×N] from squared distances, each
/// row's bandwidth bisected to the target perplexity.
struct Affinities {
  nx::Tensor conditional;
  std::vector<double> perplexities;
};
Affinities conditional_affinities(const nx::Tensor& sq_dist, double perplexity);

/// Symmetrized joint P = (P_j|i + P_i|j) / 2N.
nx::Tensor joint_affinities(const nx::Tensor& conditional);

/// KL(P‖Q) for coords y [N×2] with Student-t Q.
double tsne_kl(const nx::Tensor& p, const nx::Tensor& y);
/// dKL/dy = 4 Σ_j (p_ij − q_ij)(y_i − y_j)(1 + |y_i − y_j|²)⁻¹.
nx::Tensor tsne_gradient(const nx::Tensor& p, const nx::Tensor& y);
/// KL as a graph node with the analytic gradient, for gradient checking.
nx::Var tsne_kl(nx::Var y, const nx::Tensor& p);

/// Exact O(N²) t-SNE to two dimensions.
ProjectionResult tsne_project(const nx::Tensor& x, const TsneConfig& config);

}  // namespace eegscribe::eval
