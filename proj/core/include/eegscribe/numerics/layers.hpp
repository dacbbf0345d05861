#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "eegscribe/numerics/ops.hpp"
#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::nx {

using Rng = std::mt19937_64;

/// Non-owning (name, tensor) view used for optimisers and checkpoints.
using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

/// Fully connected layer; weight is [in×out].
struct DenseLayer {
  Tensor weight;
  Tensor bias;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Rng& rng);

  Var operator()(Var x);
  void collect(const std::string& prefix, NamedParams& out);
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

/// 1-D convolution; kernel is [out×(in/groups)×width].
struct Conv1dLayer {
  Tensor kernel;
  Tensor bias;
  Conv1dOptions options;

  Conv1dLayer() = default;
  Conv1dLayer(std::size_t in, std::size_t out, std::size_t width, Conv1dOptions options, Rng& rng);

  Var operator()(Var x);
  void collect(const std::string& prefix, NamedParams& out);
};

/// Uniform(−bound, bound) fill with bound = sqrt(6 / fan_in) (He-uniform).
void he_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

std::size_t parameter_count(const NamedParams& params);
void zero_grads(const NamedParams& params);

/// Value copies of every parameter, in order.
std::vector<Tensor> snapshot(const NamedParams& params);
void restore(const NamedParams& params, const std::vector<Tensor>& values);

}  // namespace eegscribe::nx
