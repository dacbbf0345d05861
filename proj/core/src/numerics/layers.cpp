#include "eegscribe/numerics/layers.hpp"

#include <cmath>

#include "eegscribe/errors.hpp"

namespace eegscribe::nx {

void he_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = dist(rng);
}

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Rng& rng) : weight({in, out}), bias({out}, 0.0) {
  he_uniform(weight, in, rng);
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);
}

Var DenseLayer::operator()(Var x) {
  Graph& g = *x.graph;
  return dense(x, g.parameter(weight), g.parameter(bias));
}

void DenseLayer::collect(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

Conv1dLayer::Conv1dLayer(std::size_t in, std::size_t out, std::size_t width, Conv1dOptions opts, Rng& rng)
    : kernel({out, in / opts.groups, width}), bias({out}, 0.0), options(opts) {
  if (in % opts.groups != 0 || out % opts.groups != 0) throw DimensionError("conv layer: groups must divide channels");
  he_uniform(kernel, (in / opts.groups) * width, rng);
  kernel.set_requires_grad(true);
  bias.set_requires_grad(true);
}

Var Conv1dLayer::operator()(Var x) {
  Graph& g = *x.graph;
  return conv1d(x, g.parameter(kernel), g.parameter(bias), options);
}

void Conv1dLayer::collect(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".kernel", &kernel);
  out.emplace_back(prefix + ".bias", &bias);
}

std::size_t parameter_count(const NamedParams& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t->numel();
  return n;
}

void zero_grads(const NamedParams& params) {
  for (const auto& [name, t] : params) t->zero_grad();
}

std::vector<Tensor> snapshot(const NamedParams& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) {
    Tensor copy(t->shape(), t->storage());
    out.push_back(std::move(copy));
  }
  return out;
}

void restore(const NamedParams& params, const std::vector<Tensor>& values) {
  if (values.size() != params.size()) throw DimensionError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor* t = params[i].second;
    if (t->shape() != values[i].shape()) {
      throw DimensionError("restore: shape mismatch for " + params[i].first);
    }
    t->storage() = values[i].storage();
  }
}

}  // namespace eegscribe::nx
