#include "eegscribe/numerics/adam.hpp"

#include <cmath>
#include <utility>

#include "eegscribe/errors.hpp"

namespace eegscribe::nx {

AdamState make_adam_state(const NamedParams& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& [name, t] : params) {
    s.m.emplace_back(t->shape(), 0.0);
    s.v.emplace_back(t->shape(), 0.0);
  }
  return s;
}

void adam_step(const NamedParams& params, AdamState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: state holds " + std::to_string(state.m.size()) + " buffers for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].shape() != params[i].second->shape() || state.v[i].shape() != params[i].second->shape()) {
      throw DimensionError("adam_step: moment buffer shape mismatch for " + params[i].first);
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].second;
    if (!p.has_grad()) continue;
    const auto g = std::as_const(p).grad();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    auto w = p.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace eegscribe::nx
