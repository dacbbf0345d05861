#pragma once

#include <cstdint>
#include <vector>

#include "eegscribe/numerics/layers.hpp"
#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::nx {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Fresh state with zeroed moment buffers shaped like `params`.
AdamState make_adam_state(const NamedParams& params, double lr);

/// One bias-corrected Adam update of every parameter from its gradient buffer.
/// Parameters without an allocated gradient are treated as having zero gradient.
void adam_step(const NamedParams& params, AdamState& state);

}  // namespace eegscribe::nx
