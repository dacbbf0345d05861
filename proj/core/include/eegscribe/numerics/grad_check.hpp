#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eegscribe/numerics/graph.hpp"

namespace eegscribe::nx {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  bool passed = true;

  std::string summary() const;
};

/// Builds the function under test on a fresh graph from leaf inputs.
using GraphFn = std::function<Var(Graph&, std::span<const Var>)>;

/// Compares reverse-mode gradients against central differences for every
/// element of every input. A non-scalar output is reduced with fixed random
/// weights drawn from `seed`, so every output element contributes.
///
/// Relative error is |a − n| / max(|a|, |n|, scale_floor).
GradCheckReport grad_check(const GraphFn& fn, const std::vector<Tensor>& inputs, double h, double tol,
                           std::uint64_t seed = 7, double scale_floor = 1e-2);

}  // namespace eegscribe::nx
