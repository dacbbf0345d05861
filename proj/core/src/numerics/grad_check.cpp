#include "eegscribe/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <sstream>

#include "eegscribe/errors.hpp"
#include "eegscribe/numerics/ops.hpp"

namespace eegscribe::nx {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << ": max rel err " << max_rel_error << " over " << checked
     << " entries (worst input " << worst_input << " index " << worst_index << ")";
  return os.str();
}

namespace {

struct Evaluation {
  double value;
  std::vector<std::vector<double>> grads;
};

Evaluation evaluate(const GraphFn& fn, const std::vector<Tensor>& inputs, const Tensor* weights, bool with_grad) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(g.constant(t));
  Var out = fn(g, leaves);
  if (weights != nullptr) out = sum(mul(out, g.constant(*weights)));
  Evaluation ev{out.value()[0], {}};
  if (with_grad) {
    g.backward(out);
    for (const Var& leaf : leaves) {
      auto gr = g.grad_of(leaf);
      ev.grads.emplace_back(gr.begin(), gr.end());
      if (ev.grads.back().empty()) ev.grads.back().assign(leaf.value().numel(), 0.0);
    }
  }
  return ev;
}

}  // namespace

GradCheckReport grad_check(const GraphFn& fn, const std::vector<Tensor>& inputs, double h, double tol,
                           std::uint64_t seed, double scale_floor) {
  if (h <= 0.0) throw ParameterError("grad_check: step must be positive");
  std::optional<Tensor> weights;
  {
    Graph probe;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(probe.constant(t));
    const Var out = fn(probe, leaves);
    if (out.value().numel() != 1) {
      Tensor w(out.shape());
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (auto& v : w.data()) v = dist(rng);
      weights = std::move(w);
    }
  }
  const Tensor* wp = weights ? &*weights : nullptr;
  const Evaluation analytic = evaluate(fn, inputs, wp, true);

  GradCheckReport report;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (std::size_t k = 0; k < probe[i].numel(); ++k) {
      const double orig = probe[i][k];
      probe[i][k] = orig + h;
      const double fp = evaluate(fn, probe, wp, false).value;
      probe[i][k] = orig - h;
      const double fm = evaluate(fn, probe, wp, false).value;
      probe[i][k] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.grads[i][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), scale_floor});
      const double err = std::abs(a - numeric) / denom;
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = i;
        report.worst_index = k;
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace eegscribe::nx
