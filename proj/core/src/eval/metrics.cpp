#include "eegscribe/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "eegscribe/errors.hpp"

namespace eegscribe::eval {

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels, int n_classes) {
  if (predictions.empty()) throw ContractError("compute_metrics: empty input");
  if (predictions.size() != labels.size()) throw ContractError("compute_metrics: length mismatch");
  if (n_classes < 1) throw ParameterError("compute_metrics: n_classes must be positive");
  const auto k = static_cast<std::size_t>(n_classes);
  std::vector<long> tp(k, 0), fp(k, 0), fn(k, 0);
  long correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], l = labels[i];
    if (p < 0 || p >= n_classes || l < 0 || l >= n_classes) throw LabelError("compute_metrics: class outside range");
    if (p == l) {
      ++correct;
      ++tp[static_cast<std::size_t>(p)];
    } else {
      ++fp[static_cast<std::size_t>(p)];
      ++fn[static_cast<std::size_t>(l)];
    }
  }
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const long denom = 2 * tp[c] + fp[c] + fn[c];
    f1_sum += denom == 0 ? 0.0 : static_cast<double>(2 * tp[c]) / static_cast<double>(denom);
  }
  return {static_cast<double>(correct) / static_cast<double>(predictions.size()), f1_sum / static_cast<double>(k)};
}

double mean(std::span<const double> v) {
  if (v.empty()) throw ContractError("mean of an empty sequence");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void summarize(FoldReport& report) {
  std::vector<double> acc, f1;
  for (const auto& m : report.per_fold) {
    acc.push_back(m.accuracy);
    f1.push_back(m.macro_f1);
  }
  report.mean_acc = mean(acc);
  report.std_acc = sample_std(acc);
  report.mean_f1 = mean(f1);
  report.std_f1 = sample_std(f1);
}

double silhouette_score(const nx::Tensor& points, std::span<const int> labels) {
  if (points.rank() != 2 || points.dim(0) != labels.size()) throw DimensionError("silhouette: points must be [N×D]");
  const std::size_t n = points.dim(0), d = points.dim(1);
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw ContractError("silhouette: needs at least two clusters");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, double> dist_sum;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (points.at(i, k) - points.at(j, k)) * (points.at(i, k) - points.at(j, k));
      dist_sum[labels[j]] += std::sqrt(s);
    }
    const std::size_t own = sizes[labels[i]];
    if (own < 2) continue;
    const double a = dist_sum[labels[i]] / static_cast<double>(own - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, size] : sizes) {
      if (l != labels[i]) b = std::min(b, dist_sum[l] / static_cast<double>(size));
    }
    const double scale = std::max(a, b);
    if (scale > 0.0) total += (b - a) / scale;
  }
  return total / static_cast<double>(n);
}

}  // namespace eegscribe::eval
