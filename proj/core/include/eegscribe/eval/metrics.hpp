#pragma once

#include <span>
#include <string>
#include <vector>

#include "eegscribe/dsp/session.hpp"
#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::eval {

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Macro F1 averages 2TP / (2TP + FP + FN) over all n_classes; a class with
/// no predictions and no instances scores 0.
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels,
                        int n_classes = dsp::kNumClasses);

/// Aggregate of one model configuration across folds. Standard deviations
/// are sample (n − 1) deviations.
struct FoldReport {
  std::string model;
  std::size_t d_embed = 0;
  std::vector<Metrics> per_fold;
  double mean_acc = 0.0, std_acc = 0.0, mean_f1 = 0.0, std_f1 = 0.0;
};

/// Fills mean/std fields from per_fold.
void summarize(FoldReport& report);

double mean(std::span<const double> v);
double sample_std(std::span<const double> v);

/// Mean silhouette coefficient of points [N×D] under the given labels,
/// Euclidean distance. Singleton clusters contribute 0.
double silhouette_score(const nx::Tensor& points, std::span<const int> labels);

}  // namespace eegscribe::eval
