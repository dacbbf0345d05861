#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "eegscribe/cebra/cebra.hpp"
#include "eegscribe/dsp/session.hpp"
#include "eegscribe/eval/metrics.hpp"
#include "eegscribe/eval/projection.hpp"
#include "eegscribe/models/models.hpp"

namespace eegscribe::eval {

/// One row of the results table.
struct ModelSpec {
  std::string name;
  models::Architecture architecture = models::Architecture::cnn;
  /// CEBRA embedding width fed to a fusion model; 0 for EEG-only models.
  std::size_t d_embed = 0;

  void validate() const;
};

/// Fits on `train` and returns predicted classes for `test`.
using FoldRunner =
    std::function<std::vector<int>(const dsp::EpochSet& train, const dsp::EpochSet& test, int fold)>;

/// Throws LeakageError when a test trial id also appears in training.
void assert_disjoint(const dsp::EpochSet& train, const dsp::EpochSet& test, int fold);

/// Train on folds ≠ k, test on fold k, for every k.
FoldReport run_cv(const std::vector<dsp::EpochSet>& folds, const ModelSpec& spec, const FoldRunner& runner);

/// Deterministic 64-bit seed for (seed, fold, stream).
std::uint64_t fold_seed(std::uint64_t seed, int fold, std::uint64_t stream);

/// Per-fold CEBRA training on the training trials only (when spec.d_embed > 0),
/// then classifier training and prediction.
FoldRunner classifier_runner(const ModelSpec& spec, const cebra::CebraConfig& cebra_config,
                             const models::TrainConfig& train_config, std::uint64_t seed);

/// Means over `bins` equal time bins of trial-major data [n×d×T] → [n×(d·bins)].
nx::Tensor binned_features(const nx::Tensor& trial_major, std::size_t bins);

struct ProbeConfig {
  std::size_t iters = 500;
  double lr = 0.05;
  double l2 = 1e-3;
};

/// Multinomial logistic regression on features standardized with training
/// statistics; returns predicted classes for test_x.
std::vector<int> linear_probe(const nx::Tensor& train_x, const std::vector<int>& train_labels,
                              const nx::Tensor& test_x, const ProbeConfig& config = {});

struct NamedProjection {
  std::string name;
  ProjectionResult result;
  std::vector<int> labels;
};

/// Writes results_per_fold.csv, results_aggregate.csv and one
/// projection_{name}.csv per projection. Reals use 17 significant digits.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir,
                                               const std::vector<FoldReport>& reports,
                                               const std::vector<NamedProjection>& projections = {});

}  // namespace eegscribe::eval
