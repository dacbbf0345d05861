#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "eegscribe/dsp/ica.hpp"
#include "eegscribe/dsp/session.hpp"
#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::dsp {

/// out[c,t] = eeg[c,t] − mean over channels of eeg[·,t]. Needs ≥ 2 channels.
nx::Tensor average_reference(const nx::Tensor& eeg);

/// One epoch per pen_down at [t0, t0+250); trajectories come from the kinematic
/// samples between each pen_down and its pen_up. Trials whose window overruns
/// the recording are dropped with a warning.
EpochSet extract_epochs(const RawSession& session);

/// Per epoch and channel: subtract the mean, divide by the population std.
/// Channels with std < 1e-12 become zeros.
nx::Tensor znorm_channels(const nx::Tensor& epochs);

/// Linear interpolation of (x, y, pressure, velocity) onto 250 uniform points
/// spanning the segment, x/y shifted so the first point is the origin, then
/// each row min-max scaled to [0, 1] (constant rows become zeros).
nx::Tensor normalize_trajectory(std::span<const KinematicSample> segment);

/// Stratified 5-fold split, deterministic in `seed`. Per-class counts differ by
/// at most one between folds.
FoldAssignment make_folds(std::span<const int> labels, std::uint64_t seed);

enum class Stage { average_reference, bandpass, ica_rejection, second_filter };

struct PreprocessConfig {
  std::array<double, 2> bandpass{1.0, 45.0};
  std::array<double, 2> second_band{0.5, 8.0};
  int filter_order = 4;

  /// 0 selects channels − 1, compensating the rank lost to average referencing.
  std::size_t ica_components = 0;
  double eog_threshold = 0.7;
  std::size_t frontal_channel = 0;
  std::size_t ica_max_iter = 500;
  double ica_tol = 1e-6;
  std::size_t ica_fit_stride = 2;
  std::uint64_t ica_seed = 0;
  std::uint64_t fold_seed = 0;

  /// Continuous-signal stage order; epoching and normalisation always follow.
  std::vector<Stage> order{Stage::average_reference, Stage::bandpass, Stage::ica_rejection, Stage::second_filter};
  /// Required to run any order other than the canonical one.
  bool allow_reorder = false;

  /// Throws ContractError on a non-canonical order without the override.
  void validate() const;
};

struct PreprocessResult {
  EpochSet data;
  FoldAssignment folds;
  std::vector<std::size_t> rejected_components;
  std::vector<double> component_correlations;
  std::size_t unconverged_components = 0;
  std::size_t dropped_trials = 0;
};

/// Runs the continuous stages in configured order, then epoching, z-scoring
/// and fold assignment.
PreprocessResult preprocess_session(const RawSession& session, const PreprocessConfig& config);

/// Writes fold{k}_epochs/_traj/_labels/_trials.stk for k in [0, 5).
void write_folds(const std::filesystem::path& dir, const EpochSet& data, const FoldAssignment& folds);
/// Reads the five folds written by write_folds.
std::vector<EpochSet> read_folds(const std::filesystem::path& dir);

}  // namespace eegscribe::dsp
