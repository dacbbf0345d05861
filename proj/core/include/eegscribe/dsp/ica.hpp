#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::dsp {

struct IcaOptions {
  std::size_t n_components = 0;
  std::uint64_t seed = 0;
  std::size_t max_iter = 500;
  /// Convergence when 1 − |⟨w_new, w_old⟩| falls below this.
  double tol = 1e-6;
  /// Fit on every `fit_stride`-th sample; the unmixing is applied to all samples.
  std::size_t fit_stride = 1;
};

struct IcaResult {
  /// [n×C], maps mean-removed channels to sources.
  nx::Tensor unmixing;
  /// [n×S]
  nx::Tensor sources;
  std::vector<double> channel_means;
  std::vector<bool> converged;
  std::vector<std::size_t> iterations;

  std::size_t components() const { return unmixing.dim(0); }
  bool all_converged() const;
};

/// Deflationary FastICA with the tanh (log-cosh) contrast on whitened data.
/// Throws DecompositionError when the covariance rank is below n_components.
/// Components that exhaust max_iter are flagged in `converged`; their last
/// iterate is kept.
IcaResult fast_ica(const nx::Tensor& eeg, const IcaOptions& options);

/// Moore–Penrose pseudo-inverse of a dense matrix.
nx::Tensor pseudo_inverse(const nx::Tensor& m);

struct EogRejection {
  nx::Tensor cleaned;
  std::vector<std::size_t> rejected;
  std::vector<double> correlations;
};

/// Zeroes every component whose |Pearson r| with the frontal reference is at
/// least `corr_threshold`, then maps the remaining sources back to channel space
/// through the pseudo-inverse of the unmixing (channel means restored).
/// Rejecting every component is a ContractError.
EogRejection reject_eog(const IcaResult& ica, std::span<const double> frontal_reference, double corr_threshold);

double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace eegscribe::dsp
