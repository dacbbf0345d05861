#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "eegscribe/dsp/session.hpp"
#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::dsp {

/// Second-order section, a0 normalised to 1, direct form II transposed.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

struct SosFilter {
  std::vector<Biquad> sections;
  /// Digital poles and overall gain of the design, kept for inspection.
  std::vector<std::complex<double>> poles;
  double gain = 1.0;
  double sample_rate = kSampleRate;

  /// Samples until the slowest pole decays to 1e-3 of its initial amplitude.
  std::size_t transient_samples() const;
  /// |H(e^{jω})| at frequency `hz`.
  double magnitude(double hz) const;
};

/// Butterworth band-pass of the given prototype order (bilinear transform with
/// pre-warped band edges). Yields `order` sections.
SosFilter design_butter_bandpass(double low_hz, double high_hz, int order, double sample_rate = kSampleRate);

/// Causal filtering with explicit per-section initial states (two per section).
std::vector<double> sos_filter(const SosFilter& filter, std::span<const double> x,
                               std::vector<std::array<double, 2>> state);

/// Per-section states giving a steady-state response to a constant unit input.
std::vector<std::array<double, 2>> sos_steady_state(const SosFilter& filter);

/// Zero-phase forward-backward filtering. The signal is extended at each end by
/// odd reflection over one transient length and both passes start from the
/// steady state of the edge sample. Requires at least 3 transient lengths.
std::vector<double> filtfilt(const SosFilter& filter, std::span<const double> x);

/// Zero-phase band-pass of every row of eeg [C×S].
nx::Tensor butter_bandpass(const nx::Tensor& eeg, double low_hz, double high_hz, int order = 4,
                           double sample_rate = kSampleRate);

}  // namespace eegscribe::dsp
