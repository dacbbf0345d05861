#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <vector>

#include "eegscribe/dsp/session.hpp"
#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::synth {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct SynthConfig {
  std::size_t n_repetitions = 25;
  /// Class signal power over background power in dB; +inf disables noise.
  double snr_db = 5.0;
  std::array<double, 2> class_band{0.5, 8.0};
  std::uint64_t seed = 42;

  std::size_t latent_sources = 6;
  /// Amplitude of the class-specific part relative to the shared response.
  double class_contrast = 0.25;
  /// Per-trial onset jitter (± samples) and relative amplitude jitter (std).
  std::size_t max_latency_jitter = 10;
  double amplitude_jitter = 0.2;
  /// Std of the Gaussian positional noise added to pen trajectories.
  double trajectory_jitter = 0.01;
  /// Blink peak amplitude in units of the class-signal RMS.
  double blink_amplitude = 4.0;
  std::size_t frontal_channel = 0;

  /// Throws ParameterError on zero repetitions, NaN snr or a band outside (0, 125).
  void validate() const;
};

struct CharacterTemplate {
  int char_class = 0;
  std::vector<Point> stroke;
  /// Per-sample profiles over the 1 s glyph, all strictly positive.
  std::vector<double> speed;
  std::vector<double> pressure;
};

/// The nine glyph templates, indexed by class.
const std::array<CharacterTemplate, dsp::kNumClasses>& character_templates();

/// 250 kinematic samples (sample_index 0..249) traversing the template stroke
/// at its speed profile, with i.i.d. Gaussian jitter on x and y. Velocity is
/// the central-difference speed of the jittered path in units per second.
std::vector<dsp::KinematicSample> gen_character_trajectory(const CharacterTemplate& tmpl, double jitter,
                                                           std::mt19937_64& rng);

/// Known structure of a generated session, for oracle tests.
struct GroundTruth {
  /// [C × (latent_sources + 1)]; the last column carries the blink.
  nx::Tensor mixing;
  /// [(latent_sources + 1) × S]; noise-free latent activity, blink last.
  nx::Tensor sources;
  /// [9 × latent_sources × 250] class waveforms before trial jitter.
  nx::Tensor class_waveforms;
  double noise_std = 0.0;
};

struct SynthSession {
  dsp::RawSession session;
  GroundTruth truth;
};

SynthSession gen_session(const SynthConfig& config);

/// Writes eeg.stk, events.csv, kinematics.csv, truth_mixing.stk,
/// truth_sources.stk and truth_waveforms.stk under `dir`.
std::vector<std::filesystem::path> write_session(const std::filesystem::path& dir, const SynthSession& s);

}  // namespace eegscribe::synth
