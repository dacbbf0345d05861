#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string_view>
#include <vector>

#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::dsp {

inline constexpr double kSampleRate = 250.0;
inline constexpr std::size_t kChannels = 32;
inline constexpr std::size_t kEpochSamples = 250;
inline constexpr std::size_t kKinematicRows = 4;
inline constexpr int kNumClasses = 9;

/// The nine written glyphs of "HELLO, WORLD!", indexed by class.
inline constexpr std::array<std::string_view, kNumClasses> kClassNames{"H", "E", "L", "O", "comma",
                                                                       "W", "R", "D", "exclamation"};

/// Class sequence of one written repetition of the phrase (space excluded).
inline constexpr std::array<int, 12> kPhraseClasses{0, 1, 2, 2, 3, 4, 5, 3, 6, 2, 7, 8};

enum class PenEventKind { pen_down, pen_up };

struct PenEvent {
  std::size_t sample_index = 0;
  PenEventKind kind = PenEventKind::pen_down;
  int char_class = 0;
};

struct KinematicSample {
  std::size_t sample_index = 0;
  double x = 0.0;
  double y = 0.0;
  double pressure = 0.0;
  double velocity = 0.0;
};

/// One continuous recording: eeg is [channels × samples] in microvolts.
struct RawSession {
  nx::Tensor eeg;
  std::vector<PenEvent> events;
  std::vector<KinematicSample> kinematics;
  double sample_rate = kSampleRate;

  std::size_t channels() const { return eeg.dim(0); }
  std::size_t samples() const { return eeg.dim(1); }

  /// Throws ContractError unless event indices strictly increase, pen_down and
  /// pen_up alternate starting with pen_down, classes are in range and the
  /// sampling rate is 250 Hz.
  void validate() const;
};

/// Character-level trials. epochs [n×C×250], trajectories [n×4×250].
struct EpochSet {
  nx::Tensor epochs;
  nx::Tensor trajectories;
  std::vector<int> labels;
  /// Position of each trial in the session's pen_down order; used to detect
  /// train/test leakage across folds.
  std::vector<std::size_t> trial_ids;

  std::size_t size() const { return labels.size(); }
  /// Subset in the given order.
  EpochSet select(const std::vector<std::size_t>& rows) const;
  /// Concatenation of several sets in order.
  static EpochSet concatenate(const std::vector<const EpochSet*>& parts);
};

struct FoldAssignment {
  static constexpr int kFolds = 5;
  std::vector<int> fold_of_trial;

  std::vector<std::size_t> members(int fold) const;
};

// Text formats: events `sample_index,kind,char_class`; kinematics
// `sample_index,x,y,pressure,velocity`.
void write_events_csv(const std::filesystem::path& path, const std::vector<PenEvent>& events);
std::vector<PenEvent> read_events_csv(const std::filesystem::path& path);
void write_kinematics_csv(const std::filesystem::path& path, const std::vector<KinematicSample>& kin);
std::vector<KinematicSample> read_kinematics_csv(const std::filesystem::path& path);

/// Reads eeg.stk + events + kinematics into a validated session.
RawSession load_session(const std::filesystem::path& eeg, const std::filesystem::path& events,
                        const std::filesystem::path& kinematics);

}  // namespace eegscribe::dsp
