#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eegscribe/dsp/session.hpp"
#include "eegscribe/numerics/layers.hpp"
#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::cebra {

inline constexpr std::array<std::size_t, 5> kEmbedDims{2, 4, 8, 12, 16};

struct CebraConfig {
  std::size_t d_embed = 16;
  std::size_t batch_size = 1024;
  double lr = 2e-4;
  /// Positive-pair time window, also the encoder's receptive field.
  std::size_t offset_frames = 10;
  double temperature = 1.0;
  std::size_t steps = 5000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-time-point labels of an epoched dataset, flattened trial-major.
struct AuxiliaryVariables {
  /// [N×4]: x, y, pressure, velocity.
  nx::Tensor continuous;
  std::vector<int> discrete;
  std::size_t trial_length = dsp::kEpochSamples;

  std::size_t size() const { return discrete.size(); }
  std::size_t trials() const { return size() / trial_length; }
  void validate() const;

  static AuxiliaryVariables from_epochs(const dsp::EpochSet& data);
};

/// Temporal conv stack over a causal window, dense head, unit-sphere output.
class Encoder {
 public:
  Encoder() = default;
  Encoder(std::size_t channels, std::size_t d_embed, std::size_t window, std::uint64_t seed);

  /// windows [B×C×w] → embeddings [B×d], rows unit-norm.
  nx::Var forward(nx::Var windows);
  /// Forward pass outside any caller-held graph.
  nx::Tensor embed(const nx::Tensor& windows);

  nx::NamedParams parameters();
  std::size_t channels() const { return channels_; }
  std::size_t d_embed() const { return d_embed_; }
  std::size_t window() const { return window_; }

 private:
  std::size_t channels_ = 0, d_embed_ = 0, window_ = 0;
  nx::Conv1dLayer conv1_, conv2_, conv3_;
  nx::DenseLayer head_;
};

Encoder build_encoder(const CebraConfig& config, std::size_t channels = dsp::kChannels);

struct ContrastiveBatch {
  std::vector<std::size_t> anchors;
  std::vector<std::size_t> positives;
  /// Shared by every anchor in the batch.
  std::vector<std::size_t> negatives;
};

/// Anchors and negatives uniform over all points. A positive shares the
/// anchor's label and lies within offset_frames of the anchor's time-in-trial;
/// it may come from any trial of that label but is never the anchor itself.
ContrastiveBatch sample_contrastive_batch(const AuxiliaryVariables& aux, const CebraConfig& config,
                                          nx::Rng& rng);

/// Mean over anchors of −log softmax([a·p, a·n_1, …, a·n_M] / τ)[0].
/// anchors, positives [B×d]; negatives [M×d].
nx::Var infonce_loss(nx::Var anchors, nx::Var positives, nx::Var negatives, double temperature);

/// Causal windows ending at the given flattened time points of epochs
/// [n×C×T]; times before the trial start repeat the first sample.
nx::Tensor gather_windows(const nx::Tensor& epochs, const std::vector<std::size_t>& points, std::size_t window);

struct TrainedEncoder {
  Encoder encoder;
  std::vector<double> loss_curve;
};

TrainedEncoder train_cebra(const nx::Tensor& epochs, const AuxiliaryVariables& aux, const CebraConfig& config);

struct Embedding {
  /// [(n·T)×d]
  nx::Tensor values;
  /// [n×d×T], the classifier's view.
  nx::Tensor trial_major;
};

Embedding encode_dataset(Encoder& encoder, const nx::Tensor& epochs);

/// `{stem}.json` (config and layer shapes) plus one `{stem}.{param}.stk` per tensor.
void save_encoder(const std::filesystem::path& dir, const std::string& stem, Encoder& encoder,
                  const CebraConfig& config, const std::vector<double>& loss_curve = {});
Encoder load_encoder(const std::filesystem::path& dir, const std::string& stem);

}  // namespace eegscribe::cebra
