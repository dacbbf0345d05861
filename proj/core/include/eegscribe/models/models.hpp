#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eegscribe/dsp/session.hpp"
#include "eegscribe/numerics/layers.hpp"
#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::models {

inline constexpr std::size_t kLogits = dsp::kNumClasses;

enum class Architecture { fusion, cnn, eegnet };

std::string architecture_name(Architecture a);
Architecture parse_architecture(const std::string& name);

/// Spatial 1×1 conv (C→16), two strided temporal convs, global average pool.
struct EegBranch {
  nx::Conv1dLayer spatial, conv1, conv2;

  EegBranch() = default;
  EegBranch(std::size_t channels, nx::Rng& rng);
  nx::Var operator()(nx::Var x);
  void collect(const std::string& prefix, nx::NamedParams& out);
  static constexpr std::size_t kFeatures = 32;
};

/// Two strided temporal convs over the embedding trajectory, global average pool.
struct EmbedBranch {
  nx::Conv1dLayer conv1, conv2;

  EmbedBranch() = default;
  EmbedBranch(std::size_t d_embed, nx::Rng& rng);
  nx::Var operator()(nx::Var x);
  void collect(const std::string& prefix, nx::NamedParams& out);
  static constexpr std::size_t kFeatures = 16;
};

/// dense → ReLU → dense to 9 logits.
struct Head {
  nx::DenseLayer fc1, fc2;

  Head() = default;
  Head(std::size_t in, nx::Rng& rng);
  nx::Var operator()(nx::Var x);
  void collect(const std::string& prefix, nx::NamedParams& out);
  static constexpr std::size_t kHidden = 64;
};

class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual Architecture architecture() const = 0;
  /// Width of the embedding input; 0 for EEG-only models.
  virtual std::size_t d_embed() const { return 0; }
  bool uses_embeddings() const { return d_embed() > 0; }

  /// eeg [B×C×T], embed [B×d×T] when uses_embeddings() → logits [B×9].
  virtual nx::Var forward(nx::Var eeg, std::optional<nx::Var> embed) = 0;
  virtual nx::NamedParams parameters() = 0;
  virtual std::unique_ptr<Classifier> clone() const = 0;

  std::size_t channels() const { return channels_; }
  std::uint64_t seed() const { return seed_; }

 protected:
  Classifier(std::size_t channels, std::uint64_t seed) : channels_(channels), seed_(seed) {}
  void check_eeg(nx::Var eeg) const;

 private:
  std::size_t channels_;
  std::uint64_t seed_;
};

class FusionModel final : public Classifier {
 public:
  FusionModel(std::size_t d_embed, std::uint64_t seed, std::size_t channels = dsp::kChannels);

  Architecture architecture() const override { return Architecture::fusion; }
  std::size_t d_embed() const override { return d_embed_; }
  nx::Var forward(nx::Var eeg, std::optional<nx::Var> embed) override;
  nx::NamedParams parameters() override;
  std::unique_ptr<Classifier> clone() const override { return std::make_unique<FusionModel>(*this); }

  EegBranch eeg;
  EmbedBranch embed;
  Head head;

 private:
  std::size_t d_embed_;
};

class BaselineCnn final : public Classifier {
 public:
  explicit BaselineCnn(std::uint64_t seed, std::size_t channels = dsp::kChannels);

  Architecture architecture() const override { return Architecture::cnn; }
  nx::Var forward(nx::Var eeg, std::optional<nx::Var> embed) override;
  nx::NamedParams parameters() override;
  std::unique_ptr<Classifier> clone() const override { return std::make_unique<BaselineCnn>(*this); }

  EegBranch eeg;
  Head head;
};

/// Compact depthwise/separable network: shared temporal filters, per-filter
/// spatial filters, separable temporal conv, average pooling, dense.
class EegNet final : public Classifier {
 public:
  static constexpr std::size_t kTemporalFilters = 8, kTemporalWidth = 64, kDepth = 2, kSeparableFilters = 16,
                               kSeparableWidth = 16, kPool1 = 4, kPool2 = 8;

  explicit EegNet(std::uint64_t seed, std::size_t channels = dsp::kChannels, std::size_t samples = dsp::kEpochSamples);

  Architecture architecture() const override { return Architecture::eegnet; }
  nx::Var forward(nx::Var eeg, std::optional<nx::Var> embed) override;
  nx::NamedParams parameters() override;
  std::unique_ptr<Classifier> clone() const override { return std::make_unique<EegNet>(*this); }

  /// Output of the depthwise spatial stage, [B×(8·2)×T].
  nx::Var depthwise_features(nx::Var eeg);

 private:
  std::size_t samples_;
  nx::Conv1dLayer temporal_, depthwise_, separable_depth_, separable_point_;
  nx::DenseLayer dense_;
};

FusionModel build_fusion_model(std::size_t d_embed, std::uint64_t seed);
BaselineCnn build_baseline_cnn(std::uint64_t seed);
EegNet build_eegnet_baseline(std::uint64_t seed);
std::unique_ptr<Classifier> make_classifier(Architecture a, std::size_t d_embed, std::uint64_t seed);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double val_fraction = 0.1;
  /// One step per epoch over the whole (unshuffled) training set.
  bool full_batch = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Trial-major classifier inputs. `embeddings` is [n×d×T] for fusion models.
struct ClassifierData {
  nx::Tensor epochs;
  std::optional<nx::Tensor> embeddings;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  ClassifierData select(const std::vector<std::size_t>& rows) const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  /// Empty when no validation split was held out.
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

/// Mini-batch Adam on cross-entropy. Holds out val_fraction of the trials
/// for early stopping and restores the parameters of the best validation
/// epoch. A non-finite loss restores the last finite epoch's parameters and
/// throws TrainingError.
TrainHistory train_classifier(Classifier& model, const ClassifierData& data, const TrainConfig& config);

struct Prediction {
  std::vector<int> classes;
  /// [n×9]
  nx::Tensor probabilities;
};

/// Softmax and argmax; ties go to the lower class index.
Prediction predict_from_logits(const nx::Tensor& logits);
Prediction predict(Classifier& model, const ClassifierData& data);

/// `{stem}.json` (architecture, widths, seed) plus one `{stem}.{param}.stk` per tensor.
void save_classifier(const std::filesystem::path& dir, const std::string& stem, Classifier& model);
std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& dir, const std::string& stem);

}  // namespace eegscribe::models
