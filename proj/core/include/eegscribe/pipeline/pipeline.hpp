#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "eegscribe/cebra/cebra.hpp"
#include "eegscribe/dsp/preprocess.hpp"
#include "eegscribe/eval/cv.hpp"
#include "eegscribe/models/models.hpp"
#include "eegscribe/synth/synthgen.hpp"

namespace eegscribe::pipeline {

/// Failure inside a named stage. what() reads "[stage] message"; the
/// original exception is kept in cause().
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string stage, const std::string& message, std::exception_ptr cause = nullptr);
  const std::string& stage() const noexcept { return stage_; }
  std::exception_ptr cause() const noexcept { return cause_; }

 private:
  std::string stage_;
  std::exception_ptr cause_;
};

struct DataSource {
  bool synthetic = true;
  synth::SynthConfig synth;
  /// When false the generator seed is derived from the master seed.
  bool explicit_synth_seed = false;
  std::filesystem::path eeg, events, kinematics;
};

struct ProjectionConfig {
  bool enabled = true;
  /// Every time_stride-th time point of each trial enters the PCA plot.
  std::size_t time_stride = 25;
  double perplexity = 30.0;
  std::size_t tsne_iters = 1000;
};

struct ExperimentConfig {
  DataSource data;
  dsp::PreprocessConfig preprocess;
  std::vector<eval::ModelSpec> models;
  cebra::CebraConfig cebra;
  models::TrainConfig train;
  ProjectionConfig projection;
  std::filesystem::path out_dir = "eegscribe_out";
  std::uint64_t seed = 42;
  /// Permits fusion widths outside {2, 4, 8, 12, 16}.
  bool allow_any_d_embed = false;

  /// Throws ParameterError on an invalid model list or sub-config, IoError on
  /// a missing input file.
  void validate() const;
  /// Distinct fusion widths in first-seen order.
  std::vector<std::size_t> embed_dims() const;
};

/// Seven rows: cnn, eegnet and fusion at every supported width.
ExperimentConfig default_config();

/// INI file with sections [experiment], [data], [preprocess], [cebra],
/// [train], [models] and [projection]. Unknown keys are rejected.
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// First eight bytes (little endian) of SHA-256 over "label:seed".
std::uint64_t stage_seed(std::uint64_t master, std::string_view label);
std::string sha256_hex(const std::filesystem::path& file);

/// Output layout under out_dir.
struct Layout {
  std::filesystem::path root, session, folds, embed, results;
  explicit Layout(const std::filesystem::path& out);
};

struct StageOutput {
  std::vector<std::filesystem::path> files;
  std::filesystem::path manifest;
};

/// Synthetic session and ground truth under session/.
StageOutput cmd_generate(const ExperimentConfig& config);
/// Preprocessing chain and stratified folds under folds/.
StageOutput cmd_preprocess(const ExperimentConfig& config);
/// One encoder per fusion width and fold round, fitted on the training folds only.
StageOutput cmd_train_embed(const ExperimentConfig& config);
/// Cross-validated results and projections under results/. With `all`, the
/// upstream stages run first.
StageOutput cmd_run(const ExperimentConfig& config, bool all = false);

std::string encoder_stem(std::size_t d_embed, int fold);

}  // namespace eegscribe::pipeline
