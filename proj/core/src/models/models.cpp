#include "eegscribe/models/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "eegscribe/errors.hpp"
#include "eegscribe/numerics/adam.hpp"
#include "eegscribe/numerics/ops.hpp"
#include "eegscribe/numerics/stk_io.hpp"

namespace eegscribe::models {

using nx::Tensor;
using nx::Var;

namespace {

constexpr nx::Conv1dOptions kStrided{2, 5, 5, 1};
constexpr std::size_t kInferenceChunk = 256;

// Rows of a tensor along its first axis.
Tensor take(const Tensor& t, const std::vector<std::size_t>& rows) {
  nx::Shape shape = t.shape();
  const std::size_t stride = t.numel() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  auto dst = out.data().begin();
  for (std::size_t r : rows) {
    if (r >= t.dim(0)) throw DimensionError("row index out of range");
    const auto src = t.data().begin() + static_cast<std::ptrdiff_t>(r * stride);
    dst = std::copy(src, src + static_cast<std::ptrdiff_t>(stride), dst);
  }
  return out;
}

// Labels are checked only when training; prediction ignores them.
void check_data(const Classifier& model, const ClassifierData& data, bool labelled) {
  if (data.epochs.rank() != 3 || data.epochs.dim(1) != model.channels()) {
    throw DimensionError("classifier data: epochs must be [n×" + std::to_string(model.channels()) + "×T]");
  }
  const std::size_t n = data.epochs.dim(0);
  if (labelled && data.size() != n) throw DimensionError("classifier data: one label per epoch required");
  if (model.uses_embeddings() != data.embeddings.has_value()) {
    throw ContractError(model.uses_embeddings() ? "fusion model requires embeddings"
                                                : "embeddings given to an EEG-only model");
  }
  if (data.embeddings) {
    const Tensor& e = *data.embeddings;
    if (e.rank() != 3 || e.dim(0) != n || e.dim(1) != model.d_embed() || e.dim(2) != data.epochs.dim(2)) {
      throw DimensionError("classifier data: embeddings must be [n×" + std::to_string(model.d_embed()) + "×T]");
    }
  }
  for (int l : data.labels) {
    if (l < 0 || l >= static_cast<int>(kLogits)) throw LabelError("class label outside [0, 9)");
  }
}

Var forward_rows(Classifier& model, nx::Graph& g, const ClassifierData& data, const std::vector<std::size_t>& rows) {
  std::optional<Var> embed;
  if (data.embeddings) embed = g.input(take(*data.embeddings, rows));
  return model.forward(g.input(take(data.epochs, rows)), embed);
}

std::vector<int> labels_of(const ClassifierData& data, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(data.labels[r]);
  return out;
}

double mean_loss(Classifier& model, const ClassifierData& data, const std::vector<std::size_t>& rows) {
  double total = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += kInferenceChunk) {
    const std::vector<std::size_t> chunk(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                         rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), start + kInferenceChunk)));
    nx::Graph g;
    const auto labels = labels_of(data, chunk);
    total += nx::softmax_cross_entropy(forward_rows(model, g, data, chunk), labels).value()[0] *
             static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(rows.size());
}

}  // namespace

std::string architecture_name(Architecture a) {
  switch (a) {
    case Architecture::fusion: return "fusion";
    case Architecture::cnn: return "cnn";
    case Architecture::eegnet: return "eegnet";
  }
  return "unknown";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "fusion") return Architecture::fusion;
  if (name == "cnn") return Architecture::cnn;
  if (name == "eegnet") return Architecture::eegnet;
  throw ParameterError("unknown architecture '" + name + "'");
}

EegBranch::EegBranch(std::size_t channels, nx::Rng& rng)
    : spatial(channels, 16, 1, {}, rng), conv1(16, 32, 11, kStrided, rng), conv2(32, kFeatures, 11, kStrided, rng) {}

Var EegBranch::operator()(Var x) {
  Var h = spatial(x);
  h = nx::relu(conv1(h));
  h = nx::relu(conv2(h));
  return nx::global_avg_pool(h);
}

void EegBranch::collect(const std::string& prefix, nx::NamedParams& out) {
  spatial.collect(prefix + ".spatial", out);
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
}

EmbedBranch::EmbedBranch(std::size_t d_embed, nx::Rng& rng)
    : conv1(d_embed, 16, 11, kStrided, rng), conv2(16, kFeatures, 11, kStrided, rng) {}

Var EmbedBranch::operator()(Var x) {
  Var h = nx::relu(conv1(x));
  h = nx::relu(conv2(h));
  return nx::global_avg_pool(h);
}

void EmbedBranch::collect(const std::string& prefix, nx::NamedParams& out) {
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
}

Head::Head(std::size_t in, nx::Rng& rng) : fc1(in, kHidden, rng), fc2(kHidden, kLogits, rng) {}

Var Head::operator()(Var x) { return fc2(nx::relu(fc1(x))); }

void Head::collect(const std::string& prefix, nx::NamedParams& out) {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

void Classifier::check_eeg(Var eeg) const {
  if (eeg.value().rank() != 3 || eeg.dim(1) != channels_) {
    throw DimensionError("classifier expects [B×" + std::to_string(channels_) + "×T], got " +
                         nx::shape_string(eeg.shape()));
  }
}

FusionModel::FusionModel(std::size_t d_embed, std::uint64_t seed, std::size_t channels)
    : Classifier(channels, seed), d_embed_(d_embed) {
  if (d_embed < 1) throw ParameterError("fusion model needs d_embed ≥ 1");
  nx::Rng rng(seed);
  eeg = EegBranch(channels, rng);
  embed = EmbedBranch(d_embed, rng);
  head = Head(EegBranch::kFeatures + EmbedBranch::kFeatures, rng);
}

Var FusionModel::forward(Var x, std::optional<Var> e) {
  check_eeg(x);
  if (!e) throw ContractError("fusion model requires embeddings");
  if (e->value().rank() != 3 || e->dim(0) != x.dim(0) || e->dim(1) != d_embed_) {
    throw DimensionError("fusion model expects embeddings [B×" + std::to_string(d_embed_) + "×T], got " +
                         nx::shape_string(e->shape()));
  }
  const std::array<Var, 2> features{eeg(x), embed(*e)};
  return head(nx::concat(features, 1));
}

nx::NamedParams FusionModel::parameters() {
  nx::NamedParams p;
  eeg.collect("eeg", p);
  embed.collect("embed", p);
  head.collect("head", p);
  return p;
}

BaselineCnn::BaselineCnn(std::uint64_t seed, std::size_t channels) : Classifier(channels, seed) {
  nx::Rng rng(seed);
  eeg = EegBranch(channels, rng);
  head = Head(EegBranch::kFeatures, rng);
}

Var BaselineCnn::forward(Var x, std::optional<Var> e) {
  check_eeg(x);
  if (e) throw ContractError("embeddings given to an EEG-only model");
  return head(eeg(x));
}

nx::NamedParams BaselineCnn::parameters() {
  nx::NamedParams p;
  eeg.collect("eeg", p);
  head.collect("head", p);
  return p;
}

EegNet::EegNet(std::uint64_t seed, std::size_t channels, std::size_t samples)
    : Classifier(channels, seed), samples_(samples) {
  if (samples < kPool1 * kPool2) throw ParameterError("eegnet: epochs too short for the pooling stages");
  nx::Rng rng(seed);
  temporal_ = nx::Conv1dLayer(1, kTemporalFilters, kTemporalWidth,
                              {1, (kTemporalWidth - 1) / 2, kTemporalWidth / 2, 1}, rng);
  depthwise_ = nx::Conv1dLayer(kTemporalFilters * channels, kTemporalFilters * kDepth, 1, {1, 0, 0, kTemporalFilters},
                               rng);
  separable_depth_ = nx::Conv1dLayer(kSeparableFilters, kSeparableFilters, kSeparableWidth,
                                     {1, (kSeparableWidth - 1) / 2, kSeparableWidth / 2, kSeparableFilters}, rng);
  separable_point_ = nx::Conv1dLayer(kSeparableFilters, kSeparableFilters, 1, {}, rng);
  dense_ = nx::DenseLayer(kSeparableFilters * (samples / kPool1 / kPool2), kLogits, rng);
}

Var EegNet::depthwise_features(Var x) {
  check_eeg(x);
  const std::size_t b = x.dim(0), c = channels(), t = x.dim(2);
  if (t != samples_) throw DimensionError("eegnet: built for " + std::to_string(samples_) + " samples");
  // Every channel passes through the same temporal filters.
  Var h = temporal_(nx::reshape(x, {b * c, 1, t}));
  h = nx::permute(nx::reshape(h, {b, c, kTemporalFilters, t}), {0, 2, 1, 3});
  return depthwise_(nx::reshape(h, {b, kTemporalFilters * c, t}));
}

Var EegNet::forward(Var x, std::optional<Var> e) {
  if (e) throw ContractError("embeddings given to an EEG-only model");
  Var h = nx::avg_pool1d(nx::relu(depthwise_features(x)), kPool1, kPool1);
  h = nx::relu(separable_point_(separable_depth_(h)));
  h = nx::avg_pool1d(h, kPool2, kPool2);
  return dense_(nx::reshape(h, {x.dim(0), h.dim(1) * h.dim(2)}));
}

nx::NamedParams EegNet::parameters() {
  nx::NamedParams p;
  temporal_.collect("temporal", p);
  depthwise_.collect("depthwise", p);
  separable_depth_.collect("separable_depth", p);
  separable_point_.collect("separable_point", p);
  dense_.collect("dense", p);
  return p;
}

FusionModel build_fusion_model(std::size_t d_embed, std::uint64_t seed) { return FusionModel(d_embed, seed); }
BaselineCnn build_baseline_cnn(std::uint64_t seed) { return BaselineCnn(seed); }
EegNet build_eegnet_baseline(std::uint64_t seed) { return EegNet(seed); }

std::unique_ptr<Classifier> make_classifier(Architecture a, std::size_t d_embed, std::uint64_t seed) {
  switch (a) {
    case Architecture::fusion: return std::make_unique<FusionModel>(d_embed, seed);
    case Architecture::cnn: return std::make_unique<BaselineCnn>(seed);
    case Architecture::eegnet: return std::make_unique<EegNet>(seed);
  }
  throw ParameterError("unknown architecture");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ParameterError("train: learning rate must be positive");
  if (batch_size < 1) throw ParameterError("train: batch_size must be at least 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ParameterError("train: val_fraction must lie in [0, 1)");
}

ClassifierData ClassifierData::select(const std::vector<std::size_t>& rows) const {
  ClassifierData out;
  out.epochs = take(epochs, rows);
  if (embeddings) out.embeddings = take(*embeddings, rows);
  if (!labels.empty()) out.labels = labels_of(*this, rows);
  return out;
}

TrainHistory train_classifier(Classifier& model, const ClassifierData& data, const TrainConfig& config) {
  config.validate();
  check_data(model, data, true);
  TrainHistory history;
  if (config.max_epochs == 0) return history;
  if (data.size() == 0) throw ContractError("train: no training trials");

  nx::Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t n_val = 0;
  if (config.val_fraction > 0.0 && data.size() >= 10) {
    n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(config.val_fraction * static_cast<double>(data.size()))));
    std::shuffle(order.begin(), order.end(), rng);
  }
  const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(train.begin(), train.end());

  auto params = model.parameters();
  auto adam = nx::make_adam_state(params, config.lr);
  std::vector<Tensor> last_finite = nx::snapshot(params), best = last_finite;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  const std::size_t batch = config.full_batch ? train.size() : config.batch_size;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    if (!config.full_batch) std::shuffle(train.begin(), train.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < train.size(); start += batch) {
      const std::vector<std::size_t> rows(train.begin() + static_cast<std::ptrdiff_t>(start),
                                          train.begin() + static_cast<std::ptrdiff_t>(std::min(train.size(), start + batch)));
      nx::Graph g;
      const auto labels = labels_of(data, rows);
      const Var loss = nx::softmax_cross_entropy(forward_rows(model, g, data, rows), labels);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        nx::restore(params, last_finite);
        throw TrainingError("train: non-finite loss in epoch " + std::to_string(epoch), static_cast<long>(epoch) - 1);
      }
      total += value * static_cast<double>(rows.size());
      nx::zero_grads(params);
      g.backward(loss);
      nx::adam_step(params, adam);
    }
    history.train_loss.push_back(total / static_cast<double>(train.size()));
    last_finite = nx::snapshot(params);
    if (n_val == 0) {
      history.best_epoch = epoch;
      continue;
    }
    const double v = mean_loss(model, data, val);
    history.val_loss.push_back(v);
    if (v < best_val) {
      best_val = v;
      best = last_finite;
      history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      history.stopped_early = true;
      break;
    }
  }
  if (n_val > 0) nx::restore(params, best);
  return history;
}

Prediction predict_from_logits(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) != kLogits) throw DimensionError("predict: logits must be [n×9]");
  Prediction p{{}, nx::softmax_rows(logits)};
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < kLogits; ++k) {
      if (logits.at(i, k) > logits.at(i, best)) best = k;
    }
    p.classes.push_back(static_cast<int>(best));
  }
  return p;
}

Prediction predict(Classifier& model, const ClassifierData& data) {
  check_data(model, data, false);
  const std::size_t n = data.epochs.dim(0);
  Tensor logits({n, kLogits});
  for (std::size_t start = 0; start < n; start += kInferenceChunk) {
    std::vector<std::size_t> rows(std::min(n, start + kInferenceChunk) - start);
    std::iota(rows.begin(), rows.end(), start);
    nx::Graph g;
    const Tensor z = forward_rows(model, g, data, rows).value();
    std::copy(z.data().begin(), z.data().end(), logits.data().begin() + static_cast<std::ptrdiff_t>(start * kLogits));
  }
  return predict_from_logits(logits);
}

void save_classifier(const std::filesystem::path& dir, const std::string& stem, Classifier& model) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["kind"] = "classifier";
  j["architecture"] = architecture_name(model.architecture());
  j["channels"] = model.channels();
  j["d_embed"] = model.d_embed();
  j["seed"] = model.seed();
  auto& params = j["parameters"];
  for (const auto& [name, tensor] : model.parameters()) {
    nx::write_stk(dir / (stem + "." + name + ".stk"), *tensor);
    params.push_back({{"name", name}, {"shape", tensor->shape()}});
  }
  std::ofstream f(dir / (stem + ".json"));
  if (!f) throw IoError("cannot write classifier manifest in " + dir.string());
  f << j.dump(2) << '\n';
}

std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& dir, const std::string& stem) {
  std::ifstream f(dir / (stem + ".json"));
  if (!f) throw IoError("missing classifier manifest " + (dir / (stem + ".json")).string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed classifier manifest: ") + e.what());
  }
  const auto arch = parse_architecture(j.at("architecture").get<std::string>());
  const auto channels = j.at("channels").get<std::size_t>();
  const auto seed = j.at("seed").get<std::uint64_t>();
  std::unique_ptr<Classifier> model;
  switch (arch) {
    case Architecture::fusion: model = std::make_unique<FusionModel>(j.at("d_embed").get<std::size_t>(), seed, channels); break;
    case Architecture::cnn: model = std::make_unique<BaselineCnn>(seed, channels); break;
    case Architecture::eegnet: model = std::make_unique<EegNet>(seed, channels); break;
  }
  for (const auto& [name, tensor] : model->parameters()) {
    Tensor loaded = nx::read_stk(dir / (stem + "." + name + ".stk"));
    if (loaded.shape() != tensor->shape()) throw IoError("classifier parameter " + name + " has the wrong shape");
    tensor->storage() = loaded.storage();
  }
  return model;
}

}  // namespace eegscribe::models
