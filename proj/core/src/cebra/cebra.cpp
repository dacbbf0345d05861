#include "eegscribe/cebra/cebra.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "eegscribe/errors.hpp"
#include "eegscribe/numerics/adam.hpp"
#include "eegscribe/numerics/ops.hpp"
#include "eegscribe/numerics/stk_io.hpp"

namespace eegscribe::cebra {

using nx::Tensor;
using nx::Var;

void CebraConfig::validate() const {
  if (d_embed < 1) throw ParameterError("cebra: d_embed must be positive");
  if (batch_size < 1) throw ParameterError("cebra: batch_size must be positive");
  if (offset_frames < 7 || offset_frames >= dsp::kEpochSamples) {
    throw ParameterError("cebra: offset_frames must lie in [7, 250) to fit the three-layer encoder");
  }
  if (!(temperature > 0.0)) throw ParameterError("cebra: temperature must be positive");
  if (!(lr > 0.0)) throw ParameterError("cebra: learning rate must be positive");
}

void AuxiliaryVariables::validate() const {
  if (trial_length == 0 || size() == 0 || size() % trial_length != 0) {
    throw DimensionError("auxiliary variables must cover whole trials");
  }
  if (continuous.rank() != 2 || continuous.dim(0) != size() || continuous.dim(1) != dsp::kKinematicRows) {
    throw DimensionError("continuous auxiliary variables must be [N×4]");
  }
  continuous.require_finite("continuous auxiliary variables");
  for (int d : discrete) {
    if (d < 0 || d >= dsp::kNumClasses) throw LabelError("discrete auxiliary label outside [0, 9)");
  }
}

AuxiliaryVariables AuxiliaryVariables::from_epochs(const dsp::EpochSet& data) {
  const std::size_t n = data.size(), t = data.epochs.dim(2), rows = data.trajectories.dim(1);
  AuxiliaryVariables aux;
  aux.trial_length = t;
  aux.continuous = Tensor({n * t, rows});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t u = 0; u < t; ++u) {
      for (std::size_t r = 0; r < rows; ++r) aux.continuous.at(i * t + u, r) = data.trajectories.at(i, r, u);
      aux.discrete.push_back(data.labels[i]);
    }
  }
  return aux;
}

Encoder::Encoder(std::size_t channels, std::size_t d_embed, std::size_t window, std::uint64_t seed)
    : channels_(channels), d_embed_(d_embed), window_(window) {
  if (window < 7) throw ParameterError("encoder window must be at least 7 samples");
  nx::Rng rng(seed);
  conv1_ = nx::Conv1dLayer(channels, 32, 3, {}, rng);
  conv2_ = nx::Conv1dLayer(32, 32, 3, {}, rng);
  conv3_ = nx::Conv1dLayer(32, d_embed, 3, {}, rng);
  head_ = nx::DenseLayer(d_embed * (window - 6), d_embed, rng);
}

Var Encoder::forward(Var windows) {
  if (windows.value().rank() != 3 || windows.dim(1) != channels_ || windows.dim(2) != window_) {
    throw DimensionError("encoder expects [B×" + std::to_string(channels_) + "×" + std::to_string(window_) + "], got " +
                         nx::shape_string(windows.shape()));
  }
  Var h = nx::relu(conv1_(windows));
  h = nx::relu(conv2_(h));
  h = nx::relu(conv3_(h));
  h = nx::reshape(h, {windows.dim(0), d_embed_ * (window_ - 6)});
  return nx::l2_normalize_rows(head_(h));
}

Tensor Encoder::embed(const Tensor& windows) {
  nx::Graph g;
  return forward(g.input(windows)).value();
}

nx::NamedParams Encoder::parameters() {
  nx::NamedParams p;
  conv1_.collect("conv1", p);
  conv2_.collect("conv2", p);
  conv3_.collect("conv3", p);
  head_.collect("head", p);
  return p;
}

Encoder build_encoder(const CebraConfig& config, std::size_t channels) {
  config.validate();
  return Encoder(channels, config.d_embed, config.offset_frames, config.seed);
}

ContrastiveBatch sample_contrastive_batch(const AuxiliaryVariables& aux, const CebraConfig& config, nx::Rng& rng) {
  const std::size_t n = aux.size(), t = aux.trial_length;
  if (config.batch_size > n) throw ContractError("cebra: batch size exceeds the number of time points");
  std::vector<std::vector<std::size_t>> trials_of(dsp::kNumClasses);
  for (std::size_t tr = 0; tr < aux.trials(); ++tr) {
    trials_of[static_cast<std::size_t>(aux.discrete[tr * t])].push_back(tr);
  }
  const auto w = config.offset_frames;
  std::uniform_int_distribution<std::size_t> point(0, n - 1);
  ContrastiveBatch b;
  b.anchors.reserve(config.batch_size);
  b.positives.reserve(config.batch_size);
  constexpr int kRetries = 64;
  while (b.anchors.size() < config.batch_size) {
    const std::size_t a = point(rng);
    const std::size_t tau = a % t;
    const auto& pool = trials_of[static_cast<std::size_t>(aux.discrete[a])];
    const std::size_t lo = tau >= w ? tau - w : 0, hi = std::min(t - 1, tau + w);
    std::uniform_int_distribution<std::size_t> pick_trial(0, pool.size() - 1), pick_time(lo, hi);
    bool found = false;
    for (int r = 0; r < kRetries && !found; ++r) {
      const std::size_t p = pool[pick_trial(rng)] * t + pick_time(rng);
      if (p != a) {
        b.anchors.push_back(a);
        b.positives.push_back(p);
        found = true;
      }
    }
    if (!found) throw ContractError("cebra: no valid positive found for anchor " + std::to_string(a));
  }
  b.negatives.reserve(config.batch_size);
  for (std::size_t i = 0; i < config.batch_size; ++i) b.negatives.push_back(point(rng));
  return b;
}

Var infonce_loss(Var anchors, Var positives, Var negatives, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("infonce: temperature must be positive");
  const Var pos = nx::row_dot(anchors, positives);
  const Var neg = nx::matmul_nt(anchors, negatives);
  const std::array<Var, 2> parts{pos, neg};
  const Var logits = nx::scale(nx::concat(parts, 1), 1.0 / temperature);
  const std::vector<int> target(anchors.dim(0), 0);
  return nx::softmax_cross_entropy(logits, target);
}

Tensor gather_windows(const Tensor& epochs, const std::vector<std::size_t>& points, std::size_t window) {
  if (epochs.rank() != 3) throw DimensionError("gather_windows: epochs must be [n×C×T]");
  const std::size_t n = epochs.dim(0), c = epochs.dim(1), t = epochs.dim(2);
  Tensor out({points.size(), c, window});
  auto od = out.data();
  const auto in = epochs.data();
  for (std::size_t b = 0; b < points.size(); ++b) {
    const std::size_t trial = points[b] / t, tau = points[b] % t;
    if (trial >= n) throw DimensionError("gather_windows: time point out of range");
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* row = in.data() + (trial * c + ch) * t;
      double* dst = od.data() + (b * c + ch) * window;
      for (std::size_t k = 0; k < window; ++k) {
        // window covers tau − window + 1 .. tau
        const std::size_t back = window - 1 - k;
        dst[k] = back > tau ? row[0] : row[tau - back];
      }
    }
  }
  return out;
}

TrainedEncoder train_cebra(const Tensor& epochs, const AuxiliaryVariables& aux, const CebraConfig& config) {
  config.validate();
  aux.validate();
  if (epochs.rank() != 3 || epochs.dim(0) * epochs.dim(2) != aux.size() || epochs.dim(2) != aux.trial_length) {
    throw DimensionError("train_cebra: epochs and auxiliary variables disagree in time points");
  }
  TrainedEncoder out{build_encoder(config, epochs.dim(1)), {}};
  auto params = out.encoder.parameters();
  auto adam = nx::make_adam_state(params, config.lr);
  nx::Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t b = config.batch_size;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto batch = sample_contrastive_batch(aux, config, rng);
    std::vector<std::size_t> points = batch.anchors;
    points.insert(points.end(), batch.positives.begin(), batch.positives.end());
    points.insert(points.end(), batch.negatives.begin(), batch.negatives.end());

    nx::Graph g;
    const Var z = out.encoder.forward(g.input(gather_windows(epochs, points, config.offset_frames)));
    const Var loss = infonce_loss(nx::slice_rows(z, 0, b), nx::slice_rows(z, b, 2 * b),
                                  nx::slice_rows(z, 2 * b, points.size()), config.temperature);
    const double value = loss.value()[0];
    if (!std::isfinite(value)) {
      throw TrainingError("cebra: non-finite loss at step " + std::to_string(step),
                          static_cast<long>(step) - 1);
    }
    nx::zero_grads(params);
    g.backward(loss);
    nx::adam_step(params, adam);
    out.loss_curve.push_back(value);
  }
  return out;
}

Embedding encode_dataset(Encoder& encoder, const Tensor& epochs) {
  if (epochs.rank() != 3 || epochs.dim(1) != encoder.channels()) {
    throw DimensionError("encode_dataset: epochs must be [n×" + std::to_string(encoder.channels()) + "×T]");
  }
  const std::size_t n = epochs.dim(0), t = epochs.dim(2), d = encoder.d_embed(), total = n * t;
  Embedding e{Tensor({total, d}), Tensor({n, d, t})};
  constexpr std::size_t kChunk = 4096;
  std::vector<std::size_t> points;
  for (std::size_t start = 0; start < total; start += kChunk) {
    points.clear();
    for (std::size_t p = start; p < std::min(total, start + kChunk); ++p) points.push_back(p);
    const Tensor z = encoder.embed(gather_windows(epochs, points, encoder.window()));
    std::copy(z.data().begin(), z.data().end(), e.values.data().begin() + static_cast<std::ptrdiff_t>(start * d));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t u = 0; u < t; ++u) {
      for (std::size_t k = 0; k < d; ++k) e.trial_major.at(i, k, u) = e.values.at(i * t + u, k);
    }
  }
  return e;
}

void save_encoder(const std::filesystem::path& dir, const std::string& stem, Encoder& encoder,
                  const CebraConfig& config, const std::vector<double>& loss_curve) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["kind"] = "cebra_encoder";
  j["channels"] = encoder.channels();
  j["d_embed"] = encoder.d_embed();
  j["window"] = encoder.window();
  j["config"] = {{"batch_size", config.batch_size}, {"lr", config.lr},       {"offset_frames", config.offset_frames},
                 {"temperature", config.temperature}, {"steps", config.steps}, {"seed", config.seed}};
  auto& params = j["parameters"];
  for (const auto& [name, tensor] : encoder.parameters()) {
    nx::write_stk(dir / (stem + "." + name + ".stk"), *tensor);
    params.push_back({{"name", name}, {"shape", tensor->shape()}});
  }
  j["loss_curve"] = loss_curve;
  std::ofstream f(dir / (stem + ".json"));
  if (!f) throw IoError("cannot write encoder manifest in " + dir.string());
  f << j.dump(2) << '\n';
}

Encoder load_encoder(const std::filesystem::path& dir, const std::string& stem) {
  std::ifstream f(dir / (stem + ".json"));
  if (!f) throw IoError("missing encoder manifest " + (dir / (stem + ".json")).string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed encoder manifest: ") + e.what());
  }
  Encoder enc(j.at("channels").get<std::size_t>(), j.at("d_embed").get<std::size_t>(),
              j.at("window").get<std::size_t>(), 0);
  for (const auto& [name, tensor] : enc.parameters()) {
    Tensor loaded = nx::read_stk(dir / (stem + "." + name + ".stk"));
    if (loaded.shape() != tensor->shape()) throw IoError("encoder parameter " + name + " has the wrong shape");
    std::copy(loaded.data().begin(), loaded.data().end(), tensor->data().begin());
  }
  return enc;
}

}  // namespace eegscribe::cebra
