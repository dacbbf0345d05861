#include "eegscribe/pipeline/pipeline.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "eegscribe/errors.hpp"
#include "eegscribe/eval/projection.hpp"

namespace eegscribe::pipeline {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using json = nlohmann::json;

namespace {

constexpr std::array<std::pair<dsp::Stage, const char*>, 4> kStageNames{{
    {dsp::Stage::average_reference, "average_reference"},
    {dsp::Stage::bandpass, "bandpass"},
    {dsp::Stage::ica_rejection, "ica_rejection"},
    {dsp::Stage::second_filter, "second_filter"},
}};

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"experiment", {"out_dir", "seed", "allow_any_d_embed"}},
      {"data",
       {"source", "eeg", "events", "kinematics", "synth_seed", "n_repetitions", "snr_db", "class_contrast",
        "blink_amplitude", "trajectory_jitter", "amplitude_jitter", "max_latency_jitter", "latent_sources"}},
      {"preprocess",
       {"bandpass_low", "bandpass_high", "second_low", "second_high", "filter_order", "ica_components",
        "eog_threshold", "frontal_channel", "ica_max_iter", "ica_tol", "ica_fit_stride", "order", "allow_reorder"}},
      {"cebra", {"batch_size", "lr", "offset_frames", "temperature", "steps"}},
      {"train", {"lr", "batch_size", "max_epochs", "patience", "val_fraction", "full_batch"}},
      {"models", {"list"}},
      {"projection", {"enabled", "time_stride", "perplexity", "tsne_iters"}},
  };
  return keys;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t") - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Shortest text that parses back to the same double.
std::string real(double v) {
  std::array<char, 32> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return {buf.data(), r.ptr};
}

std::string model_token(const eval::ModelSpec& m) {
  if (m.architecture == models::Architecture::fusion) return "fusion-" + std::to_string(m.d_embed);
  return models::architecture_name(m.architecture);
}

eval::ModelSpec parse_model(const std::string& token) {
  if (token == "cnn" || token == "baseline_cnn") return {"cnn", models::Architecture::cnn, 0};
  if (token == "eegnet") return {"eegnet", models::Architecture::eegnet, 0};
  if (token.starts_with("fusion-")) {
    std::size_t d = 0;
    const auto digits = token.substr(7);
    const auto r = std::from_chars(digits.data(), digits.data() + digits.size(), d);
    if (r.ec == std::errc{} && r.ptr == digits.data() + digits.size() && d > 0) {
      return {token, models::Architecture::fusion, d};
    }
  }
  throw ParameterError("unknown model '" + token + "' (expected cnn, eegnet or fusion-<d>)");
}

dsp::Stage parse_stage(const std::string& name) {
  for (const auto& [stage, label] : kStageNames) {
    if (name == label) return stage;
  }
  throw ParameterError("unknown preprocessing stage '" + name + "'");
}

const char* stage_label(dsp::Stage s) {
  for (const auto& [stage, label] : kStageNames) {
    if (s == stage) return label;
  }
  return "unknown";
}

// Runs body, re-throwing anything except PipelineError under the stage tag.
template <class F>
auto tagged(const std::string& stage, F&& body) {
  try {
    return body();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(stage, e.what(), std::current_exception());
  }
}

json file_entries(const fs::path& root, const std::vector<fs::path>& files) {
  json out = json::array();
  for (const auto& f : files) {
    out.push_back({{"path", fs::relative(f, root).generic_string()}, {"sha256", sha256_hex(f)}});
  }
  return out;
}

fs::path write_manifest(const Layout& layout, const fs::path& dir, const std::string& stage, std::uint64_t seed,
                        json parameters, const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  const json m{{"stage", stage},
               {"master_seed", seed},
               {"parameters", std::move(parameters)},
               {"inputs", file_entries(layout.root, inputs)},
               {"outputs", file_entries(layout.root, outputs)}};
  const auto path = dir / "manifest.json";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << m.dump(2) << '\n';
  return path;
}

std::vector<fs::path> session_files(const ExperimentConfig& c, const Layout& layout) {
  if (c.data.synthetic) {
    return {layout.session / "eeg.stk", layout.session / "events.csv", layout.session / "kinematics.csv"};
  }
  return {c.data.eeg, c.data.events, c.data.kinematics};
}

std::vector<fs::path> fold_files(const Layout& layout) {
  std::vector<fs::path> out;
  for (int k = 0; k < dsp::FoldAssignment::kFolds; ++k) {
    for (const char* what : {"epochs", "traj", "labels", "trials"}) {
      out.push_back(layout.folds / ("fold" + std::to_string(k) + "_" + what + ".stk"));
    }
  }
  return out;
}

void require_files(const std::vector<fs::path>& files, const std::string& hint) {
  for (const auto& f : files) {
    if (!fs::exists(f)) throw IoError("missing " + f.string() + " (" + hint + ")");
  }
}

dsp::EpochSet training_part(const std::vector<dsp::EpochSet>& folds, int k) {
  std::vector<const dsp::EpochSet*> parts;
  for (int j = 0; j < static_cast<int>(folds.size()); ++j) {
    if (j != k) parts.push_back(&folds[static_cast<std::size_t>(j)]);
  }
  return dsp::EpochSet::concatenate(parts);
}

cebra::CebraConfig cebra_for(const ExperimentConfig& c, std::size_t d, int fold) {
  cebra::CebraConfig cc = c.cebra;
  cc.d_embed = d;
  cc.seed = stage_seed(c.seed, "train-embed/d" + std::to_string(d) + "/fold" + std::to_string(fold));
  return cc;
}

nx::Tensor flatten_trials(const nx::Tensor& t) { return t.reshaped({t.dim(0), t.numel() / t.dim(0)}); }

eval::NamedProjection tsne_of(const ExperimentConfig& c, const std::string& name, const nx::Tensor& x,
                              const std::vector<int>& labels) {
  eval::TsneConfig tc;
  tc.perplexity = std::min(c.projection.perplexity, static_cast<double>(x.dim(0) - 1) / 3.0);
  tc.iters = c.projection.tsne_iters;
  tc.seed = stage_seed(c.seed, "run/projection/" + name);
  return {name, eval::tsne_project(x, tc), labels};
}

std::vector<eval::NamedProjection> projections(const ExperimentConfig& c, const Layout& layout,
                                               const std::vector<dsp::EpochSet>& folds) {
  std::vector<const dsp::EpochSet*> parts;
  for (const auto& f : folds) parts.push_back(&f);
  const dsp::EpochSet all = dsp::EpochSet::concatenate(parts);

  std::vector<eval::NamedProjection> out;
  out.push_back(tsne_of(c, "tsne_eeg", flatten_trials(all.epochs), all.labels));
  for (std::size_t d : c.embed_dims()) {
    // Fold round 0's encoder applied to every trial.
    cebra::Encoder enc = cebra::load_encoder(layout.embed, encoder_stem(d, 0));
    const cebra::Embedding e = cebra::encode_dataset(enc, all.epochs);
    const std::size_t t = all.epochs.dim(2), stride = c.projection.time_stride;
    std::vector<std::size_t> rows;
    std::vector<int> point_labels;
    for (std::size_t i = 0; i < all.size(); ++i) {
      for (std::size_t u = 0; u < t; u += stride) {
        rows.push_back(i * t + u);
        point_labels.push_back(all.labels[i]);
      }
    }
    nx::Tensor points({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t k = 0; k < d; ++k) points.at(r, k) = e.values.at(rows[r], k);
    }
    const std::string tag = "embed" + std::to_string(d);
    out.push_back({"pca_" + tag, eval::pca_project(points, 2), point_labels});
    out.push_back(tsne_of(c, "tsne_" + tag, flatten_trials(e.trial_major), all.labels));
  }
  return out;
}

json preprocess_parameters(const ExperimentConfig& c, std::uint64_t ica_seed, std::uint64_t fold_seed) {
  const auto& p = c.preprocess;
  json order = json::array();
  for (auto s : p.order) order.push_back(stage_label(s));
  return {{"bandpass", {p.bandpass[0], p.bandpass[1]}},
          {"second_band", {p.second_band[0], p.second_band[1]}},
          {"filter_order", p.filter_order},
          {"order", order},
          {"allow_reorder", p.allow_reorder},
          {"ica_components", p.ica_components},
          {"eog_threshold", p.eog_threshold},
          {"frontal_channel", p.frontal_channel},
          {"ica_max_iter", p.ica_max_iter},
          {"ica_tol", p.ica_tol},
          {"ica_fit_stride", p.ica_fit_stride},
          {"ica_seed", ica_seed},
          {"fold_seed", fold_seed}};
}

json cebra_parameters(const cebra::CebraConfig& c) {
  return {{"batch_size", c.batch_size}, {"lr", c.lr},       {"offset_frames", c.offset_frames},
          {"temperature", c.temperature}, {"steps", c.steps}};
}

}  // namespace

PipelineError::PipelineError(std::string stage, const std::string& message, std::exception_ptr cause)
    : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)), cause_(std::move(cause)) {}

Layout::Layout(const fs::path& out)
    : root(out), session(out / "session"), folds(out / "folds"), embed(out / "embed"), results(out / "results") {}

void ExperimentConfig::validate() const {
  if (models.empty()) throw ParameterError("config: at least one model is required");
  std::set<std::string> names;
  for (const auto& m : models) {
    m.validate();
    if (!names.insert(m.name).second) throw ParameterError("config: model '" + m.name + "' listed twice");
    if (m.d_embed > 0 && !allow_any_d_embed &&
        std::find(cebra::kEmbedDims.begin(), cebra::kEmbedDims.end(), m.d_embed) == cebra::kEmbedDims.end()) {
      throw ParameterError("config: d_embed " + std::to_string(m.d_embed) +
                           " is outside {2, 4, 8, 12, 16}; set allow_any_d_embed to override");
    }
  }
  if (data.synthetic) {
    data.synth.validate();
  } else {
    for (const auto& p : {data.eeg, data.events, data.kinematics}) {
      if (p.empty() || !fs::exists(p)) throw IoError("config: input file '" + p.string() + "' does not exist");
    }
  }
  preprocess.validate();
  cebra.validate();
  train.validate();
  if (projection.time_stride < 1) throw ParameterError("config: projection time_stride must be ≥ 1");
  if (!(projection.perplexity >= 5.0)) throw ParameterError("config: projection perplexity must be ≥ 5");
}

std::vector<std::size_t> ExperimentConfig::embed_dims() const {
  std::vector<std::size_t> out;
  for (const auto& m : models) {
    if (m.d_embed > 0 && std::find(out.begin(), out.end(), m.d_embed) == out.end()) out.push_back(m.d_embed);
  }
  return out;
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.models = {parse_model("cnn"), parse_model("eegnet")};
  for (std::size_t d : cebra::kEmbedDims) c.models.push_back(parse_model("fusion-" + std::to_string(d)));
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw IoError("config: " + std::string(e.what()));
  }
  for (const auto& [section, body] : tree) {
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) throw ParameterError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) throw ParameterError("config: unknown key " + section + "." + key);
    }
  }

  ExperimentConfig c = default_config();
  const fs::path base = path.parent_path();
  auto get = [&tree](const std::string& key, auto fallback) {
    if (!tree.get_optional<std::string>(key)) return fallback;
    try {
      return tree.get<decltype(fallback)>(key);
    } catch (const pt::ptree_bad_data&) {
      throw ParameterError("config: cannot parse " + key + " = '" + tree.get<std::string>(key) + "'");
    }
  };
  auto resolve = [&base](const std::string& p) { return p.empty() ? fs::path{} : (base / p).lexically_normal(); };

  c.out_dir = get("experiment.out_dir", c.out_dir.string());
  c.seed = get("experiment.seed", c.seed);
  c.allow_any_d_embed = get("experiment.allow_any_d_embed", c.allow_any_d_embed);

  const std::string source = get("data.source", std::string("synthetic"));
  if (source != "synthetic" && source != "files") throw ParameterError("config: data.source must be synthetic or files");
  c.data.synthetic = source == "synthetic";
  c.data.eeg = resolve(get("data.eeg", std::string()));
  c.data.events = resolve(get("data.events", std::string()));
  c.data.kinematics = resolve(get("data.kinematics", std::string()));
  auto& s = c.data.synth;
  if (tree.get_optional<std::string>("data.synth_seed")) {
    c.data.explicit_synth_seed = true;
    s.seed = get("data.synth_seed", s.seed);
  }
  s.n_repetitions = get("data.n_repetitions", s.n_repetitions);
  s.snr_db = get("data.snr_db", s.snr_db);
  s.class_contrast = get("data.class_contrast", s.class_contrast);
  s.blink_amplitude = get("data.blink_amplitude", s.blink_amplitude);
  s.trajectory_jitter = get("data.trajectory_jitter", s.trajectory_jitter);
  s.amplitude_jitter = get("data.amplitude_jitter", s.amplitude_jitter);
  s.max_latency_jitter = get("data.max_latency_jitter", s.max_latency_jitter);
  s.latent_sources = get("data.latent_sources", s.latent_sources);

  auto& p = c.preprocess;
  p.bandpass = {get("preprocess.bandpass_low", p.bandpass[0]), get("preprocess.bandpass_high", p.bandpass[1])};
  p.second_band = {get("preprocess.second_low", p.second_band[0]), get("preprocess.second_high", p.second_band[1])};
  p.filter_order = get("preprocess.filter_order", p.filter_order);
  p.ica_components = get("preprocess.ica_components", p.ica_components);
  p.eog_threshold = get("preprocess.eog_threshold", p.eog_threshold);
  p.frontal_channel = get("preprocess.frontal_channel", p.frontal_channel);
  p.ica_max_iter = get("preprocess.ica_max_iter", p.ica_max_iter);
  p.ica_tol = get("preprocess.ica_tol", p.ica_tol);
  p.ica_fit_stride = get("preprocess.ica_fit_stride", p.ica_fit_stride);
  p.allow_reorder = get("preprocess.allow_reorder", p.allow_reorder);
  if (auto order = tree.get_optional<std::string>("preprocess.order")) {
    p.order.clear();
    for (const auto& name : split_list(*order)) p.order.push_back(parse_stage(name));
  }

  auto& e = c.cebra;
  e.batch_size = get("cebra.batch_size", e.batch_size);
  e.lr = get("cebra.lr", e.lr);
  e.offset_frames = get("cebra.offset_frames", e.offset_frames);
  e.temperature = get("cebra.temperature", e.temperature);
  e.steps = get("cebra.steps", e.steps);

  auto& t = c.train;
  t.lr = get("train.lr", t.lr);
  t.batch_size = get("train.batch_size", t.batch_size);
  t.max_epochs = get("train.max_epochs", t.max_epochs);
  t.patience = get("train.patience", t.patience);
  t.val_fraction = get("train.val_fraction", t.val_fraction);
  t.full_batch = get("train.full_batch", t.full_batch);

  if (auto list = tree.get_optional<std::string>("models.list")) {
    c.models.clear();
    for (const auto& token : split_list(*list)) c.models.push_back(parse_model(token));
  }

  auto& pr = c.projection;
  pr.enabled = get("projection.enabled", pr.enabled);
  pr.time_stride = get("projection.time_stride", pr.time_stride);
  pr.perplexity = get("projection.perplexity", pr.perplexity);
  pr.tsne_iters = get("projection.tsne_iters", pr.tsne_iters);

  c.validate();
  return c;
}

void save_config(const fs::path& path, const ExperimentConfig& c) {
  pt::ptree tree;
  auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
  tree.put("experiment.out_dir", c.out_dir.string());
  tree.put("experiment.seed", std::to_string(c.seed));
  tree.put("experiment.allow_any_d_embed", flag(c.allow_any_d_embed));

  tree.put("data.source", std::string(c.data.synthetic ? "synthetic" : "files"));
  if (!c.data.synthetic) {
    tree.put("data.eeg", fs::absolute(c.data.eeg).string());
    tree.put("data.events", fs::absolute(c.data.events).string());
    tree.put("data.kinematics", fs::absolute(c.data.kinematics).string());
  }
  const auto& s = c.data.synth;
  if (c.data.explicit_synth_seed) tree.put("data.synth_seed", std::to_string(s.seed));
  tree.put("data.n_repetitions", std::to_string(s.n_repetitions));
  tree.put("data.snr_db", real(s.snr_db));
  tree.put("data.class_contrast", real(s.class_contrast));
  tree.put("data.blink_amplitude", real(s.blink_amplitude));
  tree.put("data.trajectory_jitter", real(s.trajectory_jitter));
  tree.put("data.amplitude_jitter", real(s.amplitude_jitter));
  tree.put("data.max_latency_jitter", std::to_string(s.max_latency_jitter));
  tree.put("data.latent_sources", std::to_string(s.latent_sources));

  const auto& p = c.preprocess;
  tree.put("preprocess.bandpass_low", real(p.bandpass[0]));
  tree.put("preprocess.bandpass_high", real(p.bandpass[1]));
  tree.put("preprocess.second_low", real(p.second_band[0]));
  tree.put("preprocess.second_high", real(p.second_band[1]));
  tree.put("preprocess.filter_order", std::to_string(p.filter_order));
  tree.put("preprocess.ica_components", std::to_string(p.ica_components));
  tree.put("preprocess.eog_threshold", real(p.eog_threshold));
  tree.put("preprocess.frontal_channel", std::to_string(p.frontal_channel));
  tree.put("preprocess.ica_max_iter", std::to_string(p.ica_max_iter));
  tree.put("preprocess.ica_tol", real(p.ica_tol));
  tree.put("preprocess.ica_fit_stride", std::to_string(p.ica_fit_stride));
  std::string order;
  for (auto st : p.order) order += (order.empty() ? "" : ", ") + std::string(stage_label(st));
  tree.put("preprocess.order", order);
  tree.put("preprocess.allow_reorder", flag(p.allow_reorder));

  const auto& e = c.cebra;
  tree.put("cebra.batch_size", std::to_string(e.batch_size));
  tree.put("cebra.lr", real(e.lr));
  tree.put("cebra.offset_frames", std::to_string(e.offset_frames));
  tree.put("cebra.temperature", real(e.temperature));
  tree.put("cebra.steps", std::to_string(e.steps));

  const auto& t = c.train;
  tree.put("train.lr", real(t.lr));
  tree.put("train.batch_size", std::to_string(t.batch_size));
  tree.put("train.max_epochs", std::to_string(t.max_epochs));
  tree.put("train.patience", std::to_string(t.patience));
  tree.put("train.val_fraction", real(t.val_fraction));
  tree.put("train.full_batch", flag(t.full_batch));

  std::string list;
  for (const auto& m : c.models) list += (list.empty() ? "" : ", ") + model_token(m);
  tree.put("models.list", list);

  const auto& pr = c.projection;
  tree.put("projection.enabled", flag(pr.enabled));
  tree.put("projection.time_stride", std::to_string(pr.time_stride));
  tree.put("projection.perplexity", real(pr.perplexity));
  tree.put("projection.tsne_iters", std::to_string(pr.tsne_iters));

  try {
    pt::write_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& err) {
    throw IoError("cannot write config: " + std::string(err.what()));
  }
}

std::uint64_t stage_seed(std::uint64_t master, std::string_view label) {
  const std::string msg = std::string(label) + ":" + std::to_string(master);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(msg.data(), msg.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  std::uint64_t seed = 0;
  for (int i = 7; i >= 0; --i) seed = (seed << 8) | digest[static_cast<std::size_t>(i)];
  return seed;
}

std::string sha256_hex(const fs::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("cannot read " + file.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (f.read(buf.data(), buf.size()) || f.gcount() > 0) {
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(f.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string encoder_stem(std::size_t d_embed, int fold) {
  return "encoder_d" + std::to_string(d_embed) + "_fold" + std::to_string(fold);
}

StageOutput cmd_generate(const ExperimentConfig& config) {
  return tagged("generate", [&] {
    config.validate();
    if (!config.data.synthetic) throw ContractError("data source is files; nothing to generate");
    const Layout layout(config.out_dir);
    synth::SynthConfig sc = config.data.synth;
    if (!config.data.explicit_synth_seed) sc.seed = stage_seed(config.seed, "generate");
    std::error_code ec;
    fs::create_directories(layout.session, ec);
    if (ec) throw IoError("cannot create " + layout.session.string() + ": " + ec.message());
    StageOutput out;
    out.files = synth::write_session(layout.session, synth::gen_session(sc));
    const json params{{"synth_seed", sc.seed},
                      {"n_repetitions", sc.n_repetitions},
                      {"snr_db", sc.snr_db},
                      {"class_contrast", sc.class_contrast},
                      {"blink_amplitude", sc.blink_amplitude},
                      {"trajectory_jitter", sc.trajectory_jitter},
                      {"amplitude_jitter", sc.amplitude_jitter},
                      {"max_latency_jitter", sc.max_latency_jitter},
                      {"latent_sources", sc.latent_sources}};
    out.manifest = write_manifest(layout, layout.session, "generate", config.seed, params, {}, out.files);
    spdlog::info("generate: wrote {} files to {}", out.files.size(), layout.session.string());
    return out;
  });
}

StageOutput cmd_preprocess(const ExperimentConfig& config) {
  return tagged("preprocess", [&] {
    config.validate();
    const Layout layout(config.out_dir);
    const auto inputs = session_files(config, layout);
    require_files(inputs, "run generate first");
    const dsp::RawSession session = dsp::load_session(inputs[0], inputs[1], inputs[2]);
    dsp::PreprocessConfig pc = config.preprocess;
    pc.ica_seed = stage_seed(config.seed, "preprocess/ica");
    pc.fold_seed = stage_seed(config.seed, "preprocess/folds");
    const dsp::PreprocessResult r = dsp::preprocess_session(session, pc);
    dsp::write_folds(layout.folds, r.data, r.folds);

    StageOutput out;
    out.files = fold_files(layout);
    json params = preprocess_parameters(config, pc.ica_seed, pc.fold_seed);
    json counts = json::array();
    for (int k = 0; k < dsp::FoldAssignment::kFolds; ++k) {
      std::vector<int> per_class(dsp::kNumClasses, 0);
      for (std::size_t i : r.folds.members(k)) ++per_class[static_cast<std::size_t>(r.data.labels[i])];
      counts.push_back(per_class);
    }
    params["fold_class_counts"] = counts;
    params["trials"] = r.data.size();
    params["dropped_trials"] = r.dropped_trials;
    params["rejected_components"] = r.rejected_components;
    params["unconverged_components"] = r.unconverged_components;
    out.manifest = write_manifest(layout, layout.folds, "preprocess", config.seed, params, inputs, out.files);
    spdlog::info("preprocess: {} trials, rejected {} ICA components", r.data.size(), r.rejected_components.size());
    return out;
  });
}

StageOutput cmd_train_embed(const ExperimentConfig& config) {
  return tagged("train-embed", [&] {
    config.validate();
    const Layout layout(config.out_dir);
    const auto inputs = fold_files(layout);
    require_files(inputs, "run preprocess first");
    const auto folds = dsp::read_folds(layout.folds);
    fs::create_directories(layout.embed);

    StageOutput out;
    json checkpoints = json::array();
    for (std::size_t d : config.embed_dims()) {
      for (int k = 0; k < static_cast<int>(folds.size()); ++k) {
        const dsp::EpochSet train = training_part(folds, k);
        eval::assert_disjoint(train, folds[static_cast<std::size_t>(k)], k);
        const cebra::CebraConfig cc = cebra_for(config, d, k);
        auto trained = cebra::train_cebra(train.epochs, cebra::AuxiliaryVariables::from_epochs(train), cc);
        const std::string stem = encoder_stem(d, k);
        cebra::save_encoder(layout.embed, stem, trained.encoder, cc, trained.loss_curve);
        out.files.push_back(layout.embed / (stem + ".json"));
        for (const auto& [name, tensor] : trained.encoder.parameters()) {
          out.files.push_back(layout.embed / (stem + "." + name + ".stk"));
        }
        checkpoints.push_back({{"stem", stem}, {"d_embed", d}, {"fold", k}, {"seed", cc.seed},
                               {"final_loss", trained.loss_curve.empty() ? 0.0 : trained.loss_curve.back()}});
        spdlog::info("train-embed: {} done", stem);
      }
    }
    json params = cebra_parameters(config.cebra);
    params["checkpoints"] = checkpoints;
    out.manifest = write_manifest(layout, layout.embed, "train-embed", config.seed, params, inputs, out.files);
    return out;
  });
}

StageOutput cmd_run(const ExperimentConfig& config, bool all) {
  if (all) {
    if (config.data.synthetic) cmd_generate(config);
    cmd_preprocess(config);
    cmd_train_embed(config);
  }
  return tagged("run", [&] {
    config.validate();
    const Layout layout(config.out_dir);
    std::vector<fs::path> inputs = fold_files(layout);
    require_files(inputs, "run preprocess first");
    for (std::size_t d : config.embed_dims()) {
      for (int k = 0; k < dsp::FoldAssignment::kFolds; ++k) {
        const auto stem = layout.embed / (encoder_stem(d, k) + ".json");
        require_files({stem}, "run train-embed first");
        inputs.push_back(stem);
      }
    }
    const auto folds = dsp::read_folds(layout.folds);

    std::vector<eval::FoldReport> reports;
    for (const auto& spec : config.models) {
      const eval::FoldRunner runner = [&](const dsp::EpochSet& train, const dsp::EpochSet& test, int fold) {
        models::ClassifierData train_data{train.epochs, std::nullopt, train.labels};
        models::ClassifierData test_data{test.epochs, std::nullopt, test.labels};
        if (spec.d_embed > 0) {
          cebra::Encoder enc = cebra::load_encoder(layout.embed, encoder_stem(spec.d_embed, fold));
          train_data.embeddings = cebra::encode_dataset(enc, train.epochs).trial_major;
          test_data.embeddings = cebra::encode_dataset(enc, test.epochs).trial_major;
        }
        const std::string tag = "run/" + spec.name + "/fold" + std::to_string(fold);
        auto model = models::make_classifier(spec.architecture, spec.d_embed, stage_seed(config.seed, tag + "/init"));
        models::TrainConfig tc = config.train;
        tc.seed = stage_seed(config.seed, tag + "/train");
        models::train_classifier(*model, train_data, tc);
        return models::predict(*model, test_data).classes;
      };
      reports.push_back(eval::run_cv(folds, spec, runner));
      spdlog::info("run: {} accuracy {:.4f} ± {:.4f}", spec.name, reports.back().mean_acc, reports.back().std_acc);
    }

    std::vector<eval::NamedProjection> proj;
    if (config.projection.enabled) proj = projections(config, layout, folds);

    StageOutput out;
    out.files = eval::emit_report(layout.results, reports, proj);
    json params{{"train",
                 {{"lr", config.train.lr},
                  {"batch_size", config.train.batch_size},
                  {"max_epochs", config.train.max_epochs},
                  {"patience", config.train.patience},
                  {"val_fraction", config.train.val_fraction},
                  {"full_batch", config.train.full_batch}}}};
    json names = json::array();
    for (const auto& m : config.models) names.push_back(m.name);
    params["models"] = names;
    out.manifest = write_manifest(layout, layout.results, "run", config.seed, params, inputs, out.files);
    return out;
  });
}

}  // namespace eegscribe::pipeline
