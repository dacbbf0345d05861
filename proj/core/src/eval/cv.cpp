#include "eegscribe/eval/cv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

#include "eegscribe/errors.hpp"
#include "eegscribe/numerics/adam.hpp"
#include "eegscribe/numerics/ops.hpp"

namespace eegscribe::eval {

using nx::Tensor;

namespace {

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void ModelSpec::validate() const {
  if (name.empty()) throw ParameterError("model spec needs a name");
  const bool fusion = architecture == models::Architecture::fusion;
  if (fusion != (d_embed > 0)) throw ParameterError("model '" + name + "': d_embed > 0 exactly for fusion models");
}

void assert_disjoint(const dsp::EpochSet& train, const dsp::EpochSet& test, int fold) {
  const std::set<std::size_t> seen(train.trial_ids.begin(), train.trial_ids.end());
  for (std::size_t id : test.trial_ids) {
    if (seen.count(id)) {
      throw LeakageError("fold " + std::to_string(fold) + ": test trial " + std::to_string(id) +
                         " also appears in training");
    }
  }
}

FoldReport run_cv(const std::vector<dsp::EpochSet>& folds, const ModelSpec& spec, const FoldRunner& runner) {
  spec.validate();
  if (folds.size() != static_cast<std::size_t>(dsp::FoldAssignment::kFolds)) {
    throw ContractError("run_cv: expected " + std::to_string(dsp::FoldAssignment::kFolds) + " folds");
  }
  for (const auto& f : folds) {
    if (f.trial_ids.size() != f.size()) throw ContractError("run_cv: every trial needs a trial id");
  }
  FoldReport report{spec.name, spec.d_embed, {}};
  for (int k = 0; k < static_cast<int>(folds.size()); ++k) {
    std::vector<const dsp::EpochSet*> parts;
    for (int j = 0; j < static_cast<int>(folds.size()); ++j) {
      if (j != k) parts.push_back(&folds[static_cast<std::size_t>(j)]);
    }
    const dsp::EpochSet train = dsp::EpochSet::concatenate(parts);
    const dsp::EpochSet& test = folds[static_cast<std::size_t>(k)];
    assert_disjoint(train, test, k);
    const auto predicted = runner(train, test, k);
    report.per_fold.push_back(compute_metrics(predicted, test.labels));
    spdlog::info("{} fold {}: accuracy {:.4f}", spec.name, k, report.per_fold.back().accuracy);
  }
  summarize(report);
  return report;
}

std::uint64_t fold_seed(std::uint64_t seed, int fold, std::uint64_t stream) {
  return splitmix(splitmix(seed ^ splitmix(static_cast<std::uint64_t>(fold))) + stream);
}

FoldRunner classifier_runner(const ModelSpec& spec, const cebra::CebraConfig& cebra_config,
                             const models::TrainConfig& train_config, std::uint64_t seed) {
  spec.validate();
  return [spec, cebra_config, train_config, seed](const dsp::EpochSet& train, const dsp::EpochSet& test, int fold) {
    models::ClassifierData train_data{train.epochs, std::nullopt, train.labels};
    models::ClassifierData test_data{test.epochs, std::nullopt, test.labels};
    if (spec.d_embed > 0) {
      cebra::CebraConfig cc = cebra_config;
      cc.d_embed = spec.d_embed;
      cc.seed = fold_seed(seed, fold, 1);
      auto trained = cebra::train_cebra(train.epochs, cebra::AuxiliaryVariables::from_epochs(train), cc);
      train_data.embeddings = cebra::encode_dataset(trained.encoder, train.epochs).trial_major;
      test_data.embeddings = cebra::encode_dataset(trained.encoder, test.epochs).trial_major;
    }
    auto model = models::make_classifier(spec.architecture, spec.d_embed, fold_seed(seed, fold, 2));
    models::TrainConfig tc = train_config;
    tc.seed = fold_seed(seed, fold, 3);
    models::train_classifier(*model, train_data, tc);
    return models::predict(*model, test_data).classes;
  };
}

Tensor binned_features(const Tensor& trial_major, std::size_t bins) {
  if (trial_major.rank() != 3) throw DimensionError("binned_features: input must be [n×d×T]");
  const std::size_t n = trial_major.dim(0), d = trial_major.dim(1), t = trial_major.dim(2);
  if (bins < 1 || bins > t) throw ParameterError("binned_features: bins must lie in [1, T]");
  Tensor out({n, d * bins});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      for (std::size_t b = 0; b < bins; ++b) {
        const std::size_t from = b * t / bins, to = (b + 1) * t / bins;
        double s = 0.0;
        for (std::size_t u = from; u < to; ++u) s += trial_major.at(i, k, u);
        out.at(i, k * bins + b) = s / static_cast<double>(to - from);
      }
    }
  }
  return out;
}

std::vector<int> linear_probe(const Tensor& train_x, const std::vector<int>& train_labels, const Tensor& test_x,
                              const ProbeConfig& config) {
  if (train_x.rank() != 2 || test_x.rank() != 2 || train_x.dim(1) != test_x.dim(1) ||
      train_x.dim(0) != train_labels.size()) {
    throw DimensionError("linear_probe: features must be [n×F] with matching widths and labels");
  }
  if (train_labels.empty()) throw ContractError("linear_probe: no training rows");
  const std::size_t n = train_x.dim(0), f = train_x.dim(1);
  std::vector<double> mu(f, 0.0), sd(f, 0.0);
  for (std::size_t j = 0; j < f; ++j) {
    for (std::size_t i = 0; i < n; ++i) mu[j] += train_x.at(i, j) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) sd[j] += (train_x.at(i, j) - mu[j]) * (train_x.at(i, j) - mu[j]);
    sd[j] = std::sqrt(sd[j] / static_cast<double>(n));
  }
  auto standardize = [&](const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.dim(0); ++i) {
      for (std::size_t j = 0; j < f; ++j) out.at(i, j) = sd[j] > 1e-12 ? (x.at(i, j) - mu[j]) / sd[j] : 0.0;
    }
    return out;
  };
  const Tensor xs = standardize(train_x);
  Tensor w({f, models::kLogits}), b({models::kLogits});
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  const nx::NamedParams params{{"weight", &w}, {"bias", &b}};
  auto adam = nx::make_adam_state(params, config.lr);
  for (std::size_t it = 0; it < config.iters; ++it) {
    nx::Graph g;
    const nx::Var wv = g.parameter(w);
    nx::Var loss = nx::softmax_cross_entropy(nx::dense(g.input(xs), wv, g.parameter(b)), train_labels);
    loss = nx::add(loss, nx::scale(nx::sum(nx::square(wv)), config.l2));
    nx::zero_grads(params);
    g.backward(loss);
    nx::adam_step(params, adam);
  }
  nx::Graph g;
  const Tensor logits = nx::dense(g.input(standardize(test_x)), g.input(w), g.input(b)).value();
  return models::predict_from_logits(logits).classes;
}

std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir, const std::vector<FoldReport>& reports,
                                               const std::vector<NamedProjection>& projections) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;

  const auto per_fold = dir / "results_per_fold.csv";
  {
    auto f = open_csv(per_fold);
    f << "model,d_embed,fold,accuracy,macro_f1\n";
    for (const auto& r : reports) {
      for (std::size_t k = 0; k < r.per_fold.size(); ++k) {
        f << r.model << ',' << r.d_embed << ',' << k << ',' << real(r.per_fold[k].accuracy) << ','
          << real(r.per_fold[k].macro_f1) << '\n';
      }
    }
  }
  written.push_back(per_fold);

  const auto aggregate = dir / "results_aggregate.csv";
  {
    auto f = open_csv(aggregate);
    f << "model,d_embed,mean_acc,std_acc,mean_f1,std_f1\n";
    for (const auto& r : reports) {
      f << r.model << ',' << r.d_embed << ',' << real(r.mean_acc) << ',' << real(r.std_acc) << ','
        << real(r.mean_f1) << ',' << real(r.std_f1) << '\n';
    }
  }
  written.push_back(aggregate);

  for (const auto& p : projections) {
    const Tensor& c = p.result.coords;
    if (c.rank() != 2 || c.dim(1) < 2 || p.labels.size() != c.dim(0)) {
      throw DimensionError("projection " + p.name + ": coords must be [N×≥2] with N labels");
    }
    const auto path = dir / ("projection_" + p.name + ".csv");
    auto f = open_csv(path);
    f << "index,dim1,dim2,label\n";
    for (std::size_t i = 0; i < c.dim(0); ++i) {
      f << i << ',' << real(c.at(i, 0)) << ',' << real(c.at(i, 1)) << ',' << p.labels[i] << '\n';
    }
    written.push_back(path);
  }
  return written;
}

}  // namespace eegscribe::eval
