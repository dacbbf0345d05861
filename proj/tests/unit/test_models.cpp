#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "eegscribe/errors.hpp"
#include "eegscribe/models/models.hpp"
#include "eegscribe/numerics/ops.hpp"
#include "support/random.hpp"

using namespace eegscribe;
using namespace eegscribe::models;
using testing::random_normal;

namespace {

nx::Tensor logits_of(Classifier& m, const nx::Tensor& eeg, const std::optional<nx::Tensor>& embed = std::nullopt) {
  nx::Graph g;
  std::optional<nx::Var> e;
  if (embed) e = g.input(*embed);
  return m.forward(g.input(eeg), e).value();
}

nx::Tensor* param(Classifier& m, const std::string& name) {
  for (auto& [n, t] : m.parameters()) {
    if (n == name) return t;
  }
  FAIL("no parameter " << name);
  return nullptr;
}

bool same_parameters(Classifier& a, Classifier& b) {
  auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].first != pb[i].first || !pa[i].second->identical(*pb[i].second)) return false;
  }
  return true;
}

// Two classes told apart by the sign of a constant offset on a few channels.
ClassifierData separable_toy(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ClassifierData d;
  d.epochs = random_normal({n, dsp::kChannels, dsp::kEpochSamples}, rng, 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    d.labels.push_back(label);
    for (std::size_t ch = 0; ch < 4; ++ch) {
      for (std::size_t u = 0; u < dsp::kEpochSamples; ++u) d.epochs.at(i, ch, u) += label == 0 ? 1.0 : -1.0;
    }
  }
  return d;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace

TEST_CASE("every architecture emits nine logits for any batch size") {
  std::mt19937_64 rng(1);
  FusionModel fusion = build_fusion_model(4, 1);
  BaselineCnn cnn = build_baseline_cnn(1);
  EegNet eegnet = build_eegnet_baseline(1);
  for (std::size_t b : {1u, 2u, 5u}) {
    const nx::Tensor x = random_normal({b, dsp::kChannels, dsp::kEpochSamples}, rng);
    CHECK(logits_of(fusion, x, random_normal({b, 4, dsp::kEpochSamples}, rng)).shape() == nx::Shape{b, 9});
    CHECK(logits_of(cnn, x).shape() == nx::Shape{b, 9});
    CHECK(logits_of(eegnet, x).shape() == nx::Shape{b, 9});
  }
}

TEST_CASE("fusion embed branch takes d_embed input channels") {
  FusionModel m = build_fusion_model(16, 3);
  CHECK(param(m, "embed.conv1.kernel")->shape() == nx::Shape{16, 16, 11});
  CHECK(param(m, "head.fc1.weight")->shape() == nx::Shape{EegBranch::kFeatures + EmbedBranch::kFeatures, 64});
  CHECK(param(m, "head.fc2.weight")->shape() == nx::Shape{64, 9});
  CHECK_THROWS_AS(build_fusion_model(0, 3), ParameterError);
}

TEST_CASE("initialization is deterministic under the seed") {
  FusionModel f1 = build_fusion_model(8, 5), f2 = build_fusion_model(8, 5), f3 = build_fusion_model(8, 6);
  CHECK(same_parameters(f1, f2));
  CHECK_FALSE(same_parameters(f1, f3));
  BaselineCnn c1 = build_baseline_cnn(5), c2 = build_baseline_cnn(5);
  CHECK(same_parameters(c1, c2));
  EegNet e1 = build_eegnet_baseline(5), e2 = build_eegnet_baseline(5), e3 = build_eegnet_baseline(9);
  CHECK(same_parameters(e1, e2));
  CHECK_FALSE(same_parameters(e1, e3));
}

TEST_CASE("baseline cnn is a strict subset of the fusion model") {
  BaselineCnn cnn = build_baseline_cnn(0);
  CHECK(param(cnn, "head.fc1.weight")->shape() == nx::Shape{32, 64});
  for (std::size_t d : {2u, 16u}) {
    FusionModel f = build_fusion_model(d, 0);
    CHECK(nx::parameter_count(cnn.parameters()) < nx::parameter_count(f.parameters()));
  }
}

TEST_CASE("eegnet depthwise stage matches a direct evaluation") {
  std::mt19937_64 rng(2);
  EegNet net = build_eegnet_baseline(4);
  const std::size_t b = 2, c = dsp::kChannels, t = dsp::kEpochSamples;
  const nx::Tensor x = random_normal({b, c, t}, rng);
  nx::Graph g;
  const nx::Tensor out = net.depthwise_features(g.input(x)).value();
  REQUIRE(out.shape() == nx::Shape{b, 16, t});

  const nx::Tensor& tk = *param(net, "temporal.kernel");
  const nx::Tensor& tb = *param(net, "temporal.bias");
  const nx::Tensor& dk = *param(net, "depthwise.kernel");
  const nx::Tensor& db = *param(net, "depthwise.bias");
  REQUIRE(tk.shape() == nx::Shape{8, 1, 64});
  REQUIRE(dk.shape() == nx::Shape{16, c, 1});
  double worst = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t o = 0; o < 16; ++o) {
      const std::size_t f = o / 2;  // two spatial filters per temporal filter
      for (std::size_t u = 0; u < t; u += 7) {
        double acc = db[o];
        for (std::size_t ch = 0; ch < c; ++ch) {
          double tc = tb[f];
          for (std::size_t k = 0; k < 64; ++k) {
            const long src = static_cast<long>(u + k) - 31;
            if (src >= 0 && src < static_cast<long>(t)) tc += tk.at(f, 0, k) * x.at(i, ch, static_cast<std::size_t>(src));
          }
          acc += dk.at(o, ch, 0) * tc;
        }
        worst = std::max(worst, std::abs(acc - out.at(i, o, u)));
      }
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("fusion with zeroed embedding features reduces to the baseline") {
  std::mt19937_64 rng(3);
  FusionModel fusion = build_fusion_model(8, 11);
  BaselineCnn cnn = build_baseline_cnn(12);
  // Inject the baseline's EEG branch and head into the fusion model.
  nx::NamedParams from, to;
  cnn.eeg.collect("eeg", from);
  fusion.eeg.collect("eeg", to);
  for (std::size_t i = 0; i < from.size(); ++i) *to[i].second = *from[i].second;
  const nx::Tensor& w = cnn.head.fc1.weight;
  for (std::size_t r = 0; r < w.dim(0); ++r) {
    for (std::size_t k = 0; k < w.dim(1); ++k) fusion.head.fc1.weight.at(r, k) = w.at(r, k);
  }
  fusion.head.fc1.bias = cnn.head.fc1.bias;
  fusion.head.fc2 = cnn.head.fc2;

  const nx::Tensor x = random_normal({6, dsp::kChannels, dsp::kEpochSamples}, rng);
  nx::Graph g;
  const nx::Var xv = g.input(x);
  const std::array<nx::Var, 2> parts{fusion.eeg(xv), g.input(nx::Tensor({6, EmbedBranch::kFeatures}))};
  const nx::Tensor zeroed = fusion.head(nx::concat(parts, 1)).value();
  const nx::Tensor base = logits_of(cnn, x);
  for (std::size_t i = 0; i < zeroed.numel(); ++i) CHECK(std::abs(zeroed[i] - base[i]) < 1e-12);
}

TEST_CASE("predict examples") {
  nx::Tensor uniform({3, 9}, 0.25);
  auto p = predict_from_logits(uniform);
  CHECK(p.classes == std::vector<int>{0, 0, 0});
  for (double v : p.probabilities.data()) CHECK(v == doctest::Approx(1.0 / 9.0).epsilon(1e-14));

  nx::Tensor peaked({1, 9});
  peaked.at(0, 5) = 10.0;
  p = predict_from_logits(peaked);
  CHECK(p.classes[0] == 5);
  CHECK(p.probabilities.at(0, 5) > 0.99);

  nx::Tensor tie({1, 9});
  tie.at(0, 3) = tie.at(0, 7) = 2.0;
  CHECK(predict_from_logits(tie).classes[0] == 3);

  CHECK_THROWS_AS(predict_from_logits(nx::Tensor({2, 8})), DimensionError);
}

TEST_CASE("probabilities sum to one and predictions ignore logit shifts") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int rep = 0; rep < 200; ++rep) {
    const nx::Tensor z = random_normal({8, 9}, rng, 3.0);
    const auto p = predict_from_logits(z);
    for (std::size_t i = 0; i < 8; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < 9; ++k) s += p.probabilities.at(i, k);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    nx::Tensor moved = z;
    const double c = shift(rng);
    for (auto& v : moved.data()) v += c;
    CHECK(predict_from_logits(moved).classes == p.classes);
  }
}

TEST_CASE("predict validates inputs") {
  std::mt19937_64 rng(5);
  BaselineCnn cnn = build_baseline_cnn(0);
  FusionModel fusion = build_fusion_model(2, 0);
  ClassifierData d;
  d.epochs = random_normal({3, 31, dsp::kEpochSamples}, rng);
  CHECK_THROWS_AS(predict(cnn, d), DimensionError);
  d.epochs = random_normal({3, dsp::kChannels, dsp::kEpochSamples}, rng);
  CHECK(predict(cnn, d).classes.size() == 3);
  CHECK_THROWS_AS(predict(fusion, d), ContractError);
  d.embeddings = random_normal({3, 4, dsp::kEpochSamples}, rng);
  CHECK_THROWS_AS(predict(fusion, d), DimensionError);
  CHECK_THROWS_AS(predict(cnn, d), ContractError);
}

TEST_CASE("training separates a two-class toy problem") {
  const ClassifierData d = separable_toy(40, 6);
  BaselineCnn cnn = build_baseline_cnn(2);
  TrainConfig c;
  c.max_epochs = 50;
  c.batch_size = 8;
  c.seed = 3;
  const auto h = train_classifier(cnn, d, c);
  CHECK(!h.train_loss.empty());
  CHECK(h.val_loss.size() == h.train_loss.size());
  CHECK(accuracy(predict(cnn, d).classes, d.labels) == 1.0);
}

TEST_CASE("zero epochs leave the model unchanged") {
  const ClassifierData d = separable_toy(12, 7);
  BaselineCnn cnn = build_baseline_cnn(2), ref = build_baseline_cnn(2);
  TrainConfig c;
  c.max_epochs = 0;
  const auto h = train_classifier(cnn, d, c);
  CHECK(h.train_loss.empty());
  CHECK(same_parameters(cnn, ref));
}

TEST_CASE("same seed gives identical loss histories") {
  const ClassifierData d = separable_toy(30, 8);
  TrainConfig c;
  c.max_epochs = 4;
  c.batch_size = 8;
  c.seed = 17;
  EegNet a = build_eegnet_baseline(1), b = build_eegnet_baseline(1);
  const auto ha = train_classifier(a, d, c), hb = train_classifier(b, d, c);
  CHECK(ha.train_loss == hb.train_loss);
  CHECK(ha.val_loss == hb.val_loss);
  CHECK(same_parameters(a, b));
}

TEST_CASE("full-batch loss is non-increasing over the first steps") {
  const ClassifierData d = separable_toy(24, 9);
  for (double lr : {1e-3, 3e-4}) {
    BaselineCnn cnn = build_baseline_cnn(4);
    TrainConfig c;
    c.lr = lr;
    c.full_batch = true;
    c.val_fraction = 0.0;
    c.max_epochs = 11;
    const auto h = train_classifier(cnn, d, c);
    REQUIRE(h.train_loss.size() == 11);
    for (std::size_t i = 1; i < h.train_loss.size(); ++i) CHECK(h.train_loss[i] <= h.train_loss[i - 1]);
  }
}

TEST_CASE("early stopping restores the best validation epoch") {
  std::mt19937_64 rng(10);
  ClassifierData d;
  d.epochs = random_normal({40, dsp::kChannels, dsp::kEpochSamples}, rng);
  std::uniform_int_distribution<int> label(0, 8);
  for (int i = 0; i < 40; ++i) d.labels.push_back(label(rng));
  BaselineCnn cnn = build_baseline_cnn(3);
  TrainConfig c;
  c.max_epochs = 200;
  c.patience = 3;
  c.batch_size = 8;
  const auto h = train_classifier(cnn, d, c);
  CHECK(h.stopped_early);
  REQUIRE(!h.val_loss.empty());
  const auto best = std::min_element(h.val_loss.begin(), h.val_loss.end()) - h.val_loss.begin();
  CHECK(static_cast<std::size_t>(best) == h.best_epoch);
  CHECK(h.val_loss.size() == h.best_epoch + 1 + c.patience);
}

TEST_CASE("fusion training requires embeddings and a finite loss") {
  std::mt19937_64 rng(11);
  ClassifierData d = separable_toy(12, 12);
  FusionModel f = build_fusion_model(2, 0), ref = build_fusion_model(2, 0);
  TrainConfig c;
  c.max_epochs = 2;
  CHECK_THROWS_AS(train_classifier(f, d, c), ContractError);
  d.embeddings = random_normal({12, 2, dsp::kEpochSamples}, rng);
  for (auto& v : d.embeddings->data()) v = std::numeric_limits<double>::quiet_NaN();
  try {
    train_classifier(f, d, c);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.last_finite_step() == -1);
  }
  CHECK(same_parameters(f, ref));
  d.labels[0] = 9;
  CHECK_THROWS_AS(train_classifier(f, d, c), LabelError);
}

TEST_CASE("classifier checkpoints round trip bit-exactly") {
  std::mt19937_64 rng(13);
  const auto dir = std::filesystem::temp_directory_path() / "eegscribe_test_models_ckpt";
  std::filesystem::remove_all(dir);
  const nx::Tensor x = random_normal({3, dsp::kChannels, dsp::kEpochSamples}, rng);
  const nx::Tensor e = random_normal({3, 12, dsp::kEpochSamples}, rng);
  for (auto arch : {Architecture::fusion, Architecture::cnn, Architecture::eegnet}) {
    auto m = make_classifier(arch, 12, 21);
    for (auto& [name, t] : m->parameters()) {
      for (auto& v : t->data()) v += 1e-3;  // differ from a fresh build
    }
    const std::string stem = architecture_name(arch);
    save_classifier(dir, stem, *m);
    auto back = load_classifier(dir, stem);
    CHECK(back->architecture() == arch);
    CHECK(same_parameters(*m, *back));
    const std::optional<nx::Tensor> embed = m->uses_embeddings() ? std::optional<nx::Tensor>(e) : std::nullopt;
    CHECK(logits_of(*m, x, embed).identical(logits_of(*back, x, embed)));
  }
  CHECK_THROWS_AS(load_classifier(dir, "missing"), IoError);
  std::filesystem::remove_all(dir);
}
