#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "eegscribe/errors.hpp"
#include "eegscribe/eval/cv.hpp"
#include "eegscribe/eval/metrics.hpp"
#include "eegscribe/eval/projection.hpp"
#include "eegscribe/numerics/grad_check.hpp"
#include "support/random.hpp"

using namespace eegscribe;
using namespace eegscribe::eval;
using testing::random_normal;

namespace {

// Confusion-matrix route, written independently of compute_metrics.
Metrics brute_force_metrics(const std::vector<int>& pred, const std::vector<int>& truth, int k) {
  std::vector<std::vector<long>> cm(static_cast<std::size_t>(k), std::vector<long>(static_cast<std::size_t>(k), 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++cm[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  long trace = 0;
  double f1 = 0.0;
  for (int c = 0; c < k; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    long row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm[cc][static_cast<std::size_t>(j)];
      col += cm[static_cast<std::size_t>(j)][cc];
    }
    trace += cm[cc][cc];
    f1 += row + col == 0 ? 0.0 : static_cast<double>(2 * cm[cc][cc]) / static_cast<double>(row + col);
  }
  return {static_cast<double>(trace) / static_cast<double>(pred.size()), f1 / static_cast<double>(k)};
}

Eigen::MatrixXd to_eigen(const nx::Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.at(i, j);
  }
  return m;
}

nx::Tensor from_eigen(const Eigen::MatrixXd& m) {
  nx::Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) t.at(i, j) = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return t;
}

Eigen::MatrixXd random_orthogonal(std::size_t d, std::mt19937_64& rng) {
  return Eigen::HouseholderQR<Eigen::MatrixXd>(to_eigen(random_normal({d, d}, rng))).householderQ();
}

struct Blobs {
  nx::Tensor x;
  std::vector<int> labels;
};

Blobs two_blobs(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Blobs b{random_normal({n, d}, rng), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i < n / 2 ? 0 : 1;
    b.labels.push_back(label);
    b.x.at(i, 0) += label == 0 ? -8.0 : 8.0;
  }
  return b;
}

// Five folds, one trial of each class per fold; epochs are tiny placeholders.
std::vector<dsp::EpochSet> balanced_folds() {
  std::vector<dsp::EpochSet> folds(5);
  std::size_t id = 0;
  for (auto& f : folds) {
    f.epochs = nx::Tensor({9, 1, 2});
    f.trajectories = nx::Tensor({9, 4, 2});
    for (int c = 0; c < 9; ++c) {
      f.labels.push_back(c);
      f.trial_ids.push_back(id++);
    }
  }
  return folds;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("metric examples") {
  std::vector<int> all{0, 1, 2, 3, 4, 5, 6, 7, 8, 4};
  auto m = compute_metrics(all, all);
  CHECK(m.accuracy == 1.0);
  CHECK(m.macro_f1 == 1.0);

  m = compute_metrics(std::vector<int>{0, 0}, std::vector<int>{0, 1}, 2);
  CHECK(m.accuracy == 0.5);
  CHECK(m.macro_f1 == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  std::vector<int> shifted;
  for (int v : all) shifted.push_back((v + 1) % 9);
  m = compute_metrics(shifted, all);
  CHECK(m.accuracy == 0.0);
  CHECK(m.macro_f1 == 0.0);

  CHECK_THROWS_AS(compute_metrics(std::vector<int>{}, std::vector<int>{}), ContractError);
  CHECK_THROWS_AS(compute_metrics(std::vector<int>{1}, std::vector<int>{1, 2}), ContractError);
  CHECK_THROWS_AS(compute_metrics(std::vector<int>{9}, std::vector<int>{1}), LabelError);
}

TEST_CASE("metrics equal a brute-force confusion matrix") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> cls(0, 8), len(1, 1000);
  std::bernoulli_distribution correct(0.6);
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = len(rng);
    std::vector<int> truth, pred;
    for (int i = 0; i < n; ++i) {
      truth.push_back(cls(rng));
      pred.push_back(correct(rng) ? truth.back() : cls(rng));
    }
    const Metrics a = compute_metrics(pred, truth), b = brute_force_metrics(pred, truth, 9);
    REQUIRE(a.accuracy == b.accuracy);
    REQUIRE(a.macro_f1 == b.macro_f1);
  }
}

TEST_CASE("summaries use sample standard deviation") {
  FoldReport r;
  for (double a : {0.5, 0.75, 1.0, 0.25, 0.5}) r.per_fold.push_back({a, a / 2});
  summarize(r);
  CHECK(r.mean_acc == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(r.std_acc == doctest::Approx(std::sqrt(0.325 / 4.0)).epsilon(1e-14));
  CHECK(r.mean_f1 == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("silhouette of two tight pairs") {
  nx::Tensor p = nx::Tensor::matrix({{0.0}, {1.0}, {10.0}, {11.0}});
  const std::vector<int> l{0, 0, 1, 1};
  // Points 0 and 3: a = 1, b = 10.5; points 1 and 2: a = 1, b = 9.5.
  const double expected = (2.0 * (9.5 / 10.5) + 2.0 * (8.5 / 9.5)) / 4.0;
  CHECK(silhouette_score(p, l) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("pca on a line explains all variance") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  nx::Tensor x({50, 3});
  for (std::size_t i = 0; i < 50; ++i) {
    const double t = nd(rng);
    x.at(i, 0) = 1.0 + 2.0 * t;
    x.at(i, 1) = -3.0 + t;
    x.at(i, 2) = 0.5 * t;
  }
  const auto r = pca_project(x, 2);
  CHECK(r.explained_variance_ratio[0] >= 0.99999);
  CHECK_THROWS_AS(pca_project(x, 4), ContractError);
  CHECK_THROWS_AS(pca_project(nx::Tensor({1, 3}), 1), ContractError);
}

TEST_CASE("pca components are orthonormal and match the covariance eigendecomposition") {
  std::mt19937_64 rng(3);
  const std::size_t n = 120, d = 7, k = 4;
  Eigen::MatrixXd mix = to_eigen(random_normal({d, d}, rng));
  const nx::Tensor x = from_eigen(to_eigen(random_normal({n, d}, rng)) * mix);
  const auto r = pca_project(x, k);
  const Eigen::MatrixXd v = to_eigen(r.components);
  CHECK((v.transpose() * v - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-8);

  const Eigen::MatrixXd xm = to_eigen(x);
  const Eigen::MatrixXd centred = xm.rowwise() - xm.colwise().mean();
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd lambda = eig.eigenvalues().reverse();
  for (std::size_t c = 0; c < k; ++c) {
    CHECK(r.explained_variance[c] == doctest::Approx(lambda(static_cast<Eigen::Index>(c))).epsilon(1e-10));
    const Eigen::VectorXd e = eig.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - c));
    CHECK(std::abs(std::abs(e.dot(v.col(static_cast<Eigen::Index>(c)))) - 1.0) < 1e-8);
  }
  // Reconstruction error equals the discarded eigenvalues.
  const Eigen::MatrixXd recon = to_eigen(r.coords) * v.transpose();
  const double err = (centred - recon).squaredNorm() / static_cast<double>(n - 1);
  const double discarded = lambda.tail(static_cast<Eigen::Index>(d - k)).sum();
  CHECK(std::abs(err - discarded) < 1e-6);
}

TEST_CASE("pca explained variance is rotation invariant") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    const nx::Tensor x = from_eigen(to_eigen(random_normal({60, 6}, rng)) * to_eigen(random_normal({6, 6}, rng)));
    const nx::Tensor rotated = from_eigen(to_eigen(x) * random_orthogonal(6, rng));
    const auto a = pca_project(x, 6), b = pca_project(rotated, 6);
    for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(a.explained_variance[c] - b.explained_variance[c]) < 1e-9);
  }
}

TEST_CASE("affinity rows hit the target perplexity") {
  const auto b = two_blobs(90, 5, 5);
  nx::Tensor d({90, 90});
  for (std::size_t i = 0; i < 90; ++i) {
    for (std::size_t j = 0; j < 90; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += (b.x.at(i, k) - b.x.at(j, k)) * (b.x.at(i, k) - b.x.at(j, k));
      d.at(i, j) = s;
    }
  }
  for (double perp : {5.0, 12.5, 29.0}) {
    const auto a = conditional_affinities(d, perp);
    for (std::size_t i = 0; i < 90; ++i) {
      double s = 0.0, h = 0.0;
      for (std::size_t j = 0; j < 90; ++j) {
        const double p = a.conditional.at(i, j);
        s += p;
        if (p > 0.0) h -= p * std::log(p);
      }
      CHECK(a.conditional.at(i, i) == 0.0);
      CHECK(std::abs(s - 1.0) < 1e-12);
      CHECK(std::abs(std::exp(h) - perp) < 1e-5);
      CHECK(std::abs(a.perplexities[i] - perp) < 1e-5);
    }
  }
}

TEST_CASE("t-SNE KL gradient matches central differences") {
  std::mt19937_64 rng(6);
  const auto b = two_blobs(12, 3, 7);
  nx::Tensor d({12, 12});
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t j = 0; j < 12; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += (b.x.at(i, k) - b.x.at(j, k)) * (b.x.at(i, k) - b.x.at(j, k));
      d.at(i, j) = s;
    }
  }
  const nx::Tensor p = joint_affinities(conditional_affinities(d, 3.0).conditional);
  for (int point = 0; point < 10; ++point) {
    auto r = nx::grad_check([&p](nx::Graph&, std::span<const nx::Var> v) { return tsne_kl(v[0], p); },
                            {random_normal({12, 2}, rng)}, 1e-5, 1e-6, static_cast<std::uint64_t>(point));
    CHECK_MESSAGE(r.passed, r.summary());
  }
}

TEST_CASE("t-SNE separates two blobs and is reproducible") {
  const auto b = two_blobs(200, 10, 8);
  TsneConfig c;
  c.seed = 3;
  const auto r = tsne_project(b.x, c);
  REQUIRE(r.coords.shape() == nx::Shape{200, 2});
  const double s = silhouette_score(r.coords, b.labels);
  MESSAGE("silhouette " << s << " final KL " << r.kl);
  CHECK(s > 0.5);
  CHECK(r.kl >= 0.0);
  for (double perp : r.perplexities) CHECK(std::abs(perp - 30.0) < 1e-5);

  // Moving average (window 50) of KL over the final 200 iterations never rises.
  const auto& kl = r.kl_history;
  REQUIRE(kl.size() == c.iters);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t end = kl.size() - 200; end <= kl.size(); ++end) {
    double avg = 0.0;
    for (std::size_t i = end - 50; i < end; ++i) avg += kl[i] / 50.0;
    CHECK(avg <= prev + 1e-12);
    prev = avg;
  }

  const auto again = tsne_project(b.x, c);
  CHECK(again.coords.identical(r.coords));
}

TEST_CASE("t-SNE rejects infeasible perplexity") {
  const auto b = two_blobs(40, 3, 9);
  TsneConfig c;
  c.perplexity = 4.0;
  CHECK_THROWS_AS(tsne_project(b.x, c), ParameterError);
  c.perplexity = 13.5;
  CHECK_THROWS_AS(tsne_project(b.x, c), ParameterError);
  c.perplexity = 13.0;
  c.iters = 5;
  CHECK_NOTHROW(tsne_project(b.x, c));
}

TEST_CASE("cross-validation with an oracle model is perfect") {
  const auto folds = balanced_folds();
  const auto r = run_cv(folds, {"oracle", models::Architecture::cnn, 0},
                        [](const dsp::EpochSet&, const dsp::EpochSet& test, int) { return test.labels; });
  REQUIRE(r.per_fold.size() == 5);
  for (const auto& m : r.per_fold) CHECK(m.accuracy == 1.0);
  CHECK(r.mean_acc == 1.0);
  CHECK(r.std_acc == 0.0);
}

TEST_CASE("majority-class predictor sits at chance on balanced folds") {
  const auto folds = balanced_folds();
  const auto r = run_cv(folds, {"majority", models::Architecture::cnn, 0},
                        [](const dsp::EpochSet& train, const dsp::EpochSet& test, int) {
                          std::vector<int> counts(9, 0);
                          for (int l : train.labels) ++counts[static_cast<std::size_t>(l)];
                          const int top = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
                          return std::vector<int>(test.size(), top);
                        });
  CHECK(r.mean_acc == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("aggregates match a hand recomputation") {
  const auto folds = balanced_folds();
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> cls(0, 8);
  const auto r = run_cv(folds, {"random", models::Architecture::cnn, 0},
                        [&](const dsp::EpochSet&, const dsp::EpochSet& test, int) {
                          std::vector<int> out;
                          for (std::size_t i = 0; i < test.size(); ++i) out.push_back(cls(rng));
                          return out;
                        });
  double m = 0.0, s = 0.0;
  for (const auto& f : r.per_fold) m += f.accuracy / 5.0;
  for (const auto& f : r.per_fold) s += (f.accuracy - m) * (f.accuracy - m) / 4.0;
  CHECK(std::abs(r.mean_acc - m) < 1e-12);
  CHECK(std::abs(r.std_acc - std::sqrt(s)) < 1e-12);
}

TEST_CASE("a test trial injected into training is a hard error") {
  auto folds = balanced_folds();
  // Copy trial 3 of fold 0 into fold 2.
  folds[2].trial_ids[5] = folds[0].trial_ids[3];
  bool called = false;
  CHECK_THROWS_AS(run_cv(folds, {"leaky", models::Architecture::cnn, 0},
                         [&](const dsp::EpochSet&, const dsp::EpochSet& test, int) {
                           called = true;
                           return test.labels;
                         }),
                  LeakageError);
  CHECK_FALSE(called);
  CHECK_THROWS_AS(run_cv(std::vector<dsp::EpochSet>(4), {"x", models::Architecture::cnn, 0},
                         [](const dsp::EpochSet&, const dsp::EpochSet& t, int) { return t.labels; }),
                  ContractError);
}

TEST_CASE("model specs pair fusion with an embedding width") {
  CHECK_NOTHROW((ModelSpec{"f", models::Architecture::fusion, 4}.validate()));
  CHECK_THROWS_AS((ModelSpec{"f", models::Architecture::fusion, 0}.validate()), ParameterError);
  CHECK_THROWS_AS((ModelSpec{"c", models::Architecture::cnn, 4}.validate()), ParameterError);
}

TEST_CASE("classifier runner trains per fold deterministically") {
  std::mt19937_64 rng(11);
  std::vector<dsp::EpochSet> folds(5);
  std::size_t id = 0;
  for (auto& f : folds) {
    f.epochs = random_normal({9, dsp::kChannels, dsp::kEpochSamples}, rng);
    f.trajectories = nx::Tensor({9, dsp::kKinematicRows, dsp::kEpochSamples});
    for (int c = 0; c < 9; ++c) {
      f.labels.push_back(c);
      f.trial_ids.push_back(id++);
    }
  }
  cebra::CebraConfig cc;
  cc.steps = 2;
  cc.batch_size = 64;
  models::TrainConfig tc;
  tc.max_epochs = 2;
  const ModelSpec spec{"fusion2", models::Architecture::fusion, 2};
  const auto a = run_cv(folds, spec, classifier_runner(spec, cc, tc, 5));
  const auto b = run_cv(folds, spec, classifier_runner(spec, cc, tc, 5));
  for (std::size_t k = 0; k < 5; ++k) CHECK(a.per_fold[k].accuracy == b.per_fold[k].accuracy);
  CHECK(fold_seed(5, 0, 1) != fold_seed(5, 1, 1));
  CHECK(fold_seed(5, 0, 1) != fold_seed(5, 0, 2));
}

TEST_CASE("binned features average equal time bins") {
  nx::Tensor t({1, 2, 6});
  for (std::size_t u = 0; u < 6; ++u) {
    t.at(0, 0, u) = static_cast<double>(u);
    t.at(0, 1, u) = 10.0;
  }
  const nx::Tensor f = binned_features(t, 3);
  REQUIRE(f.shape() == nx::Shape{1, 6});
  CHECK(f.at(0, 0) == 0.5);
  CHECK(f.at(0, 1) == 2.5);
  CHECK(f.at(0, 2) == 4.5);
  CHECK(f.at(0, 4) == 10.0);
  CHECK_THROWS_AS(binned_features(t, 7), ParameterError);
}

TEST_CASE("linear probe separates Gaussian clusters") {
  std::mt19937_64 rng(12);
  const nx::Tensor centres = random_normal({9, 6}, rng, 4.0);
  auto sample = [&](std::size_t per_class, std::vector<int>& labels) {
    nx::Tensor x = random_normal({per_class * 9, 6}, rng, 0.3);
    for (std::size_t i = 0; i < x.dim(0); ++i) {
      const std::size_t c = i % 9;
      labels.push_back(static_cast<int>(c));
      for (std::size_t j = 0; j < 6; ++j) x.at(i, j) += centres.at(c, j);
    }
    return x;
  };
  std::vector<int> ytr, yte;
  const nx::Tensor xtr = sample(10, ytr), xte = sample(5, yte);
  CHECK(compute_metrics(linear_probe(xtr, ytr, xte), yte).accuracy == 1.0);
}

TEST_CASE("report files are deterministic and recomputable") {
  const auto dir = std::filesystem::temp_directory_path() / "eegscribe_test_report";
  std::filesystem::remove_all(dir);
  FoldReport r{"cnn", 0, {{0.1, 0.2}, {0.3, 0.25}, {0.7, 0.6}, {0.9, 0.8}, {1.0 / 3.0, 0.1}}};
  summarize(r);
  FoldReport f = r;
  f.model = "fusion";
  f.d_embed = 16;
  const auto b = two_blobs(10, 2, 13);
  ProjectionResult pr = pca_project(b.x, 2);
  auto files = emit_report(dir, {r, f});
  CHECK(files.size() == 2);
  const std::string first = slurp(dir / "results_aggregate.csv");
  files = emit_report(dir, {r, f}, {{"pca", pr, b.labels}});
  CHECK(files.size() == 3);
  CHECK(slurp(dir / "results_aggregate.csv") == first);

  std::ifstream in(dir / "results_per_fold.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "model,d_embed,fold,accuracy,macro_f1");
  std::vector<double> acc;
  while (std::getline(in, line)) {
    if (line.rfind("cnn,", 0) == 0) acc.push_back(std::stod(line.substr(line.find(',', 6) + 1)));
  }
  REQUIRE(acc.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) CHECK(acc[k] == r.per_fold[k].accuracy);

  std::ifstream proj(dir / "projection_pca.csv");
  std::getline(proj, line);
  CHECK(line == "index,dim1,dim2,label");

  std::ofstream(dir / "blocker") << "x";
  CHECK_THROWS_AS(emit_report(dir / "blocker" / "sub", {r}), IoError);
  std::filesystem::remove_all(dir);
}
