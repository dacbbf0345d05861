#include <random>

#include <benchmark/benchmark.h>

#include "eegscribe/cebra/cebra.hpp"
#include "eegscribe/dsp/filter.hpp"
#include "eegscribe/dsp/ica.hpp"
#include "eegscribe/eval/projection.hpp"
#include "eegscribe/models/models.hpp"
#include "eegscribe/numerics/ops.hpp"

using namespace eegscribe;

namespace {

nx::Tensor normal(nx::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  nx::Tensor t(std::move(shape));
  for (double& v : t.data()) v = nd(rng);
  return t;
}

void BM_Conv1dForwardBackward(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0));
  const nx::Tensor x = normal({b, 16, 250}, 1);
  nx::Tensor w = normal({32, 16, 11}, 2), bias({32});
  w.set_requires_grad(true);
  bias.set_requires_grad(true);
  for (auto _ : state) {
    nx::Graph g;
    nx::Var y = nx::conv1d(g.input(x), g.parameter(w), g.parameter(bias), nx::Conv1dOptions{2, 5, 5, 1});
    g.backward(nx::mean(nx::square(y)));
    benchmark::DoNotOptimize(w.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b));
}
BENCHMARK(BM_Conv1dForwardBackward)->Arg(16)->Arg(64);

void BM_Filtfilt(benchmark::State& state) {
  const auto f = dsp::design_butter_bandpass(1.0, 45.0, 4);
  const nx::Tensor x = normal({static_cast<std::size_t>(state.range(0))}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(dsp::filtfilt(f, x.data()));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Filtfilt)->Arg(10'000)->Arg(100'000);

void BM_FastIca(benchmark::State& state) {
  const nx::Tensor mix = normal({8, 8}, 4), src = normal({8, 10'000}, 5);
  nx::Tensor x({8, 10'000});
  for (std::size_t c = 0; c < 8; ++c) {
    for (std::size_t t = 0; t < 10'000; ++t) {
      for (std::size_t k = 0; k < 8; ++k) x.at(c, t) += mix.at(c, k) * std::pow(src.at(k, t), 3);
    }
  }
  dsp::IcaOptions opt;
  opt.n_components = 8;
  for (auto _ : state) benchmark::DoNotOptimize(dsp::fast_ica(x, opt));
}
BENCHMARK(BM_FastIca)->Unit(benchmark::kMillisecond);

void BM_TsneIterations(benchmark::State& state) {
  const nx::Tensor x = normal({static_cast<std::size_t>(state.range(0)), 10}, 6);
  eval::TsneConfig c;
  c.iters = 50;
  for (auto _ : state) benchmark::DoNotOptimize(eval::tsne_project(x, c));
}
BENCHMARK(BM_TsneIterations)->Arg(200)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_CebraStep(benchmark::State& state) {
  const nx::Tensor epochs = normal({36, dsp::kChannels, dsp::kEpochSamples}, 7);
  cebra::AuxiliaryVariables aux;
  aux.continuous = nx::Tensor({36 * dsp::kEpochSamples, dsp::kKinematicRows});
  for (int i = 0; i < 36; ++i) aux.discrete.insert(aux.discrete.end(), dsp::kEpochSamples, i % dsp::kNumClasses);
  cebra::CebraConfig c;
  c.steps = 1;
  c.batch_size = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(cebra::train_cebra(epochs, aux, c));
}
BENCHMARK(BM_CebraStep)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_FusionPredict(benchmark::State& state) {
  models::FusionModel m(16, 1);
  const models::ClassifierData data{normal({64, dsp::kChannels, dsp::kEpochSamples}, 8),
                                    normal({64, 16, dsp::kEpochSamples}, 9), std::vector<int>(64, 0)};
  for (auto _ : state) benchmark::DoNotOptimize(models::predict(m, data));
}
BENCHMARK(BM_FusionPredict)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
