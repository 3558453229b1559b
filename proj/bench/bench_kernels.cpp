// Serial reference vs blocked/OpenMP kernels.
//
//   ./tdlab_bench --benchmark_filter=Features
//
// Thread count follows TDLAB_WORKERS.

#include <benchmark/benchmark.h>

#include "tdlab/kernels.hpp"
#include "tdlab/nnsim.hpp"
#include "tdlab/parallel.hpp"
#include "tdlab/rng.hpp"
#include "tdlab/spectral.hpp"

using namespace tdlab;
using namespace tdlab::spectral;
using namespace tdlab::nnsim;

namespace {

struct FeatureData {
  Eigen::MatrixXd X, Theta;
  FeatureData(int n, int D, int P) : X(gaussian_matrix(n, D, 1)), Theta(gaussian_matrix(P, D, 2)) {}
};

void BM_FeaturesReference(benchmark::State& st) {
  const FeatureData d(static_cast<int>(st.range(0)), 100, 1000);
  const auto act = ActivationSpec::tanh();
  for (auto _ : st) benchmark::DoNotOptimize(kernels::features_reference(d.X, d.Theta, act));
  st.SetItemsProcessed(st.iterations() * st.range(0) * 1000);
}

void BM_FeaturesSerial(benchmark::State& st) {
  const FeatureData d(static_cast<int>(st.range(0)), 100, 1000);
  const auto act = ActivationSpec::tanh();
  for (auto _ : st) benchmark::DoNotOptimize(kernels::features(d.X, d.Theta, act, false));
  st.SetItemsProcessed(st.iterations() * st.range(0) * 1000);
}

void BM_FeaturesParallel(benchmark::State& st) {
  const FeatureData d(static_cast<int>(st.range(0)), 100, 1000);
  const auto act = ActivationSpec::tanh();
  for (auto _ : st) benchmark::DoNotOptimize(kernels::features(d.X, d.Theta, act, true));
  st.SetItemsProcessed(st.iterations() * st.range(0) * 1000);
}

void BM_GramReference(benchmark::State& st) {
  const auto Z = gaussian_matrix(st.range(0), 300, 3);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::gram_cols_reference(Z));
}

void BM_GramSerial(benchmark::State& st) {
  const auto Z = gaussian_matrix(st.range(0), 300, 3);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::gram_cols(Z, false));
}

void BM_GramParallel(benchmark::State& st) {
  const auto Z = gaussian_matrix(st.range(0), 300, 3);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::gram_cols(Z, true));
}

struct MlpData {
  MLP net;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  explicit MlpData(int n)
      : net(MLP::initialized(49, 50, ActivationSpec::tanh(), 4)),
        X(gaussian_matrix(n, 49, 5)),
        y(gaussian_vector(n, 6)) {}
};

void BM_MlpGradientReference(benchmark::State& st) {
  const MlpData d(static_cast<int>(st.range(0)));
  Eigen::VectorXd g;
  for (auto _ : st) benchmark::DoNotOptimize(loss_and_gradient_reference(d.net, d.X, d.y, g));
}

void BM_MlpGradientSerial(benchmark::State& st) {
  const MlpData d(static_cast<int>(st.range(0)));
  Eigen::VectorXd g;
  for (auto _ : st) benchmark::DoNotOptimize(loss_and_gradient(d.net, d.X, d.y, g, false));
}

void BM_MlpGradientParallel(benchmark::State& st) {
  const MlpData d(static_cast<int>(st.range(0)));
  Eigen::VectorXd g;
  for (auto _ : st) benchmark::DoNotOptimize(loss_and_gradient(d.net, d.X, d.y, g, true));
}

void spectrum_bench(benchmark::State& st, bool parallel) {
  const auto p = SpectralParams::from_activation(ActivationSpec::tanh(), 100, 1000, 1000);
  AnalyticOptions opt;
  opt.parallel = parallel;
  for (auto _ : st) benchmark::DoNotOptimize(analytic_spectrum(p, {}, opt));
}

void BM_AnalyticSpectrumSerial(benchmark::State& st) { spectrum_bench(st, false); }
void BM_AnalyticSpectrumParallel(benchmark::State& st) { spectrum_bench(st, true); }

}  // namespace

BENCHMARK(BM_FeaturesReference)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FeaturesSerial)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FeaturesParallel)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GramReference)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GramSerial)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GramParallel)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MlpGradientReference)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MlpGradientSerial)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MlpGradientParallel)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AnalyticSpectrumSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AnalyticSpectrumParallel)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  init_workers_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
