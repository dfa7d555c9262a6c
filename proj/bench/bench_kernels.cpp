// Serial reference vs OpenMP kernel for each parallelised hot path.
// Run with OMP_NUM_THREADS set to compare thread counts.
#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "fdvv/compensation.hpp"
#include "fdvv/model.hpp"
#include "fdvv/optimizer.hpp"
#include "fdvv/smoothing.hpp"
#include "fdvv/synthetic.hpp"

using namespace fdvv;

namespace {

std::vector<double> noisy_signal(std::size_t n) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 2.0);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = 50.0 * std::sin(static_cast<double>(i) * 0.002) + noise(rng);
  return x;
}

template <bool Parallel>
void BM_GaussianSmooth(benchmark::State& state) {
  const auto x = noisy_signal(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto y = Parallel ? parallel::gaussian_smooth(x, 40.0) : serial::gaussian_smooth(x, 40.0);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_SelectOrder(benchmark::State& state) {
  const auto seg = curve_segment(random_design(clear_like_profile(), 1, 15), 4.0, 100.0, 0.1, 1);
  for (auto _ : state) {
    auto sel = Parallel ? parallel::select_order(seg, 4, 30) : serial::select_order(seg, 4, 30);
    benchmark::DoNotOptimize(sel.best_k);
  }
}

template <bool Parallel>
void BM_Acquisition(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> z(30, std::vector<double>(kDesignDims));
  std::vector<double> y(30);
  for (std::size_t i = 0; i < z.size(); ++i) {
    for (auto& c : z[i]) c = u(rng);
    y[i] = 60.0 + 40.0 * u(rng);
  }
  GaussianProcess gp;
  gp.fit_auto(z, y);
  const auto candidates = quasi_random_candidates(static_cast<std::size_t>(state.range(0)), kDesignDims, 9);
  for (auto _ : state) {
    auto a = Parallel ? parallel::acquisition(gp, candidates, 60.0, 0.01)
                      : serial::acquisition(gp, candidates, 60.0, 0.01);
    benchmark::DoNotOptimize(a.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_CompensateModel(benchmark::State& state) {
  const auto model = reference_model(clear_like_profile());
  const VirtualPlant plant(default_plant_params());
  CompensateRequest req;
  req.runs = 4;
  for (auto _ : state) {
    auto r = Parallel ? parallel::compensate_model(model, plant, req) : serial::compensate_model(model, plant, req);
    benchmark::DoNotOptimize(r.table.curves.data());
  }
}

}  // namespace

BENCHMARK(BM_GaussianSmooth<false>)->Name("gaussian_smooth/serial")->Arg(20000)->Arg(200000);
BENCHMARK(BM_GaussianSmooth<true>)->Name("gaussian_smooth/parallel")->Arg(20000)->Arg(200000);
BENCHMARK(BM_SelectOrder<false>)->Name("select_order/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SelectOrder<true>)->Name("select_order/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Acquisition<false>)->Name("acquisition/serial")->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Acquisition<true>)->Name("acquisition/parallel")->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CompensateModel<false>)->Name("compensate_model/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CompensateModel<true>)->Name("compensate_model/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
