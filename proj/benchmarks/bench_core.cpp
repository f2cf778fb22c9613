#include <benchmark/benchmark.h>

#include <random>

#include "dsct/forward.hpp"
#include "dsct/geometry.hpp"
#include "dsct/metrics.hpp"
#include "dsct/opmt.hpp"
#include "dsct/phantom.hpp"
#include "dsct/spectra.hpp"

namespace {

using namespace dsct;

// Reference distances, detector span held at 51.2 while n_D and n_R scale.
GeometrySpec spec_for(std::size_t grid) {
  GeometrySpec s;
  s.detectors = 2 * grid;
  s.detector_size = 51.2 / static_cast<double>(s.detectors);
  s.grid_size = grid;
  return s;
}

struct Fixture {
  GeometrySpec spec;
  FanBeamGeometry geom;
  ImageGrid grid;
  ProjectionMatrix R;
  EnergyBins low, high;
  ImagePair truth;
  SinogramPair sino;

  explicit Fixture(std::size_t n)
      : spec(spec_for(n)), geom(spec.geometry()), grid(spec.grid()), R(build_projection_matrix(geom, grid)) {
    const auto m = load_materials(bundled_materials());
    low = prepare_bins(load_spectrum(bundled_low_spectrum()), m);
    high = prepare_bins(load_spectrum(bundled_high_spectrum()), m);
    truth = generate_phantom(grid, fov_radius(geom), 1);
    sino = forward_project(truth, R, geom, low, high);
  }
};

void BM_BuildMatrix(benchmark::State& state) {
  const auto spec = spec_for(static_cast<std::size_t>(state.range(0)));
  const auto geom = spec.geometry();
  const auto grid = spec.grid();
  for (auto _ : state) benchmark::DoNotOptimize(build_projection_matrix(geom, grid));
}
BENCHMARK(BM_BuildMatrix)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_ForwardProject(benchmark::State& state) {
  const Fixture fx(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward_project(fx.truth, fx.R, fx.geom, fx.low, fx.high));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * fx.R.rows()));
}
BENCHMARK(BM_ForwardProject)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_OpmtSweep(benchmark::State& state) {
  const Fixture fx(static_cast<std::size_t>(state.range(0)));
  const ReconProblem problem(fx.sino, fx.R, fx.low, fx.high);
  OpmtConfig c;
  c.sweeps = 1;
  for (auto _ : state) benchmark::DoNotOptimize(run_opmt(problem, c));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * fx.R.rows()));
}
BENCHMARK(BM_OpmtSweep)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_EartSweep(benchmark::State& state) {
  const Fixture fx(static_cast<std::size_t>(state.range(0)));
  const ReconProblem problem(fx.sino, fx.R, fx.low, fx.high);
  OpmtConfig c;
  c.sweeps = 1;
  for (auto _ : state) benchmark::DoNotOptimize(run_eart(problem, c));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * fx.R.rows()));
}
BENCHMARK(BM_EartSweep)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image a(n, n), b(n, n);
  for (auto& v : a.values) v = u(rng);
  for (auto& v : b.values) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b, 1.0));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256);

}  // namespace
BENCHMARK_MAIN();
