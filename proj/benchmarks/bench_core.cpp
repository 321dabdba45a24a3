#include <benchmark/benchmark.h>

#include <algorithm>
#include <random>

#include "cascadeflow/cascade.hpp"
#include "cascadeflow/influence.hpp"
#include "cascadeflow/synth.hpp"
#include "cascadeflow/timeline.hpp"

using namespace cascadeflow;

namespace {

std::vector<std::uint64_t> counts_desc(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint64_t> v(n);
  for (auto& x : v) x = rng() % 100'000 >> (rng() % 16);
  std::sort(v.rbegin(), v.rend());
  return v;
}

const SynthData& data() {
  static const SynthData d = [] {
    SynthConfig c;
    c.n_users = 20'000;
    c.n_roots = 1'000;
    c.seed = 3;
    return generate(c);
  }();
  return d;
}

}  // namespace

static void BM_HIndex(benchmark::State& state) {
  const auto v = counts_desc(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(h_index(v));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_HIndex)->Arg(100)->Arg(10'000);

static void BM_GIndex(benchmark::State& state) {
  const auto v = counts_desc(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(g_index(v));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GIndex)->Arg(100)->Arg(10'000);

static void BM_BuildCascades(benchmark::State& state) {
  const auto& d = data();
  const UserSet official(d.directory.size());
  const auto workers = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto b = build_cascades(d.posts, d.reposts, d.graph, official, workers);
    benchmark::DoNotOptimize(b.cascades.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.reposts.size()));
}
BENCHMARK(BM_BuildCascades)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

static void BM_StructuralVirality(benchmark::State& state) {
  const auto& d = data();
  const auto b = build_cascades(d.posts, d.reposts, d.graph, UserSet(d.directory.size()));
  for (auto _ : state) {
    double sum = 0;
    for (const auto& c : b.cascades) sum += structural_virality(c).value_or(0.0);
    benchmark::DoNotOptimize(sum);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.reposts.size()));
}
BENCHMARK(BM_StructuralVirality)->Unit(benchmark::kMillisecond);

static void BM_Exposures(benchmark::State& state) {
  const auto& d = data();
  const UserSet official(d.directory.size());
  const auto b = build_cascades(d.posts, d.reposts, d.graph, official);
  const auto active = active_reposters(b.cascades, d.directory.size());
  ExposureBuilder builder(d.graph, official, active, {TimeWindow::first(6 * kHour), false});
  std::vector<Outcome> out;
  std::int64_t views = 0;
  for (auto _ : state) {
    views = 0;
    for (const auto& c : b.cascades) {
      out.clear();
      builder.build(c, out);
      views += static_cast<std::int64_t>(out.size());
    }
  }
  state.SetItemsProcessed(state.iterations() * views);
}
BENCHMARK(BM_Exposures)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
