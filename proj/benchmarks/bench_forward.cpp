#include <random>

#include <benchmark/benchmark.h>

#include "lcp/model.hpp"
#include "lcp/rng.hpp"

namespace {

using lcp::ad::Tensor;

// Full-size model: np=90, nl=10, d=512, 6 layers, 2x4 antennas.
lcp::ModelConfig full_size(lcp::Mixer mixer) {
  lcp::ModelConfig c;
  c.mixer = mixer;
  return c;
}

Tensor random_input(const lcp::ModelConfig& c) {
  lcp::Rng rng = lcp::make_stream(11, "bench-input");
  std::normal_distribution<double> g;
  std::vector<double> x(static_cast<std::size_t>(c.np) * c.features());
  for (auto& v : x) v = g(rng);
  return Tensor::from({static_cast<std::size_t>(c.np), static_cast<std::size_t>(c.features())},
                      std::move(x));
}

void forward_bench(benchmark::State& state, lcp::Mixer mixer) {
  const auto cfg = full_size(mixer);
  lcp::Rng rng = lcp::make_stream(1, "init");
  const auto params = lcp::init_params(cfg, rng);
  const Tensor x = random_input(cfg);
  lcp::ad::NoGradGuard no_grad;
  for (auto _ : state) {
    Tensor y = lcp::forward(x, params);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.counters["mults"] = static_cast<double>(lcp::count_mults(cfg).total());
  state.counters["mults/s"] = benchmark::Counter(
      static_cast<double>(lcp::count_mults(cfg).total()), benchmark::Counter::kIsIterationInvariantRate);
}

void mixer_bench(benchmark::State& state, lcp::Mixer mixer) {
  const auto cfg = full_size(mixer);
  lcp::Rng rng = lcp::make_stream(1, "init");
  const auto params = lcp::init_params(cfg, rng);
  lcp::Rng xr = lcp::make_stream(12, "bench-input");
  std::normal_distribution<double> g;
  std::vector<double> v(static_cast<std::size_t>(cfg.np) * cfg.d);
  for (auto& e : v) e = g(xr);
  const Tensor f = Tensor::from({static_cast<std::size_t>(cfg.np), static_cast<std::size_t>(cfg.d)},
                                std::move(v));
  lcp::ad::NoGradGuard no_grad;
  const auto& layer = params.layers.front();
  for (auto _ : state) {
    Tensor y = mixer == lcp::Mixer::tmlp ? lcp::tmlp_forward(f, layer.tmlp)
                                         : lcp::attention_forward(f, layer.attn, cfg.heads);
    benchmark::DoNotOptimize(y.data().data());
  }
}

}  // namespace

BENCHMARK_CAPTURE(forward_bench, linformer, lcp::Mixer::tmlp)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(forward_bench, attention, lcp::Mixer::attention)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(mixer_bench, tmlp, lcp::Mixer::tmlp)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(mixer_bench, attention, lcp::Mixer::attention)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
