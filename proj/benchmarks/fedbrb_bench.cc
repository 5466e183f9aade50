#include <benchmark/benchmark.h>

#include <vector>

#include "fedbrb/aggregate.h"
#include "fedbrb/model.h"
#include "fedbrb/partition.h"
#include "fedbrb/rng.h"

namespace {

using namespace fedbrb;

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.data()) v = standard_normal(rng);
  return t;
}

ChannelSelection leading(std::size_t out, std::size_t in) {
  ChannelSelection sel;
  for (std::size_t i = 0; i < out; ++i) sel.out_indices.push_back(i);
  for (std::size_t i = 0; i < in; ++i) sel.in_indices.push_back(i);
  return sel;
}

void BM_GatherChannels(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng = make_stream(0, {});
  const Tensor t = random_tensor({c, c, 3, 3}, rng);
  const ChannelSelection sel = leading(c / 4, c / 4);
  for (auto _ : state) benchmark::DoNotOptimize(gather_channels(t, sel));
}
BENCHMARK(BM_GatherChannels)->Arg(64)->Arg(256);

void BM_ScatterAddChannels(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng = make_stream(0, {});
  Tensor t = random_tensor({c, c, 3, 3}, rng);
  const ChannelSelection sel = leading(c / 4, c / 4);
  const Tensor block = gather_channels(t, sel);
  for (auto _ : state) {
    scatter_add_channels_inplace(t, sel, block, 1e-9);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_ScatterAddChannels)->Arg(64)->Arg(256);

void BM_BuildSpec(benchmark::State& state) {
  const ModelArch arch = make_cnn(1, 28, 28, 32, 64, 10);
  const Scheme scheme = static_cast<Scheme>(state.range(0));
  const Ratio ratio = Ratio::from_log2_denominator(4);
  Rng rng = make_stream(0, {});
  std::uint64_t round = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_submodel_spec(arch, scheme, ratio, ratio, round++, rng));
  }
}
BENCHMARK(BM_BuildSpec)
    ->Arg(static_cast<int>(Scheme::Random))
    ->Arg(static_cast<int>(Scheme::Rolling))
    ->Arg(static_cast<int>(Scheme::BlockRolling));

// One round of four clients, broadcast on or off.
void BM_AggregateRound(benchmark::State& state) {
  const ModelArch arch = make_cnn(1, 28, 28, 32, 64, 10);
  const Ratio ratio = Ratio::from_log2_denominator(static_cast<int>(state.range(0)));
  Rng rng = make_stream(0, {});
  const Params global = init_params(arch, rng);
  const ModelArch sub = shrink_arch(arch, ratio);
  std::vector<ClientUpdate> updates;
  for (std::size_t c = 0; c < 4; ++c) {
    SubModelSpec spec = build_submodel_spec(arch, Scheme::BlockRolling, ratio, ratio, c, rng);
    updates.push_back({c, std::move(spec), init_params(sub, rng), 100});
  }
  AggregationPolicy policy;
  policy.broadcast_enabled = state.range(1) != 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(aggregate_round(global, arch, updates, policy, ratio));
  }
}
BENCHMARK(BM_AggregateRound)->Args({2, 0})->Args({2, 1})->Args({4, 0})->Args({4, 1});

void BM_ForwardBackward(benchmark::State& state) {
  const ModelArch global = make_cnn(1, 28, 28, 32, 64, 10);
  const ModelArch arch =
      shrink_arch(global, Ratio::from_log2_denominator(static_cast<int>(state.range(0))));
  Rng rng = make_stream(0, {});
  const Params params = init_params(arch, rng);
  const Tensor x = random_tensor({64, 1, 28, 28}, rng);
  std::vector<int> labels(64);
  for (int& y : labels) y = static_cast<int>(uniform_below(rng, 10));
  for (auto _ : state) {
    const ForwardResult f = forward(params, arch, x);
    benchmark::DoNotOptimize(backward(params, arch, f.cache, labels));
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ForwardBackward)->Arg(0)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
