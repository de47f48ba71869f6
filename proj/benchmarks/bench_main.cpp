#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "lzckpt/buffer_pool.hpp"
#include "lzckpt/checksum.hpp"
#include "lzckpt/format.hpp"
#include "lzckpt/simulator.hpp"
#include "lzckpt/topology.hpp"

using namespace lzckpt;

// Full segment lifecycle through the pinned host pool, one segment at a time.
static void BM_PoolCycle(benchmark::State& state) {
  HostBufferPool pool(64ull << 20);
  const uint64_t size = uint64_t(state.range(0));
  uint64_t ticket = 1;
  for (auto _ : state) {
    Segment s = pool.reserve(size, ticket++);
    pool.mark_filled(s.id);
    pool.begin_flush(s.id);
    pool.release(s.id);
    benchmark::DoNotOptimize(s.offset);
  }
  state.SetBytesProcessed(int64_t(state.iterations()) * int64_t(size));
}
BENCHMARK(BM_PoolCycle)->Arg(64 << 10)->Arg(1 << 20)->Arg(8 << 20);

static void BM_Fnv64(benchmark::State& state) {
  std::vector<std::byte> data(size_t(state.range(0)));
  std::mt19937_64 rng(1);
  for (auto& b : data) b = std::byte(rng() & 0xff);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fnv64(data.data(), data.size()));
  }
  state.SetBytesProcessed(int64_t(state.iterations()) * state.range(0));
}
BENCHMARK(BM_Fnv64)->Arg(4 << 10)->Arg(256 << 10)->Arg(4 << 20);

static void BM_HeaderRoundTrip(benchmark::State& state) {
  CheckpointFileHeader h;
  for (int i = 0; i < int(state.range(0)); ++i) {
    h.entries.push_back({"tensor-" + std::to_string(i), 0, 4096, uint64_t(i) * 2654435761ull});
  }
  uint64_t off = h.serialized_size();
  for (auto& e : h.entries) {
    e.offset = off;
    off += e.length;
  }
  for (auto _ : state) {
    auto bytes = serialize_header(h);
    auto back = parse_header(bytes);
    benchmark::DoNotOptimize(back.entries.size());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * state.range(0));
}
BENCHMARK(BM_HeaderRoundTrip)->Arg(2)->Arg(32)->Arg(256);

// One full simulated training run, 16 ranks.
static void BM_Simulate(benchmark::State& state) {
  const ModelPreset* preset = find_model_preset("13B");
  sim::RunConfig cfg = sim::preset_run_config(*preset, 1);
  cfg.iterations = uint32_t(state.range(0));
  cfg.checkpoint_every = 1;
  cfg.strategy = sim::Strategy::lazy();
  for (auto _ : state) {
    sim::Metrics m = sim::simulate(cfg);
    benchmark::DoNotOptimize(m.end_to_end_s);
  }
}
BENCHMARK(BM_Simulate)->Arg(4)->Arg(16);

BENCHMARK_MAIN();
