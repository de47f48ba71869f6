#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lzckpt/topology.hpp"

namespace lzckpt::sim {

// Bandwidths of the modeled cluster, bytes per second. b_d2d is measured on
// real hardware but sits on no modeled path; it stays here so `defaults` can
// print the full cluster description.
struct ClusterSpec {
  uint32_t node_count = 1;
  uint32_t gpus_per_node = 4;
  double b_d2h_pinned = 25e9;
  double b_d2h_unpinned = 10e9;
  double b_d2d = 85e9;
  double b_pfs_aggregate = 650e9;
  double per_writer_cap = 5e9;
  double alloc_bandwidth = 2e9;

  void validate() const;  // all rates > 0, throws ConfigError
};

struct PhaseProfile {
  double t_forward = 1.0;
  double t_backward = 1.1;
  double t_update = 0.1;
};

enum class StrategyKind { Sync, AsyncSnapshot, Chunked, Lazy };

struct Strategy {
  StrategyKind kind = StrategyKind::Lazy;
  uint32_t chunked_threads = 4;           // Chunked: concurrent writer lanes per rank
  bool async_overlap_last_shard = false;  // AsyncSnapshot: final shard copies during F+B

  static Strategy sync() { return {StrategyKind::Sync, 4, false}; }
  static Strategy async_snapshot(bool overlap_last = false) {
    return {StrategyKind::AsyncSnapshot, 4, overlap_last};
  }
  static Strategy chunked(uint32_t threads = 4) { return {StrategyKind::Chunked, threads, false}; }
  static Strategy lazy() { return {StrategyKind::Lazy, 4, false}; }
};

const char* to_string(StrategyKind kind);
std::optional<StrategyKind> strategy_from_string(std::string_view name);

struct RunConfig {
  ClusterSpec cluster;
  ParallelTopology topology;
  ModelSpec model;
  PhaseProfile phases;
  Strategy strategy;
  uint32_t iterations = 1;
  uint32_t checkpoint_every = 1;  // 0 disables checkpointing
  uint64_t buffer_capacity = 16'000'000'000ull;
};

struct Metrics {
  uint64_t checkpoints = 0;
  uint64_t checkpoint_bytes = 0;     // one full checkpoint, all ranks
  double blocked_per_checkpoint_s = 0;  // mean trainer-blocked time, raw
  double max_blocked_s = 0;
  double throughput_Bps = 0;  // checkpoint_bytes / blocked, blocked floored at 1 ms
  double iteration_s = 0;     // mean wall time per iteration
  double end_to_end_s = 0;    // training end or last persisted byte, whichever is later
  std::vector<double> blocked_each;  // per checkpoint, for property checks
};

// Deterministic single-threaded event simulation of a training run with one
// of the four checkpointing approaches. Identical configs produce bit-for-bit
// identical Metrics. The per-iteration update barrier is collective: no rank
// starts its optimizer update until every rank's required copies are done,
// so trainer-blocked time is dictated by the slowest rank.
Metrics simulate(const RunConfig& config);

// Runs simulate once per strategy on an otherwise identical config.
struct StrategyResult {
  Strategy strategy;
  Metrics metrics;
};
std::vector<StrategyResult> compare_strategies(const RunConfig& base);

// Closed-form blocked time for a single rank flushing one checkpoint of
// shard_bytes with nothing else on the storage tier. Used as an independent
// oracle for simulate():
//   Sync:          S/b_d2h_pinned + S/min(per_writer_cap, b_pfs_aggregate)
//   AsyncSnapshot: S/alloc_bandwidth + S/b_d2h_unpinned
//   Chunked:       S/b_d2h_pinned
//   Lazy:          max(0, S/b_d2h_pinned - (t_forward + t_backward))
double analytic_blocked_time(const Strategy& strategy, double shard_bytes,
                             const ClusterSpec& cluster, const PhaseProfile& phases);

// Iteration phase durations calibrated per built-in model preset; larger
// models run longer iterations and the update phase stays a small fraction.
PhaseProfile default_phase_profile(std::string_view model_name);

// Convenience: a full RunConfig for one built-in preset at a given data
// parallel degree, defaults everywhere else.
RunConfig preset_run_config(const ModelPreset& preset, uint32_t dp = 1);

}  // namespace lzckpt::sim
