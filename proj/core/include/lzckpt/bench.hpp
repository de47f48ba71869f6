#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace lzckpt {

// Exercises the real engine end to end: one trainer thread per rank running a
// sleep-timed train loop against emulated device regions, captures overlapped
// with the next iteration, and a consolidation thread off to the side driving
// the two-phase commit for each checkpointed step while training continues.
//
// kill_at_step breaks one rank's storage mid-flush at that step; everything
// from there on is expected to abort while earlier committed steps stay
// restorable.
struct BenchOptions {
  std::filesystem::path scratch_dir;
  uint32_t dp = 2;
  uint32_t pp = 1;
  uint32_t tp = 1;
  uint32_t gpus_per_node = 0;  // 0: all ranks on one node
  uint32_t steps = 4;
  uint32_t checkpoint_every = 1;  // 0 disables checkpointing
  uint64_t params = 600'000;
  uint32_t layers = 4;
  double compute_ms = 15.0;            // forward+backward sleep per step
  double copy_bandwidth_Bps = 0;       // device-to-host; 0 = unthrottled
  double storage_bandwidth_Bps = 0;    // flush writer; 0 = unthrottled
  uint64_t buffer_bytes = 256ull << 20;  // pinned pool per rank
  uint64_t seed = 1;
  bool fsync = false;
  std::optional<uint32_t> kill_at_step;
  uint32_t kill_rank = 0;
};

struct RankStats {
  uint32_t flat_rank = 0;
  uint64_t captures = 0;
  uint64_t bytes_captured = 0;
  double capture_s = 0;      // cumulative trainer-thread time inside capture()
  double barrier_s = 0;      // cumulative update-barrier stall
  double max_barrier_s = 0;  // worst single stall
};

struct BenchReport {
  uint32_t ranks = 0;
  uint32_t steps_run = 0;
  uint32_t checkpoints_attempted = 0;
  std::vector<uint64_t> committed_steps;
  std::vector<uint64_t> aborted_steps;
  std::vector<RankStats> rank_stats;
  double wall_s = 0;
  uint64_t restored_step = 0;  // 0 when nothing committed
  bool restore_matches = false;
  bool kill_requested = false;

  bool passed() const;
};

BenchReport run_bench(const BenchOptions& options);

}  // namespace lzckpt
