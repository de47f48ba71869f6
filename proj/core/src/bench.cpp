#include "lzckpt/bench.hpp"

#include <algorithm>
#include <barrier>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include "lzckpt/consolidation.hpp"
#include "lzckpt/engine.hpp"
#include "lzckpt/errors.hpp"
#include "lzckpt/manifest.hpp"
#include "lzckpt/state_tree.hpp"
#include "lzckpt/topology.hpp"

namespace lzckpt {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::byte> draw_bytes(std::mt19937_64& rng, uint64_t n) {
  std::vector<std::byte> out(n);
  uint64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    uint64_t w = rng();
    std::memcpy(out.data() + i, &w, 8);
  }
  if (i < n) {
    uint64_t w = rng();
    std::memcpy(out.data() + i, &w, n - i);
  }
  return out;
}

// Shard subtree: a small blob of run constants, the bulk as a streamed
// region, and a second region with the remainder.
void build_state(StateTree& tree, const std::vector<ShardDescriptor>& shards,
                 std::mt19937_64& rng) {
  for (size_t i = 0; i < shards.size(); ++i) {
    const char* kind = shards[i].kind == ShardKind::LayerShard ? "layers" : "optimizer";
    std::string child = "s" + std::to_string(i) + "-" + kind;
    uint64_t rest = shards[i].size_bytes;
    if (rest > 4096) {
      tree.set_blob(child + "/run_constants", draw_bytes(rng, 1024));
      rest -= 1024;
    }
    uint64_t bulk = rest - rest / 4;
    tree.set_region(child + "/weights", std::make_shared<DeviceRegion>(draw_bytes(rng, bulk)));
    if (rest - bulk > 0) {
      tree.set_region(child + "/moments",
                      std::make_shared<DeviceRegion>(draw_bytes(rng, rest - bulk)));
    }
  }
}

struct LeafSnapshot {
  bool is_region = false;
  std::vector<std::byte> bytes;
};
using Image = std::map<std::string, LeafSnapshot>;

Image snapshot_state(const StateTree& tree) {
  Image image;
  for (const auto& leaf : tree.flatten()) {
    LeafSnapshot s;
    s.is_region = leaf.region != nullptr;
    s.bytes = leaf.region ? leaf.region->clone_bytes() : *leaf.blob;
    image.emplace(leaf.path, std::move(s));
  }
  return image;
}

void apply_update(StateTree& tree, std::mt19937_64& rng) {
  for (const auto& leaf : tree.flatten()) {
    if (!leaf.region) continue;
    std::vector<std::byte> next = draw_bytes(rng, leaf.region->size());
    leaf.region->mutate(
        [&](std::span<std::byte> dst) { std::copy(next.begin(), next.end(), dst.begin()); });
  }
}

bool state_matches(const StateTree& restored, const Image& image) {
  auto leaves = restored.flatten();
  if (leaves.size() != image.size()) return false;
  for (const auto& leaf : leaves) {
    auto it = image.find(leaf.path);
    if (it == image.end()) return false;
    if (it->second.is_region != (leaf.region != nullptr)) return false;
    const std::vector<std::byte>& got = leaf.region ? leaf.region->clone_bytes() : *leaf.blob;
    if (got != it->second.bytes) return false;
  }
  return true;
}

struct StepBundle {
  std::vector<std::shared_ptr<CaptureTicket>> tickets;
  std::vector<Image> images;
  size_t posted = 0;
};

struct CommitQueue {
  std::mutex m;
  std::condition_variable cv;
  std::map<uint64_t, StepBundle> steps;
  bool cancel = false;
};

}  // namespace

bool BenchReport::passed() const {
  if (checkpoints_attempted == 0) return aborted_steps.empty();
  if (committed_steps.size() + aborted_steps.size() != checkpoints_attempted) return false;
  if (kill_requested) {
    if (aborted_steps.empty()) return false;
    return restored_step == 0 ? committed_steps.empty() : restore_matches;
  }
  return aborted_steps.empty() && committed_steps.size() == checkpoints_attempted &&
         restore_matches;
}

BenchReport run_bench(const BenchOptions& opt) {
  if (opt.dp == 0 || opt.pp == 0 || opt.tp == 0) throw ConfigError("dp, pp, tp must be at least 1");
  if (opt.steps == 0) throw ConfigError("steps must be at least 1");

  const uint32_t ranks = opt.dp * opt.pp * opt.tp;
  const uint32_t gpn = opt.gpus_per_node == 0 ? ranks : opt.gpus_per_node;
  if (ranks % gpn != 0) {
    throw ConfigError("ranks (" + std::to_string(ranks) + ") not divisible by gpus_per_node (" +
                      std::to_string(gpn) + ")");
  }

  ParallelTopology topo;
  topo.dp = opt.dp;
  topo.pp = opt.pp;
  topo.tp = opt.tp;
  topo.gpus_per_node = gpn;
  topo.node_count = ranks / gpn;
  topo.validate();

  ModelSpec model;
  model.name = "bench";
  model.param_count = opt.params;
  model.layer_count = opt.layers;
  model.hidden_dim = 256;

  std::vector<uint64_t> ckpt_steps;
  if (opt.checkpoint_every > 0) {
    for (uint32_t s = 1; s <= opt.steps; ++s) {
      if ((s - 1) % opt.checkpoint_every == 0) ckpt_steps.push_back(s);
    }
  }

  std::map<uint64_t, CheckpointPlan> plans;
  for (uint64_t s : ckpt_steps) plans.emplace(s, plan_checkpoint(topo, model, s));

  if (!plans.empty()) {
    for (const auto& per_rank : plans.begin()->second.all_shards()) {
      for (const ShardDescriptor& shard : per_rank) {
        if (shard.size_bytes + (64ull << 10) > opt.buffer_bytes) {
          throw SizeExceedsCapacity(
              "shard " + shard.filename() + " needs " + std::to_string(shard.size_bytes) +
              " bytes staged (plus metadata); host pool holds only " +
              std::to_string(opt.buffer_bytes));
        }
      }
    }
  }

  std::filesystem::path root = opt.scratch_dir / "bench-ckpt";
  std::filesystem::remove_all(root);
  std::filesystem::create_directories(root);

  std::vector<std::unique_ptr<Engine>> engines(ranks);
  std::vector<StateTree> trees(ranks);
  for (uint32_t r = 0; r < ranks; ++r) {
    EngineConfig config;
    config.checkpoint_root = root;
    config.host_buffer_bytes = opt.buffer_bytes;
    config.copy_channel.bandwidth_Bps = opt.copy_bandwidth_Bps;
    config.copy_channel.chunk_quantum = 256ull << 10;
    config.flush.storage_bandwidth_Bps = opt.storage_bandwidth_Bps;
    config.flush.fsync_on_finalize = opt.fsync;
    config.large_leaf_threshold = 64ull << 10;
    engines[r] = std::make_unique<Engine>(config, topo, rank_coord(topo, r));

    std::mt19937_64 rng(opt.seed + 0x9e3779b97f4a7c15ull * (r + 1));
    CheckpointPlan sizing = plan_checkpoint(topo, model, 1);
    build_state(trees[r], sizing.shards(r), rng);
  }

  ManifestStore manifest(root / "manifest.json");
  CommitCoordinator coordinator(manifest, topo);

  CommitQueue queue;
  for (uint64_t s : ckpt_steps) {
    StepBundle b;
    b.tickets.resize(ranks);
    b.images.resize(ranks);
    queue.steps.emplace(s, std::move(b));
  }

  BenchReport report;
  report.ranks = ranks;
  report.steps_run = opt.steps;
  report.checkpoints_attempted = static_cast<uint32_t>(ckpt_steps.size());
  report.kill_requested = opt.kill_at_step.has_value();
  report.rank_stats.resize(ranks);

  std::vector<Image> last_refs;
  std::mutex error_mutex;
  std::string first_error;

  auto note_error = [&](const std::string& msg) {
    std::lock_guard lock(error_mutex);
    if (first_error.empty()) first_error = msg;
    {
      std::lock_guard ql(queue.m);
      queue.cancel = true;
    }
    queue.cv.notify_all();
  };

  std::thread consolidator([&] {
    for (uint64_t s : ckpt_steps) {
      StepBundle bundle;
      {
        std::unique_lock lock(queue.m);
        queue.cv.wait(lock, [&] { return queue.steps.at(s).posted == ranks || queue.cancel; });
        if (queue.cancel) return;
        bundle = std::move(queue.steps.at(s));
      }
      std::vector<std::unique_ptr<EngineCommitParticipant>> parts;
      std::vector<CommitParticipant*> ptrs;
      for (uint32_t r = 0; r < ranks; ++r) {
        parts.push_back(std::make_unique<EngineCommitParticipant>(*engines[r], plans.at(s),
                                                                  bundle.tickets[r]));
        ptrs.push_back(parts.back().get());
      }
      CommitRecord record = coordinator.run_step(s, ptrs);
      if (record.decision == Decision::Committed) {
        report.committed_steps.push_back(s);
        report.restored_step = s;
        last_refs = std::move(bundle.images);
      } else {
        report.aborted_steps.push_back(s);
      }
    }
  });

  auto t_start = Clock::now();
  std::barrier sync(static_cast<std::ptrdiff_t>(ranks));

  auto trainer = [&](uint32_t r) {
    std::mt19937_64 rng(opt.seed + 0xbf58476d1ce4e5b9ull * (r + 1));
    RankStats& stats = report.rank_stats[r];
    stats.flat_rank = r;
    bool dropped = false;
    try {
      for (uint32_t step = 1; step <= opt.steps; ++step) {
        std::shared_ptr<CaptureTicket> ticket;
        Image image;
        bool due = opt.checkpoint_every > 0 && (step - 1) % opt.checkpoint_every == 0;
        if (due) {
          if (opt.kill_at_step && r == opt.kill_rank && step == *opt.kill_at_step) {
            engines[r]->flush().inject_failure_after(plans.at(step).rank_bytes(r) / 2);
          }
          image = snapshot_state(trees[r]);
          auto t0 = Clock::now();
          ticket = engines[r]->capture(plans.at(step), trees[r], step);
          stats.capture_s += seconds_since(t0);
          stats.captures += 1;
          stats.bytes_captured += ticket->payload_bytes();
        }

        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(opt.compute_ms));

        if (ticket) {
          auto t0 = Clock::now();
          engines[r]->update_barrier(ticket);
          double stall = seconds_since(t0);
          stats.barrier_s += stall;
          stats.max_barrier_s = std::max(stats.max_barrier_s, stall);
        }

        apply_update(trees[r], rng);

        if (ticket) {
          {
            std::lock_guard lock(queue.m);
            StepBundle& b = queue.steps.at(step);
            b.tickets[r] = std::move(ticket);
            b.images[r] = std::move(image);
            ++b.posted;
          }
          queue.cv.notify_all();
        }
        sync.arrive_and_wait();
      }
    } catch (const std::exception& e) {
      note_error(std::string("rank ") + std::to_string(r) + ": " + e.what());
      sync.arrive_and_drop();
      dropped = true;
    }
    if (!dropped) sync.arrive_and_drop();
  };

  std::vector<std::thread> trainers;
  trainers.reserve(ranks);
  for (uint32_t r = 0; r < ranks; ++r) trainers.emplace_back(trainer, r);
  for (auto& t : trainers) t.join();
  consolidator.join();
  report.wall_s = seconds_since(t_start);

  for (auto& e : engines) e->drain();
  if (!first_error.empty()) throw Error("bench failed: " + first_error);

  if (report.restored_step > 0) {
    report.restore_matches = true;
    for (uint32_t r = 0; r < ranks; ++r) {
      StateTree restored = engines[r]->restore(manifest, report.restored_step);
      if (!state_matches(restored, last_refs[r])) {
        report.restore_matches = false;
        break;
      }
    }
  }
  return report;
}

}  // namespace lzckpt
