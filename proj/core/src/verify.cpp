#include "lzckpt/verify.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <random>
#include <string>

#include "lzckpt/consolidation.hpp"
#include "lzckpt/engine.hpp"
#include "lzckpt/errors.hpp"
#include "lzckpt/manifest.hpp"
#include "lzckpt/state_tree.hpp"
#include "lzckpt/topology.hpp"

namespace lzckpt {
namespace {

constexpr uint64_t kLeafThreshold = 16ull << 10;

std::vector<std::byte> random_bytes(std::mt19937_64& rng, uint64_t n) {
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

// Fills one shard's subtree with a random mix of streamed regions, small
// regions, and small blobs whose sizes add up to exactly shard_bytes. The
// first leaf is always big enough to go through the copy channel.
void populate_shard(StateTree& tree, const std::string& child, uint64_t shard_bytes,
                    std::mt19937_64& rng) {
  uint64_t remaining = shard_bytes;
  uint32_t serial = 0;

  auto add_region = [&](uint64_t n) {
    auto region = std::make_shared<DeviceRegion>(random_bytes(rng, n));
    tree.set_region(child + "/blk" + std::to_string(serial / 4) + "/w" + std::to_string(serial),
                    std::move(region));
    ++serial;
    remaining -= n;
  };
  auto add_blob = [&](uint64_t n) {
    tree.set_blob(child + "/blk" + std::to_string(serial / 4) + "/meta" + std::to_string(serial),
                  random_bytes(rng, n));
    ++serial;
    remaining -= n;
  };

  uint64_t first = std::clamp<uint64_t>(remaining * 5 / 8, kLeafThreshold, remaining);
  add_region(first);

  std::uniform_int_distribution<int> pick(0, 2);
  std::uniform_int_distribution<uint64_t> small_size(64, 4096);
  std::uniform_int_distribution<uint64_t> large_size(kLeafThreshold, kLeafThreshold * 4);
  while (remaining > 1 && serial < 8) {
    uint64_t want = pick(rng) == 2 ? large_size(rng) : small_size(rng);
    if (want >= remaining) break;
    if (pick(rng) == 0) {
      add_blob(want);
    } else {
      add_region(want);
    }
  }
  if (remaining > 0) add_region(remaining);
}

struct LeafImage {
  bool is_region = false;
  std::vector<std::byte> bytes;
};

std::map<std::string, LeafImage> snapshot_tree(const StateTree& tree) {
  std::map<std::string, LeafImage> image;
  for (const auto& leaf : tree.flatten()) {
    LeafImage li;
    li.is_region = leaf.region != nullptr;
    li.bytes = leaf.region ? leaf.region->clone_bytes() : *leaf.blob;
    image.emplace(leaf.path, std::move(li));
  }
  return image;
}

void mutate_regions(StateTree& tree, std::mt19937_64& rng) {
  for (const auto& leaf : tree.flatten()) {
    if (!leaf.region) continue;
    std::vector<std::byte> next = random_bytes(rng, leaf.region->size());
    leaf.region->mutate([&](std::span<std::byte> dst) {
      std::copy(next.begin(), next.end(), dst.begin());
    });
  }
}

bool matches_image(const StateTree& restored, const std::map<std::string, LeafImage>& image) {
  auto leaves = restored.flatten();
  if (leaves.size() != image.size()) return false;
  for (const auto& leaf : leaves) {
    auto it = image.find(leaf.path);
    if (it == image.end()) return false;
    const LeafImage& want = it->second;
    if (want.is_region != (leaf.region != nullptr)) return false;
    const std::vector<std::byte>& got = leaf.region ? leaf.region->clone_bytes() : *leaf.blob;
    if (got != want.bytes) return false;
  }
  return true;
}

TrialOutcome run_trial(const VerifyOptions& opt, uint32_t trial) {
  std::mt19937_64 rng(opt.seed + 0x9e3779b97f4a7c15ull * (trial + 1));

  TrialOutcome outcome;
  outcome.trial = trial;

  ParallelTopology topo;
  topo.dp = topo.pp = topo.tp = topo.gpus_per_node = topo.node_count = 1;
  RankCoord rank{0, 0, 0};

  ModelSpec model;
  model.name = "verify";
  model.param_count = std::uniform_int_distribution<uint64_t>(40'000, 200'000)(rng);
  model.layer_count = std::uniform_int_distribution<uint32_t>(2, 6)(rng);
  model.hidden_dim = 64;

  std::filesystem::path trial_root = opt.scratch_dir / ("trial-" + std::to_string(trial));
  std::filesystem::remove_all(trial_root);
  std::filesystem::create_directories(trial_root);

  EngineConfig config;
  config.checkpoint_root = trial_root / "ckpt";
  config.host_buffer_bytes = 64ull << 20;
  config.large_leaf_threshold = kLeafThreshold;
  if (opt.skip_barrier) {
    // Slow the device-to-host link so the mutation below lands while copies
    // are still moving.
    config.copy_channel.bandwidth_Bps = 150e6;
    config.copy_channel.chunk_quantum = 64ull << 10;
  } else {
    config.copy_channel.bandwidth_Bps = 0;
    config.copy_channel.chunk_quantum = 1ull << 20;
  }

  Engine engine(config, topo, rank);
  ManifestStore manifest(config.checkpoint_root / "manifest.json");
  CommitCoordinator coordinator(manifest, topo);

  // Seed plan just to size the tree; per-step plans below carry the step.
  CheckpointPlan sizing = plan_checkpoint(topo, model, 1);
  const auto& shards = sizing.shards(rank);

  StateTree tree;
  for (size_t i = 0; i < shards.size(); ++i) {
    const char* kind = shards[i].kind == ShardKind::LayerShard ? "layers" : "optimizer";
    populate_shard(tree, "s" + std::to_string(i) + "-" + kind, shards[i].size_bytes, rng);
  }

  if (opt.skip_barrier) {
    CheckpointPlan plan = plan_checkpoint(topo, model, 1);
    auto ticket = engine.capture(plan, tree, 1);
    outcome.steps = 1;
    outcome.payload_bytes = ticket->payload_bytes();
    mutate_regions(tree, rng);  // barrier deliberately not taken first
    try {
      engine.update_barrier(ticket);
    } catch (const TornSnapshot&) {
      outcome.torn_detected = true;
    }
    EngineCommitParticipant participant(engine, plan, ticket);
    std::vector<CommitParticipant*> participants{&participant};
    CommitRecord record = coordinator.run_step(1, participants);
    outcome.aborted = record.decision == Decision::Aborted;
    outcome.committed = record.decision == Decision::Committed;
    engine.drain();
    sweep_uncommitted(config.checkpoint_root, manifest);
    return outcome;
  }

  uint64_t steps = 1 + (rng() % 2);
  outcome.steps = steps;
  std::map<std::string, LeafImage> reference;
  bool all_committed = true;
  for (uint64_t step = 1; step <= steps; ++step) {
    CheckpointPlan plan = plan_checkpoint(topo, model, step);
    reference = snapshot_tree(tree);
    auto ticket = engine.capture(plan, tree, step);
    outcome.payload_bytes += ticket->payload_bytes();
    engine.update_barrier(ticket);
    mutate_regions(tree, rng);  // next iteration's update, checkpoint must not see it
    engine.wait_persisted(ticket);

    EngineCommitParticipant participant(engine, plan, ticket);
    std::vector<CommitParticipant*> participants{&participant};
    CommitRecord record = coordinator.run_step(step, participants);
    all_committed = all_committed && record.decision == Decision::Committed;
  }
  outcome.committed = all_committed;

  StateTree restored = engine.restore(manifest, steps);
  outcome.byte_exact = all_committed && matches_image(restored, reference);
  engine.drain();
  return outcome;
}

}  // namespace

uint32_t VerifyReport::byte_exact() const {
  return static_cast<uint32_t>(
      std::count_if(outcomes.begin(), outcomes.end(), [](const TrialOutcome& t) { return t.byte_exact; }));
}

uint32_t VerifyReport::torn_detected() const {
  return static_cast<uint32_t>(std::count_if(outcomes.begin(), outcomes.end(),
                                             [](const TrialOutcome& t) { return t.torn_detected; }));
}

uint32_t VerifyReport::committed() const {
  return static_cast<uint32_t>(
      std::count_if(outcomes.begin(), outcomes.end(), [](const TrialOutcome& t) { return t.committed; }));
}

bool VerifyReport::passed() const {
  if (outcomes.empty()) return false;
  if (options.skip_barrier) return torn_detected() == trials() && committed() == 0;
  return byte_exact() == trials() && committed() == trials();
}

VerifyReport run_verification(const VerifyOptions& options) {
  VerifyReport report;
  report.options = options;
  for (uint32_t t = 0; t < options.trials; ++t) {
    report.outcomes.push_back(run_trial(options, t));
  }
  return report;
}

}  // namespace lzckpt
