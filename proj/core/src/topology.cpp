#include "lzckpt/topology.hpp"

#include <algorithm>
#include <limits>

#include "lzckpt/errors.hpp"

namespace lzckpt {

namespace {

// size of piece `idx` when splitting `total` into `pieces` near-equal parts,
// remainder going one byte at a time to the lowest indices
uint64_t split_piece(uint64_t total, uint64_t pieces, uint64_t idx) {
  return total / pieces + (idx < total % pieces ? 1 : 0);
}

}  // namespace

void ParallelTopology::validate() const {
  if (dp == 0 || pp == 0 || tp == 0) {
    throw ConfigError("topology: dp, pp and tp degrees must all be >= 1");
  }
  if (gpus_per_node == 0 || node_count == 0) {
    throw ConfigError("topology: gpus_per_node and node_count must be >= 1");
  }
  if (tp > gpus_per_node) {
    throw ConfigError("topology: tensor-parallel degree " + std::to_string(tp) +
                      " exceeds gpus_per_node " + std::to_string(gpus_per_node) +
                      " (tensor groups must fit inside a node)");
  }
  if (static_cast<uint64_t>(ranks()) !=
      static_cast<uint64_t>(gpus_per_node) * node_count) {
    throw ConfigError("topology: dp*pp*tp = " + std::to_string(ranks()) +
                      " does not equal gpus_per_node*node_count = " +
                      std::to_string(uint64_t(gpus_per_node) * node_count));
  }
}

RankCoord rank_coord(const ParallelTopology& topo, uint32_t flat) {
  RankCoord r;
  r.tp = flat % topo.tp;
  r.pp = (flat / topo.tp) % topo.pp;
  r.dp = flat / (topo.tp * topo.pp);
  return r;
}

uint64_t checkpoint_size(const ModelSpec& model) {
  return model.param_count *
         (uint64_t(model.bytes_per_param_model) + model.bytes_per_param_optimizer);
}

std::string ShardDescriptor::filename() const {
  if (kind == ShardKind::LayerShard) {
    uint32_t last = first_layer + (layer_count == 0 ? 0 : layer_count - 1);
    return "layers-" + std::to_string(first_layer) + "-" + std::to_string(last) +
           ".ckpt";
  }
  return "optimizer-" + std::to_string(partition) + ".ckpt";
}

CheckpointPlan::CheckpointPlan(uint64_t step, ParallelTopology topo, ModelSpec model,
                               std::vector<std::vector<ShardDescriptor>> shards_by_rank)
    : step_(step), topo_(topo), model_(std::move(model)), shards_(std::move(shards_by_rank)) {}

const std::vector<ShardDescriptor>& CheckpointPlan::shards(uint32_t flat_rank) const {
  return shards_.at(flat_rank);
}

const std::vector<ShardDescriptor>& CheckpointPlan::shards(const RankCoord& r) const {
  return shards_.at(flat_rank(topo_, r));
}

uint64_t CheckpointPlan::total_bytes() const {
  uint64_t sum = 0;
  for (const auto& rank : shards_) {
    for (const auto& s : rank) sum += s.size_bytes;
  }
  return sum;
}

uint64_t CheckpointPlan::rank_bytes(uint32_t flat_rank) const {
  uint64_t sum = 0;
  for (const auto& s : shards_.at(flat_rank)) sum += s.size_bytes;
  return sum;
}

double CheckpointPlan::balance_skew() const {
  uint64_t lo = std::numeric_limits<uint64_t>::max();
  uint64_t hi = 0;
  for (uint32_t r = 0; r < shards_.size(); ++r) {
    uint64_t b = rank_bytes(r);
    lo = std::min(lo, b);
    hi = std::max(hi, b);
  }
  if (shards_.empty() || lo == 0) return 0.0;
  return double(hi) / double(lo) - 1.0;
}

CheckpointPlan plan_checkpoint(const ParallelTopology& topo, const ModelSpec& model,
                               uint64_t step) {
  topo.validate();
  if (model.bytes_per_param_model == 0 || model.bytes_per_param_optimizer == 0) {
    throw ConfigError("model: bytes-per-parameter values must be > 0");
  }
  if (model.layer_count == 0) {
    throw ConfigError("model: layer_count must be >= 1");
  }
  if (model.layer_count < topo.pp) {
    throw ConfigError("model: layer_count " + std::to_string(model.layer_count) +
                      " cannot fill " + std::to_string(topo.pp) +
                      " pipeline stages");
  }

  const uint32_t ranks = topo.ranks();
  const uint64_t model_bytes = model.param_count * model.bytes_per_param_model;
  const uint64_t opt_bytes = model.param_count * model.bytes_per_param_optimizer;

  // Per-layer parameter bytes, uniform up to an integer remainder.
  std::vector<uint64_t> layer_bytes(model.layer_count);
  for (uint32_t l = 0; l < model.layer_count; ++l) {
    layer_bytes[l] = split_piece(model.param_count, model.layer_count, l) *
                     model.bytes_per_param_model;
  }
  (void)model_bytes;

  // Contiguous layer ranges per pipeline stage.
  struct Stage {
    uint32_t first = 0;
    uint32_t count = 0;
    uint64_t bytes = 0;
  };
  std::vector<Stage> stages(topo.pp);
  {
    uint32_t next = 0;
    for (uint32_t p = 0; p < topo.pp; ++p) {
      stages[p].first = next;
      stages[p].count =
          static_cast<uint32_t>(split_piece(model.layer_count, topo.pp, p));
      for (uint32_t l = 0; l < stages[p].count; ++l) {
        stages[p].bytes += layer_bytes[next + l];
      }
      next += stages[p].count;
    }
  }

  std::vector<std::vector<ShardDescriptor>> by_rank(ranks);
  uint64_t next_id = 0;
  const uint32_t writers_per_stage = topo.tp * topo.dp;

  for (uint32_t flat = 0; flat < ranks; ++flat) {
    RankCoord coord = rank_coord(topo, flat);
    const Stage& st = stages[coord.pp];

    // This rank's slice of the stage's parameter bytes. Slices within a stage
    // are indexed so that every (kind, range, partition) triple is owned by
    // exactly one rank.
    uint32_t slice = coord.dp * topo.tp + coord.tp;
    uint64_t slice_bytes = split_piece(st.bytes, writers_per_stage, slice);
    if (st.count > 0 && slice_bytes > 0) {
      ShardDescriptor s;
      s.shard_id = next_id++;
      s.kind = ShardKind::LayerShard;
      s.first_layer = st.first;
      s.layer_count = st.count;
      s.partition = slice;
      s.size_bytes = slice_bytes;
      s.owner = coord;
      by_rank[flat].push_back(s);
    }

    uint64_t opt_piece = split_piece(opt_bytes, ranks, flat);
    if (opt_piece > 0) {
      ShardDescriptor s;
      s.shard_id = next_id++;
      s.kind = ShardKind::OptimizerShard;
      s.partition = flat;
      s.size_bytes = opt_piece;
      s.owner = coord;
      by_rank[flat].push_back(s);
    }
  }

  return CheckpointPlan(step, topo, model, std::move(by_rank));
}

const std::vector<ModelPreset>& builtin_model_presets() {
  static const std::vector<ModelPreset> presets = [] {
    auto make = [](std::string name, uint64_t params, uint32_t layers,
                   uint32_t hidden, uint32_t nodes) {
      ModelPreset p;
      p.model.name = std::move(name);
      p.model.param_count = params;
      p.model.layer_count = layers;
      p.model.hidden_dim = hidden;
      p.nodes = nodes;
      return p;
    };
    std::vector<ModelPreset> v;
    v.push_back(make("3B", 3'000'000'000ull, 30, 2560, 1));
    v.push_back(make("7B", 7'000'000'000ull, 32, 4096, 2));
    v.push_back(make("13B", 13'000'000'000ull, 40, 5120, 4));
    v.push_back(make("30B", 30'000'000'000ull, 60, 6656, 8));
    v.push_back(make("70B", 70'000'000'000ull, 80, 8192, 20));
    return v;
  }();
  return presets;
}

const ModelPreset* find_model_preset(std::string_view name) {
  for (const auto& p : builtin_model_presets()) {
    if (p.model.name == name) return &p;
  }
  return nullptr;
}

ParallelTopology default_topology_for(const ModelPreset& preset, uint32_t dp) {
  ParallelTopology topo;
  topo.dp = dp;
  topo.pp = preset.nodes;
  topo.tp = 4;
  topo.gpus_per_node = 4;
  topo.node_count = topo.ranks() / topo.gpus_per_node;
  return topo;
}

}  // namespace lzckpt
