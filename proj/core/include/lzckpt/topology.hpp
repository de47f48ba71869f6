#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace lzckpt {

// 3D parallel layout: dp replicas x pp pipeline stages x tp tensor slices.
// Tensor-parallel groups must fit inside a node (NVLink domain), hence the
// tp <= gpus_per_node rule.
struct ParallelTopology {
  uint32_t dp = 1;
  uint32_t pp = 1;
  uint32_t tp = 1;
  uint32_t gpus_per_node = 4;
  uint32_t node_count = 1;

  uint32_t ranks() const { return dp * pp * tp; }
  void validate() const;  // throws ConfigError
};

struct RankCoord {
  uint32_t dp = 0;
  uint32_t pp = 0;
  uint32_t tp = 0;

  bool operator==(const RankCoord&) const = default;
};

inline uint32_t flat_rank(const ParallelTopology& topo, const RankCoord& r) {
  return (r.dp * topo.pp + r.pp) * topo.tp + r.tp;
}
RankCoord rank_coord(const ParallelTopology& topo, uint32_t flat);

struct ModelSpec {
  std::string name;  // optional label used in reports
  uint64_t param_count = 0;
  uint32_t layer_count = 1;
  uint32_t hidden_dim = 0;
  // Defaults model mixed-precision training: fp16 weights plus a 12-byte
  // optimizer word per parameter (fp32 master copy, momentum, variance).
  uint32_t bytes_per_param_model = 2;
  uint32_t bytes_per_param_optimizer = 12;
};

// Total bytes a full checkpoint of this model occupies, across all ranks.
uint64_t checkpoint_size(const ModelSpec& model);

enum class ShardKind { LayerShard, OptimizerShard };

struct ShardDescriptor {
  uint64_t shard_id = 0;  // unique within one plan
  ShardKind kind = ShardKind::LayerShard;
  uint32_t first_layer = 0;  // LayerShard only
  uint32_t layer_count = 0;  // LayerShard only
  // LayerShard: which of the tp*dp equal byte slices of the stage this is.
  // OptimizerShard: which of the ranks() partitions this is.
  uint32_t partition = 0;
  uint64_t size_bytes = 0;
  RankCoord owner;

  std::string filename() const;  // e.g. "layers-10-19.ckpt", "optimizer-5.ckpt"
};

class CheckpointPlan {
public:
  CheckpointPlan() = default;
  CheckpointPlan(uint64_t step, ParallelTopology topo, ModelSpec model,
                 std::vector<std::vector<ShardDescriptor>> shards_by_rank);

  uint64_t step() const { return step_; }
  const ParallelTopology& topology() const { return topo_; }
  const ModelSpec& model() const { return model_; }
  const std::vector<ShardDescriptor>& shards(uint32_t flat_rank) const;
  const std::vector<ShardDescriptor>& shards(const RankCoord& r) const;
  const std::vector<std::vector<ShardDescriptor>>& all_shards() const { return shards_; }

  uint64_t total_bytes() const;
  uint64_t rank_bytes(uint32_t flat_rank) const;
  // max/min of per-rank byte totals, minus one. Zero means perfectly even.
  double balance_skew() const;

private:
  uint64_t step_ = 0;
  ParallelTopology topo_;
  ModelSpec model_;
  std::vector<std::vector<ShardDescriptor>> shards_;
};

// Derives the per-rank shard layout for one checkpoint step. Model parameter
// bytes are split by pipeline stage, then sliced evenly across the tp*dp
// writers of that stage; optimizer bytes are partitioned evenly across all
// ranks (ZeRO stage 1 plus data-parallel write partitioning). Splits are
// exact: byte totals are conserved, remainders spread one byte at a time.
CheckpointPlan plan_checkpoint(const ParallelTopology& topo, const ModelSpec& model,
                               uint64_t step);

// Built-in model configurations used by the simulator presets.
struct ModelPreset {
  ModelSpec model;
  uint32_t nodes = 1;  // default deployment: pp = nodes, tp = gpus per node
};

const std::vector<ModelPreset>& builtin_model_presets();
const ModelPreset* find_model_preset(std::string_view name);
ParallelTopology default_topology_for(const ModelPreset& preset, uint32_t dp = 1);

}  // namespace lzckpt
