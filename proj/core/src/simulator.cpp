#include "lzckpt/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <utility>

#include "lzckpt/errors.hpp"
#include "lzckpt/ring_core.hpp"

namespace lzckpt::sim {

void ClusterSpec::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0)) throw ConfigError(std::string(what) + " must be > 0");
  };
  positive(b_d2h_pinned, "b_d2h_pinned");
  positive(b_d2h_unpinned, "b_d2h_unpinned");
  positive(b_d2d, "b_d2d");
  positive(b_pfs_aggregate, "b_pfs_aggregate");
  positive(per_writer_cap, "per_writer_cap");
  positive(alloc_bandwidth, "alloc_bandwidth");
  if (node_count == 0 || gpus_per_node == 0) {
    throw ConfigError("cluster geometry must have nodes and GPUs");
  }
}

const char* to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Sync: return "sync";
    case StrategyKind::AsyncSnapshot: return "async_snapshot";
    case StrategyKind::Chunked: return "chunked";
    case StrategyKind::Lazy: return "lazy";
  }
  return "?";
}

std::optional<StrategyKind> strategy_from_string(std::string_view name) {
  if (name == "sync") return StrategyKind::Sync;
  if (name == "async_snapshot") return StrategyKind::AsyncSnapshot;
  if (name == "chunked") return StrategyKind::Chunked;
  if (name == "lazy") return StrategyKind::Lazy;
  return std::nullopt;
}

double analytic_blocked_time(const Strategy& strategy, double shard_bytes,
                             const ClusterSpec& cluster, const PhaseProfile& phases) {
  const double s = shard_bytes;
  switch (strategy.kind) {
    case StrategyKind::Sync: {
      const double share = std::min(cluster.per_writer_cap, cluster.b_pfs_aggregate);
      return s / cluster.b_d2h_pinned + s / share;
    }
    case StrategyKind::AsyncSnapshot:
      return s / cluster.alloc_bandwidth + s / cluster.b_d2h_unpinned;
    case StrategyKind::Chunked:
      return s / cluster.b_d2h_pinned;
    case StrategyKind::Lazy:
      return std::max(0.0, s / cluster.b_d2h_pinned - (phases.t_forward + phases.t_backward));
  }
  return 0;
}

PhaseProfile default_phase_profile(std::string_view model_name) {
  if (model_name == "3B") return {0.80, 0.90, 0.10};
  if (model_name == "7B") return {0.95, 1.05, 0.10};
  if (model_name == "13B") return {1.25, 1.40, 0.15};
  if (model_name == "30B") return {1.60, 1.85, 0.15};
  if (model_name == "70B") return {2.15, 2.45, 0.20};
  return {1.0, 1.1, 0.1};
}

RunConfig preset_run_config(const ModelPreset& preset, uint32_t dp) {
  RunConfig cfg;
  cfg.topology = default_topology_for(preset, dp);
  cfg.cluster.node_count = cfg.topology.node_count;
  cfg.cluster.gpus_per_node = cfg.topology.gpus_per_node;
  cfg.model = preset.model;
  cfg.phases = default_phase_profile(preset.model.name);
  return cfg;
}

namespace {

constexpr double kSimChunk = 64.0 * 1024 * 1024;
constexpr double kByteEps = 0.5;  // sub-byte slack for float boundary tests

class EventQueue {
 public:
  void at(double t, std::function<void()> fn) {
    events_.emplace(std::make_pair(t, seq_++), std::move(fn));
  }
  double now() const { return now_; }
  void run() {
    while (!events_.empty()) {
      auto it = events_.begin();
      now_ = std::max(now_, it->first.first);
      auto fn = std::move(it->second);
      events_.erase(it);
      fn();
    }
  }

 private:
  std::map<std::pair<double, uint64_t>, std::function<void()>> events_;
  uint64_t seq_ = 0;
  double now_ = 0;
};

// Fluid model of the shared storage tier: every lane with pending bytes
// drains at min(per_writer_cap, aggregate / active_lanes). Rates are
// piecewise constant between events; the next piece boundary is always
// scheduled as an event, so completion callbacks fire at exact times.
class PfsModel {
 public:
  PfsModel(EventQueue& q, double aggregate, double per_writer_cap)
      : q_(q), aggregate_(aggregate), cap_(per_writer_cap) {}

  size_t create_lane() {
    lanes_.emplace_back();
    return lanes_.size() - 1;
  }

  void enqueue(size_t lane, double bytes, std::function<void()> on_done) {
    if (bytes <= 0) {
      if (on_done) on_done();
      return;
    }
    settle();
    Lane& l = lanes_[lane];
    if (l.q.empty()) ++active_;
    l.q.push_back({bytes, std::move(on_done)});
    reschedule();
  }

  bool idle() const { return active_ == 0; }

 private:
  struct Piece {
    double bytes;
    std::function<void()> on_done;
  };
  struct Lane {
    std::deque<Piece> q;
    double progress = 0;  // bytes drained into the head piece
  };

  double rate() const { return std::min(cap_, aggregate_ / static_cast<double>(active_)); }

  void settle() {
    const double t = q_.now();
    const double dt = t - last_t_;
    std::vector<std::function<void()>> fired;
    if (dt > 0 && active_ > 0) {
      const double advance = dt * rate();
      for (auto& lane : lanes_) {
        if (lane.q.empty()) continue;
        lane.progress += advance;
        while (!lane.q.empty() && lane.progress + kByteEps >= lane.q.front().bytes) {
          lane.progress -= lane.q.front().bytes;
          if (lane.progress < 0) lane.progress = 0;
          fired.push_back(std::move(lane.q.front().on_done));
          lane.q.pop_front();
          if (lane.q.empty()) {
            --active_;
            lane.progress = 0;
          }
        }
      }
    }
    last_t_ = t;
    for (auto& fn : fired) {
      if (fn) fn();
    }
  }

  void reschedule() {
    ++generation_;
    if (active_ == 0) return;
    const double r = rate();
    double dt_min = std::numeric_limits<double>::infinity();
    for (const auto& lane : lanes_) {
      if (lane.q.empty()) continue;
      dt_min = std::min(dt_min, (lane.q.front().bytes - lane.progress) / r);
    }
    if (dt_min < 0) dt_min = 0;
    q_.at(q_.now() + dt_min, [this, gen = generation_] {
      if (gen != generation_) return;
      settle();
      reschedule();
    });
  }

  EventQueue& q_;
  const double aggregate_;
  const double cap_;
  std::vector<Lane> lanes_;
  size_t active_ = 0;
  double last_t_ = 0;
  uint64_t generation_ = 0;
};

// One rank's device-to-host link: serial FIFO at a fixed rate, announcing
// each chunk as it lands so flushing can start mid-copy.
class Channel {
 public:
  Channel(EventQueue& q, double rate) : q_(q), rate_(rate) {}

  void submit(double bytes, std::function<void(double)> on_chunk, std::function<void()> on_done) {
    const double start = std::max(q_.now(), busy_until_);
    double cum = 0;
    while (cum < bytes) {
      const double piece = std::min(kSimChunk, bytes - cum);
      cum += piece;
      q_.at(start + cum / rate_, [on_chunk, piece] {
        if (on_chunk) on_chunk(piece);
      });
    }
    busy_until_ = start + bytes / rate_;
    q_.at(busy_until_, std::move(on_done));
  }

 private:
  EventQueue& q_;
  const double rate_;
  double busy_until_ = 0;
};

struct RankSim {
  std::vector<double> shard_bytes;  // plan order
  double total = 0;

  std::unique_ptr<Channel> channel;
  std::vector<size_t> lanes;
  size_t next_lane = 0;

  // Lazy
  std::unique_ptr<RingCore> ring;
  std::map<uint64_t, double> seg_flush_remaining;
  std::function<void()> space_waiter;

  // AsyncSnapshot
  double flush_outstanding = 0;
  std::function<void()> flush_idle_waiter;

  // update-barrier bookkeeping for the checkpoint in flight
  uint32_t copies_pending = 0;
  std::function<void(double)> barrier_release;

  double last_persist = 0;
};

class Sim {
 public:
  explicit Sim(const RunConfig& cfg)
      : cfg_(cfg),
        pfs_(queue_, cfg.cluster.b_pfs_aggregate, cfg.cluster.per_writer_cap),
        plan_(plan_checkpoint(cfg.topology, cfg.model, 0)) {
    const uint32_t R = cfg_.topology.ranks();
    ranks_.resize(R);
    for (uint32_t r = 0; r < R; ++r) {
      RankSim& rank = ranks_[r];
      for (const auto& shard : plan_.shards(r)) {
        rank.shard_bytes.push_back(static_cast<double>(shard.size_bytes));
        rank.total += static_cast<double>(shard.size_bytes);
      }
      rank.channel = std::make_unique<Channel>(queue_, cfg_.cluster.b_d2h_pinned);
      const uint32_t lane_count =
          cfg_.strategy.kind == StrategyKind::Chunked ? cfg_.strategy.chunked_threads : 1;
      for (uint32_t l = 0; l < lane_count; ++l) rank.lanes.push_back(pfs_.create_lane());
      if (cfg_.strategy.kind == StrategyKind::Lazy) {
        rank.ring = std::make_unique<RingCore>(cfg_.buffer_capacity);
        for (double s : rank.shard_bytes) {
          if (static_cast<uint64_t>(s) > cfg_.buffer_capacity) {
            throw ConfigError("host buffer (" + std::to_string(cfg_.buffer_capacity) +
                              " bytes) cannot hold a " + std::to_string(uint64_t(s)) +
                              "-byte shard");
          }
        }
      }
    }
  }

  Metrics run() {
    begin_iteration(1, 0.0);
    queue_.run();

    Metrics m;
    m.checkpoints = blocked_.size();
    m.checkpoint_bytes = plan_.total_bytes();
    m.blocked_each = blocked_;
    for (double b : blocked_) {
      m.blocked_per_checkpoint_s += b;
      m.max_blocked_s = std::max(m.max_blocked_s, b);
    }
    if (!blocked_.empty()) m.blocked_per_checkpoint_s /= static_cast<double>(blocked_.size());
    if (m.checkpoints > 0) {
      m.throughput_Bps = static_cast<double>(m.checkpoint_bytes) /
                         std::max(m.blocked_per_checkpoint_s, 1e-3);
    }
    for (double d : iteration_durations_) m.iteration_s += d;
    m.iteration_s /= static_cast<double>(iteration_durations_.size());
    double last_persist = 0;
    for (const auto& rank : ranks_) last_persist = std::max(last_persist, rank.last_persist);
    m.end_to_end_s = std::max(train_end_, last_persist);
    return m;
  }

 private:
  void begin_iteration(uint32_t i, double t) {
    iter_start_ = t;
    ready_count_ = 0;
    max_ready_ = t;
    iter_has_ckpt_ = cfg_.checkpoint_every > 0 && (i - 1) % cfg_.checkpoint_every == 0;
    for (uint32_t r = 0; r < ranks_.size(); ++r) {
      if (!iter_has_ckpt_ || ranks_[r].total <= 0) {
        rank_capture_done(r, i, t);
        continue;
      }
      auto done = [this, r, i](double cap_t) { rank_capture_done(r, i, cap_t); };
      switch (cfg_.strategy.kind) {
        case StrategyKind::Sync: capture_sync(r, std::move(done)); break;
        case StrategyKind::AsyncSnapshot: capture_async(r, std::move(done)); break;
        case StrategyKind::Chunked: capture_chunked(r, std::move(done)); break;
        case StrategyKind::Lazy: capture_lazy(r, 0, std::move(done)); break;
      }
    }
  }

  void rank_capture_done(uint32_t r, uint32_t i, double cap_t) {
    const double fb_end = cap_t + cfg_.phases.t_forward + cfg_.phases.t_backward;
    queue_.at(fb_end, [this, r, i, fb_end] {
      RankSim& rank = ranks_[r];
      if (iter_has_ckpt_ && rank.copies_pending > 0) {
        rank.barrier_release = [this, r, i](double t) { rank_ready(r, i, t); };
      } else {
        rank_ready(r, i, fb_end);
      }
    });
  }

  void rank_ready(uint32_t /*r*/, uint32_t i, double t) {
    ++ready_count_;
    max_ready_ = std::max(max_ready_, t);
    if (ready_count_ < ranks_.size()) return;

    const double update_start = max_ready_;  // collective: slowest rank gates everyone
    if (iter_has_ckpt_) {
      blocked_.push_back(update_start -
                         (iter_start_ + cfg_.phases.t_forward + cfg_.phases.t_backward));
    }
    const double update_end = update_start + cfg_.phases.t_update;
    iteration_durations_.push_back(update_end - iter_start_);
    if (i < cfg_.iterations) {
      queue_.at(update_end, [this, i, update_end] { begin_iteration(i + 1, update_end); });
    } else {
      train_end_ = update_end;
    }
  }

  void copy_complete(uint32_t r) {
    RankSim& rank = ranks_[r];
    if (rank.copies_pending > 0) --rank.copies_pending;
    if (rank.copies_pending == 0 && rank.barrier_release) {
      auto release = std::move(rank.barrier_release);
      rank.barrier_release = nullptr;
      release(queue_.now());
    }
  }

  // Serialize on the trainer, then write inline and wait for our share of the
  // storage tier; nothing overlaps training.
  void capture_sync(uint32_t r, std::function<void(double)> done) {
    RankSim& rank = ranks_[r];
    const double serialize_end = queue_.now() + rank.total / cfg_.cluster.b_d2h_pinned;
    queue_.at(serialize_end, [this, r, done = std::move(done)] {
      RankSim& rank = ranks_[r];
      pfs_.enqueue(rank.lanes[0], rank.total, [this, r, done] {
        ranks_[r].last_persist = queue_.now();
        done(queue_.now());
      });
    });
  }

  // Blocks for buffer allocation plus an unpinned copy of the whole rank
  // state (a previous checkpoint still flushing blocks first); the flush of
  // the complete snapshot then runs in the background. With the overlap flag
  // the final shard's allocation and copy ride into F+B and gate the update
  // barrier instead of the capture call.
  void capture_async(uint32_t r, std::function<void(double)> done) {
    RankSim& rank = ranks_[r];
    if (rank.flush_outstanding > kByteEps) {
      rank.flush_idle_waiter = [this, r, done]() mutable { capture_async(r, std::move(done)); };
      return;
    }
    const double last = rank.shard_bytes.empty() ? 0 : rank.shard_bytes.back();
    const bool overlap = cfg_.strategy.async_overlap_last_shard && rank.shard_bytes.size() > 1;
    const double blocking_bytes = overlap ? rank.total - last : rank.total;
    const double per_byte = 1.0 / cfg_.cluster.alloc_bandwidth + 1.0 / cfg_.cluster.b_d2h_unpinned;
    const double cap_end = queue_.now() + blocking_bytes * per_byte;
    const double snapshot_end = overlap ? cap_end + last * per_byte : cap_end;

    if (overlap) {
      ++rank.copies_pending;
      queue_.at(snapshot_end, [this, r] { copy_complete(r); });
    }
    queue_.at(snapshot_end, [this, r] {
      RankSim& rank = ranks_[r];
      rank.flush_outstanding += rank.total;
      pfs_.enqueue(rank.lanes[0], rank.total, [this, r] {
        RankSim& rank = ranks_[r];
        rank.flush_outstanding = 0;
        rank.last_persist = queue_.now();
        if (rank.flush_idle_waiter) {
          auto waiter = std::move(rank.flush_idle_waiter);
          rank.flush_idle_waiter = nullptr;
          waiter();
        }
      });
    });
    queue_.at(cap_end, [done = std::move(done), cap_end] { done(cap_end); });
  }

  // The trainer is blocked for the whole pinned copy; chunks fan out to this
  // rank's writer lanes as they land, so flushing overlaps the copy and
  // whatever training follows.
  void capture_chunked(uint32_t r, std::function<void(double)> done) {
    RankSim& rank = ranks_[r];
    const double start = queue_.now();
    double cum = 0;
    while (cum < rank.total) {
      const double piece = std::min(kSimChunk, rank.total - cum);
      cum += piece;
      const size_t lane = rank.lanes[rank.next_lane];
      rank.next_lane = (rank.next_lane + 1) % rank.lanes.size();
      queue_.at(start + cum / cfg_.cluster.b_d2h_pinned, [this, r, lane, piece] {
        pfs_.enqueue(lane, piece, [this, r] { ranks_[r].last_persist = queue_.now(); });
      });
    }
    const double cap_end = start + rank.total / cfg_.cluster.b_d2h_pinned;
    queue_.at(cap_end, [done = std::move(done), cap_end] { done(cap_end); });
  }

  // Reserve a ring segment per shard (waiting for flushes to free space when
  // the ring is full), queue the copies, and return; copies overlap F+B and
  // only their residual gates the update barrier.
  void capture_lazy(uint32_t r, size_t shard_idx, std::function<void(double)> done) {
    RankSim& rank = ranks_[r];
    while (shard_idx < rank.shard_bytes.size()) {
      const double bytes = rank.shard_bytes[shard_idx];
      auto seg = rank.ring->try_reserve(static_cast<uint64_t>(bytes), 0);
      if (!seg) {
        rank.space_waiter = [this, r, shard_idx, done = std::move(done)]() mutable {
          capture_lazy(r, shard_idx, std::move(done));
        };
        return;
      }
      lazy_submit_copy(r, seg->id, bytes);
      ++shard_idx;
    }
    done(queue_.now());
  }

  void lazy_submit_copy(uint32_t r, uint64_t segment, double bytes) {
    RankSim& rank = ranks_[r];
    ++rank.copies_pending;
    rank.seg_flush_remaining[segment] = bytes;
    rank.channel->submit(
        bytes,
        [this, r, segment](double piece) {
          pfs_.enqueue(ranks_[r].lanes[0], piece,
                       [this, r, segment, piece] { lazy_chunk_persisted(r, segment, piece); });
        },
        [this, r, segment] {
          ranks_[r].ring->mark_filled(segment);
          copy_complete(r);
        });
  }

  void lazy_chunk_persisted(uint32_t r, uint64_t segment, double piece) {
    RankSim& rank = ranks_[r];
    auto it = rank.seg_flush_remaining.find(segment);
    it->second -= piece;
    if (it->second > kByteEps) return;
    rank.seg_flush_remaining.erase(it);
    rank.ring->begin_flush(segment);
    rank.ring->release(segment);
    rank.last_persist = queue_.now();
    if (rank.space_waiter) {
      auto waiter = std::move(rank.space_waiter);
      rank.space_waiter = nullptr;
      waiter();
    }
  }

  const RunConfig& cfg_;
  EventQueue queue_;
  PfsModel pfs_;
  CheckpointPlan plan_;
  std::vector<RankSim> ranks_;

  double iter_start_ = 0;
  uint32_t ready_count_ = 0;
  double max_ready_ = 0;
  bool iter_has_ckpt_ = false;
  std::vector<double> blocked_;
  std::vector<double> iteration_durations_;
  double train_end_ = 0;
};

void validate_config(const RunConfig& cfg) {
  cfg.cluster.validate();
  cfg.topology.validate();
  if (cfg.topology.gpus_per_node != cfg.cluster.gpus_per_node ||
      cfg.topology.node_count != cfg.cluster.node_count) {
    throw ConfigError("cluster geometry disagrees with the parallel topology");
  }
  if (cfg.phases.t_forward < 0 || cfg.phases.t_backward < 0 || cfg.phases.t_update < 0) {
    throw ConfigError("phase durations must be >= 0");
  }
  if (cfg.iterations < 1) throw ConfigError("iterations must be >= 1");
  if (cfg.strategy.kind == StrategyKind::Chunked && cfg.strategy.chunked_threads < 1) {
    throw ConfigError("chunked strategy needs at least one writer thread");
  }
  if (cfg.strategy.kind == StrategyKind::Lazy && cfg.buffer_capacity == 0) {
    throw ConfigError("lazy strategy needs a host buffer");
  }
}

}  // namespace

Metrics simulate(const RunConfig& config) {
  validate_config(config);
  Sim sim(config);
  return sim.run();
}

std::vector<StrategyResult> compare_strategies(const RunConfig& base) {
  std::vector<StrategyResult> out;
  for (StrategyKind kind : {StrategyKind::Sync, StrategyKind::AsyncSnapshot,
                            StrategyKind::Chunked, StrategyKind::Lazy}) {
    RunConfig cfg = base;
    cfg.strategy.kind = kind;
    out.push_back({cfg.strategy, simulate(cfg)});
  }
  return out;
}

}  // namespace lzckpt::sim
