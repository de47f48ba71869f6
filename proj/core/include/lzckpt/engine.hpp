#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "lzckpt/buffer_pool.hpp"
#include "lzckpt/flush_pipeline.hpp"
#include "lzckpt/manifest.hpp"
#include "lzckpt/state_tree.hpp"
#include "lzckpt/topology.hpp"
#include "lzckpt/transfer_engine.hpp"

namespace lzckpt {

class Engine;

enum class TicketStatus { InFlight, HostResident, Persisted, Failed };
const char* to_string(TicketStatus s);

// Handle for one rank's checkpoint of one step. Capture returns as soon as
// every shard has a reserved host segment and queued copies; the ticket then
// advances on its own as copies land (HostResident) and shard files finish
// writing (Persisted). A source mutation before the update barrier, or an
// interrupted flush, parks it at Failed.
class CaptureTicket {
public:
  uint64_t id() const { return id_; }
  uint64_t step() const { return step_; }
  const RankCoord& rank() const { return rank_; }

  TicketStatus status() const;
  bool torn() const;
  std::string failure_reason() const;

  std::vector<std::filesystem::path> shard_files() const;
  uint64_t payload_bytes() const { return payload_bytes_; }

private:
  friend class Engine;

  struct FileSlot {
    std::filesystem::path path;
    uint64_t flush_file_id = 0;
    uint64_t segment_id = 0;
  };

  uint64_t id_ = 0;
  uint64_t step_ = 0;
  RankCoord rank_;
  uint64_t payload_bytes_ = 0;
  std::vector<FileSlot> files_;

  mutable std::mutex mutex_;
  std::condition_variable done_cv_;
  Engine* engine_ = nullptr;  // cleared when the engine shuts down
  size_t files_done_ = 0;
  bool barrier_passed_ = false;
  bool torn_ = false;
  bool failed_ = false;
  std::string failure_reason_;
};

struct EngineConfig {
  std::filesystem::path checkpoint_root;
  uint64_t host_buffer_bytes = 16'000'000'000ull;
  ThrottledChannel copy_channel{};
  FlushConfig flush{};
  // Leaves at or above this size stream through the copy channel as their own
  // payload entries; smaller ones ride along inside the shard metadata entry.
  uint64_t large_leaf_threshold = 1ull << 20;
  std::chrono::milliseconds reserve_timeout{60'000};
};

// Per-rank checkpointing engine: circular pinned host pool, one copy channel,
// one flush writer. capture() is the only call meant for the trainer thread
// and blocks only while waiting for pool space (backpressure from flushes
// that have not caught up); everything downstream of the reservation runs on
// the engine's own threads.
class Engine {
public:
  Engine(EngineConfig config, ParallelTopology topo, RankCoord rank);
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // Positional contract: the state tree's top-level children, in name order,
  // correspond one-to-one with this rank's plan shards, and each subtree's
  // leaf bytes must sum to its shard's size.
  std::shared_ptr<CaptureTicket> capture(const CheckpointPlan& plan, const StateTree& state,
                                         uint64_t step);

  // Blocks until the ticket's device-to-host copies are done, then throws
  // TornSnapshot if any source changed under a pending copy. Must return
  // before the training loop mutates captured regions. Idempotent.
  void update_barrier(const std::shared_ptr<CaptureTicket>& ticket);

  void wait_persisted(const std::shared_ptr<CaptureTicket>& ticket);
  void drain();  // all tickets, copies and flushes

  // Rebuilds this rank's state for a committed step. Restored device leaves
  // come back as fresh regions at version zero.
  StateTree restore(const ManifestStore& manifest, uint64_t step) const;

  struct Counters {
    uint64_t captures = 0;
    uint64_t bytes_captured = 0;  // payload bytes, metadata included
    double capture_seconds = 0;   // cumulative; contains reserve waits
    double barrier_seconds = 0;   // cumulative update_barrier blocking
    double last_capture_seconds = 0;
    double last_barrier_seconds = 0;
  };
  Counters counters() const;

  HostBufferPool& pool() { return pool_; }
  TransferEngine& transfers() { return transfers_; }
  FlushPipeline& flush() { return flush_; }
  const std::filesystem::path& checkpoint_root() const { return config_.checkpoint_root; }
  const RankCoord& rank() const { return rank_; }

private:
  friend class CaptureTicket;

  void on_file_done(const std::shared_ptr<CaptureTicket>& ticket, FlushFileState state);
  void on_torn(uint64_t ticket_id);
  TicketStatus ticket_status(const CaptureTicket& t) const;

  const EngineConfig config_;
  const ParallelTopology topo_;
  const RankCoord rank_;

  HostBufferPool pool_;
  TransferEngine transfers_;
  FlushPipeline flush_;

  mutable std::mutex mutex_;
  std::unordered_map<uint64_t, std::weak_ptr<CaptureTicket>> tickets_;
  uint64_t next_ticket_ = 1;
  Counters counters_;
};

// Reads one payload entry of a shard file into memory.
std::vector<std::byte> read_entry(const std::filesystem::path& file,
                                  const CheckpointFileHeader& header, std::string_view key);

}  // namespace lzckpt
