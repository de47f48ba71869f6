#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <thread>
#include <unordered_map>
#include <vector>

#include "lzckpt/buffer_pool.hpp"

namespace lzckpt {

// Emulated device allocation. A version counter tracks update-phase writes;
// copy tasks record the version they saw at submit and compare at completion,
// which is how torn snapshots are detected. The internal lock pairs mutations
// with chunk-granularity reads on the copy path, so a concurrent mutation
// lands between chunk copies rather than inside one.
class DeviceRegion {
public:
  explicit DeviceRegion(uint64_t size) : bytes_(size) {}
  explicit DeviceRegion(std::vector<std::byte> initial) : bytes_(std::move(initial)) {}

  uint64_t size() const { return bytes_.size(); }
  uint64_t version() const { return version_.load(std::memory_order_acquire); }

  // One call, one version bump: the granularity of an update-phase mutation.
  void mutate(const std::function<void(std::span<std::byte>)>& fn);
  void write(uint64_t offset, std::span<const std::byte> data);

  void read_chunk(uint64_t offset, std::span<std::byte> out) const;
  std::vector<std::byte> clone_bytes() const;

private:
  mutable std::mutex mutex_;
  std::vector<std::byte> bytes_;
  std::atomic<uint64_t> version_{0};
};

// Bandwidth model for one copy link. bandwidth_Bps <= 0 disables pacing.
struct ThrottledChannel {
  double bandwidth_Bps = 25e9;
  uint64_t chunk_quantum = 64ull << 20;
};

enum class CopyState { Queued, Copying, Done, Torn };

// Either a device region (versioned, torn-checkable) or an immutable host
// blob such as the serialized small-leaf metadata.
struct CopySource {
  std::shared_ptr<DeviceRegion> region;
  std::shared_ptr<const std::vector<std::byte>> host_blob;
};

struct CopyTask {
  uint64_t ticket = 0;
  uint64_t shard_id = 0;
  CopySource source;
  uint64_t src_offset = 0;
  uint64_t length = 0;
  uint64_t segment_id = 0;
  uint64_t dst_offset = 0;  // within the segment
  uint64_t captured_version = 0;
  bool final_for_segment = false;  // completing this task fills the segment
  std::atomic<CopyState> state{CopyState::Queued};
};

// Single-worker FIFO copy engine for one rank: drains tasks in submission
// order, paces to the channel bandwidth in chunk_quantum steps, and announces
// each resident chunk so flushing can begin long before a copy completes.
class TransferEngine {
public:
  // (segment_id, offset within segment, length); runs on the worker thread.
  using ChunkCallback = std::function<void(uint64_t, uint64_t, uint64_t)>;
  using TornCallback = std::function<void(const CopyTask&)>;

  TransferEngine(HostBufferPool& pool, ThrottledChannel channel);
  ~TransferEngine();

  TransferEngine(const TransferEngine&) = delete;
  TransferEngine& operator=(const TransferEngine&) = delete;

  // Both callbacks must be installed before the first submit.
  void set_chunk_callback(ChunkCallback cb) { chunk_cb_ = std::move(cb); }
  void set_torn_callback(TornCallback cb) { torn_cb_ = std::move(cb); }

  // Non-blocking: validates, enqueues, returns. Destinations must be Reserved.
  void submit_copies(uint64_t ticket, std::vector<std::shared_ptr<CopyTask>> tasks);

  // Blocks until every task submitted under this ticket has completed, then
  // throws TornSnapshot if any of them observed a source mutation.
  void wait_pending(uint64_t ticket);
  bool ticket_torn(uint64_t ticket) const;

  void drain();  // wait for the whole queue, all tickets

  uint64_t bytes_submitted() const { return bytes_submitted_.load(); }
  uint64_t bytes_delivered() const { return bytes_delivered_.load(); }
  const ThrottledChannel& channel() const { return channel_; }

private:
  struct TicketProgress {
    uint64_t expected = 0;
    uint64_t completed = 0;
    bool torn = false;
  };

  void worker_loop();
  void run_task(CopyTask& task);

  HostBufferPool& pool_;
  const ThrottledChannel channel_;
  ChunkCallback chunk_cb_;
  TornCallback torn_cb_;

  mutable std::mutex mutex_;
  std::condition_variable work_ready_;
  std::condition_variable progress_;
  std::deque<std::shared_ptr<CopyTask>> queue_;
  std::unordered_map<uint64_t, TicketProgress> tickets_;
  uint64_t in_flight_ = 0;
  bool stopping_ = false;

  std::atomic<uint64_t> bytes_submitted_{0};
  std::atomic<uint64_t> bytes_delivered_{0};
  std::chrono::steady_clock::time_point pace_point_{};

  std::thread worker_;
};

}  // namespace lzckpt
