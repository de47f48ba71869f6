#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "lzckpt/buffer_pool.hpp"
#include "lzckpt/checksum.hpp"
#include "lzckpt/format.hpp"

namespace lzckpt {

struct FlushConfig {
  double storage_bandwidth_Bps = 0;  // <= 0 means unthrottled
  bool fsync_on_finalize = true;
};

enum class FlushFileState { Pending, Persisted, Abandoned };

// Host-to-storage writer for one rank. Files are registered with their header
// offsets already fixed; payload bytes arrive as chunk notifications straight
// off the copy channel and are written at their precomputed file offsets, so
// flushing overlaps the device-to-host copy. The header, carrying the
// finalized per-entry checksums, is written last: a file without a valid
// header is by construction an incomplete checkpoint shard.
//
// A segment is released back to the pool only once all of its payload has
// been written (and the header finalized, for non-abandoned files), which is
// what makes pool backpressure track storage progress.
class FlushPipeline {
public:
  using FileDoneCallback = std::function<void(uint64_t file_id, FlushFileState)>;

  FlushPipeline(HostBufferPool& pool, FlushConfig config);
  ~FlushPipeline();

  FlushPipeline(const FlushPipeline&) = delete;
  FlushPipeline& operator=(const FlushPipeline&) = delete;

  // Header entry checksums may be zero; they are filled in as payload streams
  // through. Expected payload is header.payload_end() - header.serialized_size()
  // and must equal the segment's length.
  uint64_t register_file(std::filesystem::path path, CheckpointFileHeader header,
                         uint64_t segment_id, FileDoneCallback on_done = {});

  // Chunk of the segment's payload is resident and may be written. Chunks for
  // one segment must arrive in byte order (the copy channel guarantees this).
  void enqueue_flush(uint64_t segment_id, uint64_t segment_offset, uint64_t length);

  // Drop the header finalization for this file (torn capture, aborted step).
  // Payload writing and segment release still run their course.
  void abandon(uint64_t file_id);

  // Simulated mid-flush crash: after `bytes` more payload bytes, stop touching
  // the disk; affected files end Abandoned, segments still release.
  void inject_failure_after(uint64_t bytes);

  void drain();  // until every registered file reached a terminal state
  FlushFileState file_state(uint64_t file_id) const;

  uint64_t bytes_written() const;
  uint64_t files_persisted() const;
  size_t queue_depth() const;

private:
  struct FileRecord {
    std::filesystem::path path;
    CheckpointFileHeader header;
    uint64_t segment_id = 0;
    uint64_t header_size = 0;
    uint64_t expected_payload = 0;
    uint64_t written_payload = 0;
    size_t entry_cursor = 0;   // which entry the stream is inside
    uint64_t entry_done = 0;   // bytes hashed of that entry
    Fnv64 entry_hash;
    int fd = -1;
    bool abandoned = false;
    FlushFileState state = FlushFileState::Pending;
    FileDoneCallback on_done;
  };

  struct Chunk {
    uint64_t segment_id;
    uint64_t offset;
    uint64_t length;
  };

  void worker_loop();
  void write_chunk(FileRecord& f, const Chunk& c);
  void finalize(FileRecord& f);

  HostBufferPool& pool_;
  const FlushConfig config_;

  mutable std::mutex mutex_;
  std::condition_variable work_ready_;
  std::condition_variable file_done_;
  std::deque<Chunk> queue_;
  std::unordered_map<uint64_t, uint64_t> segment_to_file_;
  std::unordered_map<uint64_t, FileRecord> files_;
  uint64_t next_file_id_ = 1;
  uint64_t pending_files_ = 0;
  uint32_t callbacks_in_flight_ = 0;
  uint64_t bytes_written_ = 0;
  uint64_t files_persisted_ = 0;
  int64_t fail_after_ = -1;  // < 0: healthy
  std::string worker_error_;
  bool stopping_ = false;

  std::chrono::steady_clock::time_point pace_point_{};
  std::thread worker_;
};

}  // namespace lzckpt
