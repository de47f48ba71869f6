#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <mutex>
#include <vector>

#include "lzckpt/ring_core.hpp"

namespace lzckpt {

// Pre-allocated host staging memory shared by one rank's capture path,
// emulating the pinned region a real engine registers with the device
// runtime once and reuses for every checkpoint. reserve() blocks while the
// ring is too full, which is exactly the backpressure that throttles capture
// when flushes fall behind.
class HostBufferPool {
public:
  static constexpr std::chrono::milliseconds kDefaultReserveTimeout{60'000};

  explicit HostBufferPool(uint64_t capacity,
                          std::chrono::milliseconds reserve_timeout = kDefaultReserveTimeout);

  HostBufferPool(const HostBufferPool&) = delete;
  HostBufferPool& operator=(const HostBufferPool&) = delete;

  // Blocks until a contiguous span is available. Throws SizeExceedsCapacity if
  // the request can never fit, WaitTimeout if the deadline elapses with no
  // release progress at all (a stalled flush pipeline; progress re-arms it).
  Segment reserve(uint64_t size, uint64_t ticket);

  void mark_filled(uint64_t segment_id);
  void begin_flush(uint64_t segment_id);
  void release(uint64_t segment_id);

  std::byte* segment_data(const Segment& seg) { return storage_.data() + seg.offset; }
  const std::byte* segment_data(const Segment& seg) const {
    return storage_.data() + seg.offset;
  }

  uint64_t capacity() const { return capacity_; }
  uint64_t live_bytes() const;
  size_t live_segments() const;
  uint64_t total_reserved_bytes() const;  // lifetime counter
  uint64_t total_released_bytes() const;
  SegmentState segment_state(uint64_t segment_id) const;  // IllegalTransition if unknown
  Segment segment_info(uint64_t segment_id) const;

private:
  const uint64_t capacity_;
  const std::chrono::milliseconds reserve_timeout_;
  std::vector<std::byte> storage_;

  mutable std::mutex mutex_;
  std::condition_variable space_available_;
  RingCore core_;
  uint64_t reserved_bytes_total_ = 0;
};

}  // namespace lzckpt
