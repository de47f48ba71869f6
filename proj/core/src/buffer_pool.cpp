#include "lzckpt/buffer_pool.hpp"

#include <string>

#include "lzckpt/errors.hpp"

namespace lzckpt {

HostBufferPool::HostBufferPool(uint64_t capacity, std::chrono::milliseconds reserve_timeout)
    : capacity_(capacity), reserve_timeout_(reserve_timeout), storage_(capacity), core_(capacity) {}

Segment HostBufferPool::reserve(uint64_t size, uint64_t ticket) {
  if (size == 0) {
    throw SizeExceedsCapacity("reserve: zero-length reservation");
  }
  if (size > capacity_) {
    throw SizeExceedsCapacity("reserve: " + std::to_string(size) +
                              " bytes exceeds pool capacity " + std::to_string(capacity_));
  }

  std::unique_lock lock(mutex_);
  uint64_t progress_mark = core_.released_bytes();
  for (;;) {
    if (auto seg = core_.try_reserve(size, ticket)) {
      reserved_bytes_total_ += size;
      return *seg;
    }
    // Wait for a release; the deadline only fires if nothing at all was
    // released in a whole timeout window.
    bool progressed = space_available_.wait_for(lock, reserve_timeout_, [&] {
      return core_.released_bytes() != progress_mark;
    });
    if (!progressed) {
      throw WaitTimeout("reserve: no flush progress within " +
                        std::to_string(reserve_timeout_.count()) + " ms waiting for " +
                        std::to_string(size) + " bytes");
    }
    progress_mark = core_.released_bytes();
  }
}

void HostBufferPool::mark_filled(uint64_t segment_id) {
  std::lock_guard lock(mutex_);
  core_.mark_filled(segment_id);
}

void HostBufferPool::begin_flush(uint64_t segment_id) {
  std::lock_guard lock(mutex_);
  core_.begin_flush(segment_id);
}

void HostBufferPool::release(uint64_t segment_id) {
  {
    std::lock_guard lock(mutex_);
    core_.release(segment_id);
  }
  space_available_.notify_all();
}

uint64_t HostBufferPool::live_bytes() const {
  std::lock_guard lock(mutex_);
  return core_.live_bytes();
}

size_t HostBufferPool::live_segments() const {
  std::lock_guard lock(mutex_);
  return core_.live_segments();
}

uint64_t HostBufferPool::total_reserved_bytes() const {
  std::lock_guard lock(mutex_);
  return reserved_bytes_total_;
}

uint64_t HostBufferPool::total_released_bytes() const {
  std::lock_guard lock(mutex_);
  return core_.released_bytes();
}

SegmentState HostBufferPool::segment_state(uint64_t segment_id) const {
  std::lock_guard lock(mutex_);
  if (const Segment* s = core_.find(segment_id)) return s->state;
  throw IllegalTransition("segment_state: unknown segment " + std::to_string(segment_id));
}

Segment HostBufferPool::segment_info(uint64_t segment_id) const {
  std::lock_guard lock(mutex_);
  if (const Segment* s = core_.find(segment_id)) return *s;
  throw IllegalTransition("segment_info: unknown segment " + std::to_string(segment_id));
}

}  // namespace lzckpt
