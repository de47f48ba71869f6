#pragma once

#include <cstdint>
#include <deque>
#include <optional>

namespace lzckpt {

enum class SegmentState { Reserved, Filled, Flushing, Free };

const char* to_string(SegmentState s);

struct Segment {
  uint64_t id = 0;
  uint64_t offset = 0;
  uint64_t length = 0;
  SegmentState state = SegmentState::Reserved;
  uint64_t ticket = 0;  // owning capture, for diagnostics
};

// Circular allocation over one contiguous span, FIFO lifecycle:
//
//   Reserved -> Filled -> Flushing -> Free
//
// Reservations are contiguous; one that would straddle the wrap point is
// placed at offset 0 and the skipped tail bytes stay occupied (a "gap") until
// the segments before them drain. Segments release strictly in reservation
// order. This class is a pure state machine: no locks, no waiting. The
// thread-safe HostBufferPool and the discrete-event simulator both drive it,
// so wrap and backpressure behavior is identical in both.
class RingCore {
public:
  explicit RingCore(uint64_t capacity);

  // nullopt when no contiguous span fits right now; the caller decides how to
  // wait. Sizes beyond the whole capacity can never succeed and are the
  // caller's error to raise.
  std::optional<Segment> try_reserve(uint64_t size, uint64_t ticket);

  void mark_filled(uint64_t id);   // Reserved -> Filled
  void begin_flush(uint64_t id);   // Filled -> Flushing
  void release(uint64_t id);       // Flushing -> Free; must be the oldest live segment

  uint64_t capacity() const { return capacity_; }
  uint64_t live_bytes() const { return live_bytes_; }
  bool empty() const { return entries_.empty(); }
  size_t live_segments() const;
  const Segment* find(uint64_t id) const;

  // Sum of released reservation bytes, used as a progress counter.
  uint64_t released_bytes() const { return released_bytes_; }

private:
  struct Entry {
    Segment seg;
    bool gap = false;  // skipped tail bytes at a wrap, no segment identity
  };

  Segment* find_mut(uint64_t id);
  void pop_leading_gaps();

  std::deque<Entry> entries_;  // reservation order, oldest first
  uint64_t capacity_ = 0;
  uint64_t head_ = 0;  // next allocation offset, in [0, capacity]
  uint64_t next_id_ = 1;
  uint64_t live_bytes_ = 0;
  uint64_t released_bytes_ = 0;
};

}  // namespace lzckpt
