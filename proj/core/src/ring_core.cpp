#include "lzckpt/ring_core.hpp"

#include <string>

#include "lzckpt/errors.hpp"

namespace lzckpt {

const char* to_string(SegmentState s) {
  switch (s) {
    case SegmentState::Reserved: return "Reserved";
    case SegmentState::Filled: return "Filled";
    case SegmentState::Flushing: return "Flushing";
    case SegmentState::Free: return "Free";
  }
  return "?";
}

RingCore::RingCore(uint64_t capacity) : capacity_(capacity) {}

std::optional<Segment> RingCore::try_reserve(uint64_t size, uint64_t ticket) {
  if (size == 0 || size > capacity_) return std::nullopt;

  uint64_t offset = 0;
  bool needs_gap = false;

  if (entries_.empty()) {
    head_ = 0;
    offset = 0;
  } else {
    uint64_t tail = entries_.front().seg.offset;
    if (head_ > tail) {
      // Live span is [tail, head): free space splits into the run up to
      // capacity and the run before tail.
      if (size <= capacity_ - head_) {
        offset = head_;
      } else if (size <= tail) {
        needs_gap = head_ < capacity_;
        offset = 0;
      } else {
        return std::nullopt;
      }
    } else if (head_ < tail) {
      // Already wrapped: only the middle run [head, tail) is free.
      if (size > tail - head_) return std::nullopt;
      offset = head_;
    } else {
      return std::nullopt;  // head == tail with live bytes: full
    }
  }

  if (needs_gap) {
    Entry gap;
    gap.gap = true;
    gap.seg.offset = head_;
    gap.seg.length = capacity_ - head_;
    entries_.push_back(gap);
  }

  Entry e;
  e.seg.id = next_id_++;
  e.seg.offset = offset;
  e.seg.length = size;
  e.seg.state = SegmentState::Reserved;
  e.seg.ticket = ticket;
  entries_.push_back(e);

  head_ = offset + size;
  if (head_ == capacity_) head_ = 0;
  live_bytes_ += size;
  return e.seg;
}

Segment* RingCore::find_mut(uint64_t id) {
  for (auto& e : entries_) {
    if (!e.gap && e.seg.id == id) return &e.seg;
  }
  return nullptr;
}

const Segment* RingCore::find(uint64_t id) const {
  for (const auto& e : entries_) {
    if (!e.gap && e.seg.id == id) return &e.seg;
  }
  return nullptr;
}

size_t RingCore::live_segments() const {
  size_t n = 0;
  for (const auto& e : entries_) {
    if (!e.gap) ++n;
  }
  return n;
}

void RingCore::mark_filled(uint64_t id) {
  Segment* s = find_mut(id);
  if (!s) throw IllegalTransition("mark_filled: unknown segment " + std::to_string(id));
  if (s->state != SegmentState::Reserved) {
    throw IllegalTransition("mark_filled: segment " + std::to_string(id) + " is " +
                            to_string(s->state) + ", expected Reserved");
  }
  s->state = SegmentState::Filled;
}

void RingCore::begin_flush(uint64_t id) {
  Segment* s = find_mut(id);
  if (!s) throw IllegalTransition("begin_flush: unknown segment " + std::to_string(id));
  if (s->state != SegmentState::Filled) {
    throw IllegalTransition("begin_flush: segment " + std::to_string(id) + " is " +
                            to_string(s->state) + ", expected Filled");
  }
  s->state = SegmentState::Flushing;
}

void RingCore::pop_leading_gaps() {
  while (!entries_.empty() && entries_.front().gap) entries_.pop_front();
}

void RingCore::release(uint64_t id) {
  if (entries_.empty()) {
    throw IllegalTransition("release: pool is empty");
  }
  // Gaps never lead: they are popped together with the segment before them.
  Entry& front = entries_.front();
  if (front.gap || front.seg.id != id) {
    throw IllegalTransition("release: segment " + std::to_string(id) +
                            " is not the oldest live segment (FIFO release only)");
  }
  if (front.seg.state != SegmentState::Flushing) {
    throw IllegalTransition("release: segment " + std::to_string(id) + " is " +
                            to_string(front.seg.state) + ", expected Flushing");
  }
  live_bytes_ -= front.seg.length;
  released_bytes_ += front.seg.length;
  entries_.pop_front();
  pop_leading_gaps();
  if (entries_.empty()) head_ = 0;
}

}  // namespace lzckpt
