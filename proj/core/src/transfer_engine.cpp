#include "lzckpt/transfer_engine.hpp"

#include <algorithm>
#include <cstring>

#include "lzckpt/errors.hpp"

namespace lzckpt {

void DeviceRegion::mutate(const std::function<void(std::span<std::byte>)>& fn) {
  std::lock_guard lock(mutex_);
  fn(std::span<std::byte>(bytes_));
  version_.fetch_add(1, std::memory_order_release);
}

void DeviceRegion::write(uint64_t offset, std::span<const std::byte> data) {
  std::lock_guard lock(mutex_);
  if (offset + data.size() > bytes_.size()) {
    throw Error("DeviceRegion::write out of bounds");
  }
  std::memcpy(bytes_.data() + offset, data.data(), data.size());
  version_.fetch_add(1, std::memory_order_release);
}

void DeviceRegion::read_chunk(uint64_t offset, std::span<std::byte> out) const {
  std::lock_guard lock(mutex_);
  if (offset + out.size() > bytes_.size()) {
    throw Error("DeviceRegion::read_chunk out of bounds");
  }
  std::memcpy(out.data(), bytes_.data() + offset, out.size());
}

std::vector<std::byte> DeviceRegion::clone_bytes() const {
  std::lock_guard lock(mutex_);
  return bytes_;
}

TransferEngine::TransferEngine(HostBufferPool& pool, ThrottledChannel channel)
    : pool_(pool), channel_(channel), worker_([this] { worker_loop(); }) {}

TransferEngine::~TransferEngine() {
  {
    std::unique_lock lock(mutex_);
    // Queued work runs to completion; we only stop accepting new tasks.
    stopping_ = true;
  }
  work_ready_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void TransferEngine::submit_copies(uint64_t ticket,
                                   std::vector<std::shared_ptr<CopyTask>> tasks) {
  if (tasks.empty()) {
    std::lock_guard lock(mutex_);
    tickets_.try_emplace(ticket);  // makes wait_pending well-defined
    return;
  }

  uint64_t added = 0;
  for (const auto& t : tasks) {
    if (!t) throw Error("submit_copies: null task");
    if (t->length == 0) throw Error("submit_copies: zero-length copy");
    bool has_region = static_cast<bool>(t->source.region);
    bool has_blob = static_cast<bool>(t->source.host_blob);
    if (has_region == has_blob) {
      throw Error("submit_copies: task needs exactly one source");
    }
    uint64_t src_size = has_region ? t->source.region->size() : t->source.host_blob->size();
    if (t->src_offset + t->length > src_size) {
      throw Error("submit_copies: source range out of bounds");
    }
    if (pool_.segment_state(t->segment_id) != SegmentState::Reserved) {
      throw IllegalTransition("submit_copies: destination segment " +
                              std::to_string(t->segment_id) + " is not Reserved");
    }
    t->ticket = ticket;
    if (has_region) t->captured_version = t->source.region->version();
    added += t->length;
  }

  {
    std::lock_guard lock(mutex_);
    if (stopping_) throw Error("submit_copies: engine is shutting down");
    auto& prog = tickets_[ticket];
    prog.expected += tasks.size();
    for (auto& t : tasks) queue_.push_back(std::move(t));
  }
  bytes_submitted_.fetch_add(added);
  work_ready_.notify_one();
}

void TransferEngine::worker_loop() {
  for (;;) {
    std::shared_ptr<CopyTask> task;
    {
      std::unique_lock lock(mutex_);
      work_ready_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;  // stopping and drained
      task = std::move(queue_.front());
      queue_.pop_front();
      ++in_flight_;
    }

    run_task(*task);

    {
      std::lock_guard lock(mutex_);
      --in_flight_;
      auto& prog = tickets_[task->ticket];
      ++prog.completed;
      if (task->state.load() == CopyState::Torn) prog.torn = true;
    }
    progress_.notify_all();
  }
}

void TransferEngine::run_task(CopyTask& task) {
  task.state.store(CopyState::Copying);

  Segment seg = pool_.segment_info(task.segment_id);
  std::byte* dst_base = pool_.segment_data(seg) + task.dst_offset;

  const bool paced = channel_.bandwidth_Bps > 0;
  auto now = std::chrono::steady_clock::now();
  if (pace_point_ < now) pace_point_ = now;

  const uint64_t quantum = std::max<uint64_t>(channel_.chunk_quantum, 1);
  uint64_t done = 0;
  while (done < task.length) {
    uint64_t n = std::min(quantum, task.length - done);
    bool last = done + n == task.length;

    if (task.source.region) {
      task.source.region->read_chunk(task.src_offset + done,
                                     std::span<std::byte>(dst_base + done, n));
    } else {
      std::memcpy(dst_base + done, task.source.host_blob->data() + task.src_offset + done, n);
    }

    if (paced) {
      pace_point_ += std::chrono::nanoseconds(
          static_cast<int64_t>(double(n) / channel_.bandwidth_Bps * 1e9));
      std::this_thread::sleep_until(pace_point_);
    }

    if (last) {
      // Decide torn-ness before the final chunk is announced, so a consumer
      // that finalizes on the last chunk can already see the verdict.
      bool torn = task.source.region &&
                  task.source.region->version() != task.captured_version;
      task.state.store(torn ? CopyState::Torn : CopyState::Done);
      if (torn && torn_cb_) torn_cb_(task);
      if (task.final_for_segment) pool_.mark_filled(task.segment_id);
    }

    bytes_delivered_.fetch_add(n);
    if (chunk_cb_) chunk_cb_(task.segment_id, task.dst_offset + done, n);
    done += n;
  }
}

void TransferEngine::wait_pending(uint64_t ticket) {
  std::unique_lock lock(mutex_);
  auto it = tickets_.find(ticket);
  if (it == tickets_.end()) return;  // nothing was submitted
  progress_.wait(lock, [&] {
    const auto& p = tickets_[ticket];
    return p.completed == p.expected;
  });
  if (tickets_[ticket].torn) {
    throw TornSnapshot("ticket " + std::to_string(ticket) +
                       ": a source region changed while its copy was pending");
  }
}

bool TransferEngine::ticket_torn(uint64_t ticket) const {
  std::lock_guard lock(mutex_);
  auto it = tickets_.find(ticket);
  return it != tickets_.end() && it->second.torn;
}

void TransferEngine::drain() {
  std::unique_lock lock(mutex_);
  progress_.wait(lock, [&] { return queue_.empty() && in_flight_ == 0; });
}

}  // namespace lzckpt
