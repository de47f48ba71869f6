#include "lzckpt/flush_pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <utility>

#include "lzckpt/errors.hpp"

namespace lzckpt {

namespace {

void pwrite_all(int fd, const std::byte* data, uint64_t length, uint64_t offset,
                const std::filesystem::path& path) {
  while (length > 0) {
    ssize_t n = ::pwrite(fd, data, length, static_cast<off_t>(offset));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write failed for " + path.string() + ": " + std::strerror(errno));
    }
    data += n;
    offset += static_cast<uint64_t>(n);
    length -= static_cast<uint64_t>(n);
  }
}

}  // namespace

FlushPipeline::FlushPipeline(HostBufferPool& pool, FlushConfig config)
    : pool_(pool), config_(config) {
  worker_ = std::thread([this] { worker_loop(); });
}

FlushPipeline::~FlushPipeline() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  work_ready_.notify_all();
  worker_.join();
  for (auto& [id, f] : files_) {
    if (f.fd >= 0) ::close(f.fd);
  }
}

uint64_t FlushPipeline::register_file(std::filesystem::path path, CheckpointFileHeader header,
                                      uint64_t segment_id, FileDoneCallback on_done) {
  const uint64_t header_size = header.serialized_size();
  const uint64_t expected = header.payload_end() - header_size;
  if (expected == 0) throw Error("flush file with empty payload: " + path.string());

  Segment seg = pool_.segment_info(segment_id);
  if (seg.length != expected) {
    throw Error("segment length does not match file payload for " + path.string());
  }

  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  int fd = ::open(path.c_str(), O_CREAT | O_WRONLY | O_TRUNC, 0644);
  if (fd < 0) {
    throw IoError("cannot create " + path.string() + ": " + std::strerror(errno));
  }

  std::lock_guard lock(mutex_);
  const uint64_t id = next_file_id_++;
  FileRecord f;
  f.path = std::move(path);
  f.header = std::move(header);
  f.segment_id = segment_id;
  f.header_size = header_size;
  f.expected_payload = expected;
  f.fd = fd;
  f.on_done = std::move(on_done);
  files_.emplace(id, std::move(f));
  segment_to_file_.emplace(segment_id, id);
  ++pending_files_;
  return id;
}

void FlushPipeline::enqueue_flush(uint64_t segment_id, uint64_t segment_offset, uint64_t length) {
  {
    std::lock_guard lock(mutex_);
    queue_.push_back(Chunk{segment_id, segment_offset, length});
  }
  work_ready_.notify_one();
}

void FlushPipeline::abandon(uint64_t file_id) {
  std::lock_guard lock(mutex_);
  auto it = files_.find(file_id);
  if (it == files_.end()) throw Error("abandon: unknown flush file");
  it->second.abandoned = true;
}

void FlushPipeline::inject_failure_after(uint64_t bytes) {
  std::lock_guard lock(mutex_);
  fail_after_ = static_cast<int64_t>(bytes);
}

void FlushPipeline::drain() {
  std::unique_lock lock(mutex_);
  // Waiting on pending_files_ alone is not enough: a bad chunk can sit in the
  // queue with no file registered for it, and a done-callback may still be
  // running after its file left the pending count.
  file_done_.wait(lock, [this] {
    return !worker_error_.empty() ||
           (pending_files_ == 0 && queue_.empty() && callbacks_in_flight_ == 0);
  });
  if (!worker_error_.empty()) throw Error("flush worker: " + worker_error_);
}

FlushFileState FlushPipeline::file_state(uint64_t file_id) const {
  std::lock_guard lock(mutex_);
  auto it = files_.find(file_id);
  if (it == files_.end()) throw Error("file_state: unknown flush file");
  return it->second.state;
}

uint64_t FlushPipeline::bytes_written() const {
  std::lock_guard lock(mutex_);
  return bytes_written_;
}

uint64_t FlushPipeline::files_persisted() const {
  std::lock_guard lock(mutex_);
  return files_persisted_;
}

size_t FlushPipeline::queue_depth() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

void FlushPipeline::worker_loop() {
  std::unique_lock lock(mutex_);
  while (true) {
    work_ready_.wait(lock, [this] { return !queue_.empty() || stopping_; });
    if (queue_.empty() && stopping_) return;
    Chunk c = queue_.front();
    queue_.pop_front();

    auto seg_it = segment_to_file_.find(c.segment_id);
    if (seg_it == segment_to_file_.end()) {
      worker_error_ = "chunk for unregistered segment " + std::to_string(c.segment_id);
      file_done_.notify_all();
      return;
    }
    FileRecord& f = files_.at(seg_it->second);
    if (c.offset != f.written_payload) {
      worker_error_ = "out-of-order chunk for " + f.path.string();
      file_done_.notify_all();
      return;
    }

    try {
      write_chunk(f, c);
    } catch (const std::exception& e) {
      worker_error_ = e.what();
      file_done_.notify_all();
      return;
    }

    if (f.written_payload == f.expected_payload) {
      try {
        finalize(f);
      } catch (const std::exception& e) {
        worker_error_ = e.what();
        file_done_.notify_all();
        return;
      }
      const uint64_t id = seg_it->second;
      segment_to_file_.erase(seg_it);
      --pending_files_;
      auto cb = f.on_done;
      auto state = f.state;
      if (cb) {
        ++callbacks_in_flight_;
        lock.unlock();
        cb(id, state);
        lock.lock();
        --callbacks_in_flight_;
      }
      file_done_.notify_all();
    }
  }
}

// Runs under mutex_. Disk writes happen inline; the queue in front of this
// worker is what absorbs a copy channel that outruns the storage tier.
void FlushPipeline::write_chunk(FileRecord& f, const Chunk& c) {
  const std::byte* src = pool_.segment_data(pool_.segment_info(c.segment_id)) + c.offset;

  uint64_t writable = c.length;
  if (fail_after_ >= 0) {
    writable = std::min<uint64_t>(writable, static_cast<uint64_t>(fail_after_));
    fail_after_ -= static_cast<int64_t>(writable);
    if (writable < c.length) f.abandoned = true;
  }
  if (writable > 0) {
    if (config_.storage_bandwidth_Bps > 0) {
      auto cost = std::chrono::duration<double>(static_cast<double>(writable) /
                                                config_.storage_bandwidth_Bps);
      auto now = std::chrono::steady_clock::now();
      if (pace_point_ < now) pace_point_ = now;
      pace_point_ += std::chrono::duration_cast<std::chrono::steady_clock::duration>(cost);
      std::this_thread::sleep_until(pace_point_);
    }
    pwrite_all(f.fd, src, writable, f.header_size + c.offset, f.path);
    bytes_written_ += writable;
  }

  // Fold the chunk into the per-entry checksums. Entries are laid out densely
  // in payload order, but tolerate gaps: unclaimed bytes are written, not hashed.
  uint64_t pos = f.header_size + c.offset;
  uint64_t remaining = c.length;
  while (remaining > 0 && f.entry_cursor < f.header.entries.size()) {
    HeaderEntry& e = f.header.entries[f.entry_cursor];
    if (pos < e.offset) {
      uint64_t skip = std::min(remaining, e.offset - pos);
      pos += skip;
      remaining -= skip;
      continue;
    }
    uint64_t take = std::min(remaining, e.length - f.entry_done);
    f.entry_hash.update(src + (pos - f.header_size - c.offset), take);
    f.entry_done += take;
    pos += take;
    remaining -= take;
    if (f.entry_done == e.length) {
      e.checksum = f.entry_hash.digest();
      f.entry_hash.reset();
      f.entry_done = 0;
      ++f.entry_cursor;
    }
  }
  f.written_payload += c.length;
}

void FlushPipeline::finalize(FileRecord& f) {
  pool_.begin_flush(f.segment_id);

  const bool healthy = !f.abandoned;
  if (healthy) {
    if (f.entry_cursor != f.header.entries.size()) {
      throw Error("payload ended before all entries were hashed: " + f.path.string());
    }
    std::vector<std::byte> bytes = serialize_header(f.header);
    pwrite_all(f.fd, bytes.data(), bytes.size(), 0, f.path);
    if (config_.fsync_on_finalize) ::fsync(f.fd);
    f.state = FlushFileState::Persisted;
    ++files_persisted_;
  } else {
    f.state = FlushFileState::Abandoned;
  }
  ::close(f.fd);
  f.fd = -1;

  pool_.release(f.segment_id);
}

}  // namespace lzckpt
