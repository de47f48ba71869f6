#include "lzckpt/engine.hpp"

#include <algorithm>
#include <fstream>
#include <utility>

#include "lzckpt/errors.hpp"

namespace lzckpt {

const char* to_string(TicketStatus s) {
  switch (s) {
    case TicketStatus::InFlight: return "in-flight";
    case TicketStatus::HostResident: return "host-resident";
    case TicketStatus::Persisted: return "persisted";
    case TicketStatus::Failed: return "failed";
  }
  return "?";
}

TicketStatus CaptureTicket::status() const {
  std::lock_guard lock(mutex_);
  if (engine_ != nullptr) return engine_->ticket_status(*this);
  if (failed_) return TicketStatus::Failed;
  if (files_done_ == files_.size()) return TicketStatus::Persisted;
  return barrier_passed_ ? TicketStatus::HostResident : TicketStatus::InFlight;
}

bool CaptureTicket::torn() const {
  std::lock_guard lock(mutex_);
  return torn_;
}

std::string CaptureTicket::failure_reason() const {
  std::lock_guard lock(mutex_);
  return failure_reason_;
}

std::vector<std::filesystem::path> CaptureTicket::shard_files() const {
  std::lock_guard lock(mutex_);
  std::vector<std::filesystem::path> out;
  out.reserve(files_.size());
  for (const auto& slot : files_) out.push_back(slot.path);
  return out;
}

Engine::Engine(EngineConfig config, ParallelTopology topo, RankCoord rank)
    : config_(std::move(config)),
      topo_(topo),
      rank_(rank),
      pool_(config_.host_buffer_bytes, config_.reserve_timeout),
      transfers_(pool_, config_.copy_channel),
      flush_(pool_, config_.flush) {
  topo_.validate();
  if (config_.checkpoint_root.empty()) throw ConfigError("checkpoint root not set");
  if (config_.large_leaf_threshold == 0) throw ConfigError("large-leaf threshold must be > 0");
  transfers_.set_chunk_callback([this](uint64_t segment, uint64_t offset, uint64_t length) {
    flush_.enqueue_flush(segment, offset, length);
  });
  transfers_.set_torn_callback([this](const CopyTask& task) { on_torn(task.ticket); });
}

Engine::~Engine() {
  try {
    drain();
  } catch (...) {
    // Teardown on a failed run; pending state is abandoned with the process.
  }
  std::lock_guard lock(mutex_);
  for (auto& [id, weak] : tickets_) {
    if (auto t = weak.lock()) {
      std::lock_guard tlock(t->mutex_);
      t->engine_ = nullptr;
    }
  }
}

namespace {

struct ShardBuild {
  const ShardDescriptor* shard = nullptr;
  std::filesystem::path path;
  CheckpointFileHeader header;
  std::shared_ptr<const std::vector<std::byte>> meta;
  struct Large {
    StateTree::RegionPtr region;
    StateTree::BlobPtr blob;
    uint64_t size = 0;
  };
  std::vector<Large> larges;
  uint64_t payload = 0;
};

}  // namespace

std::shared_ptr<CaptureTicket> Engine::capture(const CheckpointPlan& plan,
                                               const StateTree& state, uint64_t step) {
  const auto t0 = std::chrono::steady_clock::now();

  const auto& shards = plan.shards(flat_rank(topo_, rank_));
  const auto names = state.top_level_names();
  if (names.size() != shards.size()) {
    throw ConfigError("state tree has " + std::to_string(names.size()) +
                      " top-level children but the plan assigns " +
                      std::to_string(shards.size()) + " shards to this rank");
  }

  // Everything that can be rejected is rejected before the first reservation,
  // so a thrown capture never strands a segment without its copy tasks.
  std::vector<ShardBuild> builds;
  builds.reserve(shards.size());
  for (size_t i = 0; i < shards.size(); ++i) {
    const ShardDescriptor& shard = shards[i];
    auto leaves = state.flatten_child(names[i]);

    uint64_t leaf_bytes = 0;
    for (const auto& leaf : leaves) leaf_bytes += leaf.size;
    if (leaf_bytes != shard.size_bytes) {
      throw ConfigError("subtree '" + names[i] + "' holds " + std::to_string(leaf_bytes) +
                        " bytes but shard " + shard.filename() + " expects " +
                        std::to_string(shard.size_bytes));
    }

    ShardBuild b;
    b.shard = &shard;
    b.path = shard_path(config_.checkpoint_root, step, shard);

    std::vector<LeafManifestEntry> manifest;
    manifest.reserve(leaves.size());
    for (auto& leaf : leaves) {
      if (leaf.path == StateTree::kMetaKey) {
        throw DuplicatePath("top-level leaf name '" + leaf.path + "' is reserved");
      }
      LeafManifestEntry e;
      e.path = leaf.path;
      e.is_region = leaf.region != nullptr;
      e.size = leaf.size;
      if (leaf.size < config_.large_leaf_threshold) {
        // Small leaves are captured synchronously, right here on the trainer
        // thread, and travel inside the metadata entry.
        e.inlined = true;
        e.inline_bytes = leaf.region ? leaf.region->clone_bytes() : *leaf.blob;
        manifest.push_back(std::move(e));
      } else {
        manifest.push_back(std::move(e));
        b.larges.push_back({leaf.region, leaf.blob, leaf.size});
      }
    }

    b.meta = std::make_shared<const std::vector<std::byte>>(serialize_leaf_manifest(manifest));

    b.header.entries.push_back(
        {std::string(StateTree::kMetaKey), 0, b.meta->size(), 0});
    for (const auto& e : manifest) {
      if (!e.inlined) b.header.entries.push_back({e.path, 0, e.size, 0});
    }
    uint64_t cursor = b.header.serialized_size();
    for (auto& entry : b.header.entries) {
      entry.offset = cursor;
      cursor += entry.length;
    }
    b.payload = cursor - b.header.serialized_size();
    builds.push_back(std::move(b));
  }

  auto ticket = std::shared_ptr<CaptureTicket>(new CaptureTicket());
  {
    std::lock_guard lock(mutex_);
    ticket->id_ = next_ticket_++;
    ticket->step_ = step;
    ticket->rank_ = rank_;
    ticket->engine_ = this;
    std::erase_if(tickets_, [](const auto& kv) { return kv.second.expired(); });
    tickets_.emplace(ticket->id_, ticket);
  }

  uint64_t total_payload = 0;
  std::weak_ptr<CaptureTicket> weak = ticket;
  for (auto& b : builds) {
    Segment segment = pool_.reserve(b.payload, ticket->id_);
    uint64_t file_id = flush_.register_file(
        b.path, b.header, segment.id, [this, weak](uint64_t, FlushFileState st) {
          if (auto t = weak.lock()) on_file_done(t, st);
        });
    {
      std::lock_guard tlock(ticket->mutex_);
      ticket->files_.push_back({b.path, file_id, segment.id});
    }

    std::vector<std::shared_ptr<CopyTask>> tasks;
    tasks.reserve(1 + b.larges.size());
    auto meta_task = std::make_shared<CopyTask>();
    meta_task->ticket = ticket->id_;
    meta_task->shard_id = b.shard->shard_id;
    meta_task->source.host_blob = b.meta;
    meta_task->length = b.meta->size();
    meta_task->segment_id = segment.id;
    meta_task->dst_offset = 0;
    meta_task->final_for_segment = b.larges.empty();
    tasks.push_back(std::move(meta_task));

    uint64_t dst = b.meta->size();
    for (size_t i = 0; i < b.larges.size(); ++i) {
      const auto& large = b.larges[i];
      auto task = std::make_shared<CopyTask>();
      task->ticket = ticket->id_;
      task->shard_id = b.shard->shard_id;
      task->source.region = large.region;
      task->source.host_blob = large.blob;
      task->length = large.size;
      task->segment_id = segment.id;
      task->dst_offset = dst;
      task->final_for_segment = (i + 1 == b.larges.size());
      dst += large.size;
      tasks.push_back(std::move(task));
    }
    transfers_.submit_copies(ticket->id_, tasks);
    total_payload += b.payload;
  }
  ticket->payload_bytes_ = total_payload;

  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  {
    std::lock_guard lock(mutex_);
    ++counters_.captures;
    counters_.bytes_captured += total_payload;
    counters_.capture_seconds += dt;
    counters_.last_capture_seconds = dt;
  }
  return ticket;
}

void Engine::update_barrier(const std::shared_ptr<CaptureTicket>& ticket) {
  const auto t0 = std::chrono::steady_clock::now();
  auto record = [&] {
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::lock_guard lock(mutex_);
    counters_.barrier_seconds += dt;
    counters_.last_barrier_seconds = dt;
  };
  try {
    transfers_.wait_pending(ticket->id_);
  } catch (...) {
    record();
    throw;
  }
  {
    std::lock_guard tlock(ticket->mutex_);
    ticket->barrier_passed_ = true;
  }
  record();
}

void Engine::wait_persisted(const std::shared_ptr<CaptureTicket>& ticket) {
  std::unique_lock tlock(ticket->mutex_);
  ticket->done_cv_.wait(tlock, [&] {
    return ticket->failed_ || ticket->files_done_ == ticket->files_.size();
  });
  if (ticket->torn_) throw TornSnapshot(ticket->failure_reason_);
  if (ticket->failed_) throw Error(ticket->failure_reason_);
}

void Engine::drain() {
  transfers_.drain();
  flush_.drain();
}

void Engine::on_file_done(const std::shared_ptr<CaptureTicket>& ticket, FlushFileState state) {
  {
    std::lock_guard tlock(ticket->mutex_);
    ++ticket->files_done_;
    if (state == FlushFileState::Abandoned && !ticket->failed_) {
      ticket->failed_ = true;
      if (ticket->failure_reason_.empty()) {
        ticket->failure_reason_ = "a shard file flush was abandoned before its header was written";
      }
    }
  }
  ticket->done_cv_.notify_all();
}

void Engine::on_torn(uint64_t ticket_id) {
  std::shared_ptr<CaptureTicket> ticket;
  {
    std::lock_guard lock(mutex_);
    auto it = tickets_.find(ticket_id);
    if (it != tickets_.end()) ticket = it->second.lock();
  }
  if (!ticket) return;

  std::vector<uint64_t> file_ids;
  {
    std::lock_guard tlock(ticket->mutex_);
    ticket->torn_ = true;
    ticket->failed_ = true;
    ticket->failure_reason_ =
        "a source region changed while step " + std::to_string(ticket->step_) +
        " copies were pending";
    for (const auto& slot : ticket->files_) file_ids.push_back(slot.flush_file_id);
  }
  // None of these files may ever gain a header; the step can only abort.
  for (uint64_t id : file_ids) flush_.abandon(id);
  ticket->done_cv_.notify_all();
}

TicketStatus Engine::ticket_status(const CaptureTicket& t) const {
  if (t.failed_) return TicketStatus::Failed;
  if (t.files_done_ == t.files_.size()) return TicketStatus::Persisted;
  bool all_filled = true;
  for (const auto& slot : t.files_) {
    try {
      SegmentState s = pool_.segment_state(slot.segment_id);
      if (s == SegmentState::Reserved) {
        all_filled = false;
        break;
      }
    } catch (const IllegalTransition&) {
      // Segment already released; its file simply has not called back yet.
    }
  }
  return all_filled ? TicketStatus::HostResident : TicketStatus::InFlight;
}

Engine::Counters Engine::counters() const {
  std::lock_guard lock(mutex_);
  return counters_;
}

std::vector<std::byte> read_entry(const std::filesystem::path& file,
                                  const CheckpointFileHeader& header, std::string_view key) {
  const HeaderEntry* entry = header.find(key);
  if (entry == nullptr) {
    throw FormatError(file.string() + ": no entry named '" + std::string(key) + "'");
  }
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  in.seekg(static_cast<std::streamoff>(entry->offset));
  std::vector<std::byte> bytes(entry->length);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw TruncatedFile(file.string() + ": short read for entry '" + std::string(key) + "'");
  }
  return bytes;
}

StateTree Engine::restore(const ManifestStore& manifest, uint64_t step) const {
  const auto files = manifest.files_for(step);  // throws NotCommitted
  const std::string prefix = step_dirname(step) + "/" + rank_dirname(rank_) + "/";

  StateTree tree;
  for (const auto& record : files) {
    if (record.relative_path.rfind(prefix, 0) != 0) continue;
    const std::filesystem::path full = config_.checkpoint_root / record.relative_path;

    CheckpointFileHeader header = read_header(full);
    auto bad = validate_entries(full, header);
    if (!bad.empty()) {
      std::string keys;
      for (const auto& k : bad) keys += (keys.empty() ? "" : ", ") + k;
      throw ChecksumMismatch(full.string() + ": corrupt entries: " + keys);
    }

    auto meta_bytes = read_entry(full, header, StateTree::kMetaKey);
    for (auto& leaf : parse_leaf_manifest(meta_bytes)) {
      std::vector<std::byte> bytes =
          leaf.inlined ? std::move(leaf.inline_bytes) : read_entry(full, header, leaf.path);
      if (bytes.size() != leaf.size) {
        throw FormatError(full.string() + ": leaf '" + leaf.path + "' size mismatch");
      }
      if (leaf.is_region) {
        tree.set_region(leaf.path, std::make_shared<DeviceRegion>(std::move(bytes)));
      } else {
        tree.set_blob(leaf.path, std::move(bytes));
      }
    }
  }
  return tree;
}

}  // namespace lzckpt
