// End-to-end acceptance gates for the checkpointing engine and the cluster
// simulator. Each criterion prints exactly one PASS/FAIL line; the process
// exits nonzero if any of them fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lzckpt/bench.hpp"
#include "lzckpt/buffer_pool.hpp"
#include "lzckpt/checksum.hpp"
#include "lzckpt/consolidation.hpp"
#include "lzckpt/engine.hpp"
#include "lzckpt/errors.hpp"
#include "lzckpt/flush_pipeline.hpp"
#include "lzckpt/format.hpp"
#include "lzckpt/manifest.hpp"
#include "lzckpt/ring_core.hpp"
#include "lzckpt/scenario.hpp"
#include "lzckpt/simulator.hpp"
#include "lzckpt/state_tree.hpp"
#include "lzckpt/topology.hpp"
#include "lzckpt/transfer_engine.hpp"
#include "lzckpt/verify.hpp"

using namespace lzckpt;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

std::string strf(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Collects the first failed condition; later ones are ignored so the printed
// reason names the earliest problem.
struct Gate {
  bool ok = true;
  std::string why;
  void require(bool cond, const std::string& reason) {
    if (!cond && ok) {
      ok = false;
      why = reason;
    }
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// ---------------------------------------------------------------------------
// Criterion 1: randomized capture/mutate/restore consistency, plus the
// negative control with the update barrier skipped. Whole thing under 2 min.

bool criterion_consistency(const fs::path& scratch, std::string& detail) {
  auto t0 = std::chrono::steady_clock::now();

  VerifyOptions honest;
  honest.scratch_dir = scratch / "c1-honest";
  honest.trials = 500;
  honest.seed = 20260818;
  VerifyReport h = run_verification(honest);

  VerifyOptions torn = honest;
  torn.scratch_dir = scratch / "c1-torn";
  torn.trials = 100;
  torn.seed = 31337;
  torn.skip_barrier = true;
  VerifyReport t = run_verification(torn);

  double secs = seconds_since(t0);
  detail = strf("%u/500 byte-exact round trips; %u/100 tears caught, %u committed; %.1f s of 120",
                h.byte_exact(), t.torn_detected(), t.committed(), secs);
  return h.byte_exact() == 500 && h.committed() == 500 && t.torn_detected() >= 95 &&
         t.committed() == 0 && secs < 120.0;
}

// ---------------------------------------------------------------------------
// Criterion 2: host buffer pool properties over randomized operation
// sequences, and liveness against a concurrent flusher.

bool criterion_buffer_pool(std::string& detail) {
  Gate gate;
  std::mt19937_64 rng(424242);
  const int kSequences = 10'000;
  uint64_t reserves = 0;
  uint64_t releases = 0;

  struct Live {
    Segment seg;
    int stage = 0;  // 0 reserved, 1 filled, 2 flushing
  };

  for (int seq = 0; seq < kSequences && gate.ok; ++seq) {
    const uint64_t cap = 1024 + rng() % (64 * 1024);
    RingCore ring(cap);
    std::deque<Live> live;

    auto invariants = [&] {
      gate.require(ring.live_bytes() <= ring.capacity(),
                   strf("seq %d: live bytes exceed capacity", seq));
      uint64_t mine = 0;
      for (const Live& l : live) mine += l.seg.length;
      gate.require(mine <= ring.live_bytes(),
                   strf("seq %d: ring lost track of reserved bytes", seq));
    };

    int ops = 30 + int(rng() % 30);
    for (int op = 0; op < ops && gate.ok; ++op) {
      switch (rng() % 5) {
        case 0:
        case 1: {
          uint64_t ask = 1 + rng() % cap;
          if (rng() % 16 == 0) ask = cap + 1 + rng() % cap;
          bool was_empty = ring.empty();
          auto got = ring.try_reserve(ask, uint64_t(seq) + 1);
          if (ask > cap) {
            gate.require(!got.has_value(), strf("seq %d: oversized ask was granted", seq));
            break;
          }
          if (was_empty) {
            gate.require(got.has_value(), strf("seq %d: empty ring refused a fitting ask", seq));
          }
          if (got) {
            ++reserves;
            gate.require(got->length == ask, strf("seq %d: wrong segment length", seq));
            gate.require(got->offset + got->length <= cap,
                         strf("seq %d: segment spills past capacity", seq));
            for (const Live& l : live) {
              bool disjoint = got->offset + got->length <= l.seg.offset ||
                              l.seg.offset + l.seg.length <= got->offset;
              gate.require(disjoint, strf("seq %d: overlapping reservations", seq));
            }
            live.push_back({*got, 0});
          }
          break;
        }
        case 2: {  // completion of a copy, in any order
          std::vector<size_t> reserved;
          for (size_t i = 0; i < live.size(); ++i) {
            if (live[i].stage == 0) reserved.push_back(i);
          }
          if (!reserved.empty()) {
            size_t pick = reserved[rng() % reserved.size()];
            ring.mark_filled(live[pick].seg.id);
            live[pick].stage = 1;
          }
          break;
        }
        case 3: {  // flush leaves strictly in reservation order
          if (!live.empty() && live.front().stage == 1) {
            ring.begin_flush(live.front().seg.id);
            live.front().stage = 2;
          }
          break;
        }
        case 4: {
          if (!live.empty() && live.front().stage == 2) {
            uint64_t before = ring.released_bytes();
            uint64_t len = live.front().seg.length;
            ring.release(live.front().seg.id);
            gate.require(ring.released_bytes() == before + len,
                         strf("seq %d: release did not count its bytes", seq));
            live.pop_front();
            ++releases;
          }
          break;
        }
      }
      invariants();
    }

    // Drain everything; a clean ring afterwards proves nothing leaked.
    for (Live& l : live) {
      if (l.stage == 0) {
        ring.mark_filled(l.seg.id);
        l.stage = 1;
      }
    }
    while (!live.empty() && gate.ok) {
      if (live.front().stage == 1) ring.begin_flush(live.front().seg.id);
      ring.release(live.front().seg.id);
      live.pop_front();
      ++releases;
    }
    gate.require(ring.empty() && ring.live_bytes() == 0,
                 strf("seq %d: ring not empty after draining every segment", seq));
  }

  // Liveness: a producer that outruns the pool must block, not deadlock, while
  // a flusher keeps making progress. The pool's own no-progress timeout turns
  // a real deadlock into an exception instead of a hang.
  bool drained = false;
  uint64_t pushed_bytes = 0;
  const int kSegments = 2000;
  if (gate.ok) {
    HostBufferPool pool(1ull << 20, std::chrono::seconds(30));
    std::mutex m;
    std::condition_variable cv;
    std::deque<uint64_t> queue;
    bool done = false;

    std::thread flusher([&] {
      while (true) {
        uint64_t id = 0;
        {
          std::unique_lock lock(m);
          cv.wait(lock, [&] { return !queue.empty() || done; });
          if (queue.empty() && done) return;
          id = queue.front();
          queue.pop_front();
        }
        pool.begin_flush(id);
        pool.release(id);
      }
    });

    std::mt19937_64 prng(7);
    try {
      for (int i = 0; i < kSegments; ++i) {
        uint64_t n = 1 + prng() % (160 * 1024);
        Segment s = pool.reserve(n, uint64_t(i) + 1);
        pool.mark_filled(s.id);
        {
          std::lock_guard lock(m);
          queue.push_back(s.id);
        }
        cv.notify_one();
        pushed_bytes += n;
      }
    } catch (const std::exception& e) {
      gate.require(false, strf("pool liveness: %s", e.what()));
    }
    {
      std::lock_guard lock(m);
      done = true;
    }
    cv.notify_one();
    flusher.join();
    drained = pool.live_bytes() == 0 && pool.total_released_bytes() == pushed_bytes;
    gate.require(drained, "pool did not drain back to empty");
  }

  detail = gate.ok ? strf("%d randomized sequences (%llu reserves, %llu releases) clean; "
                          "%d segments through a concurrent flusher without deadlock",
                          kSequences, (unsigned long long)reserves, (unsigned long long)releases,
                          kSegments)
                   : gate.why;
  return gate.ok;
}

// ---------------------------------------------------------------------------
// Criterion 3: file format round trips and exhaustive single-byte corruption.

bool criterion_file_format(const fs::path& scratch, std::string& detail) {
  Gate gate;
  std::mt19937_64 rng(1234);
  int round_trips = 0;

  for (int i = 0; i < 1000; ++i) {
    CheckpointFileHeader h;
    int n = int(rng() % 6);
    std::set<std::string> used;
    for (int e = 0; e < n; ++e) {
      std::string key;
      int len = 1 + int(rng() % 24);
      for (int c = 0; c < len; ++c) key += char('a' + rng() % 26);
      while (!used.insert(key).second) key += '_';
      h.entries.push_back({key, 0, 1 + rng() % 1'000'000, rng()});
    }
    uint64_t off = h.serialized_size();
    for (auto& e : h.entries) {
      e.offset = off;
      off += e.length;
    }

    std::vector<std::byte> bytes = serialize_header(h);
    CheckpointFileHeader back = parse_header(bytes);
    bool same = back.format_version == h.format_version && back.entries.size() == h.entries.size();
    for (size_t k = 0; same && k < h.entries.size(); ++k) {
      same = back.entries[k].key == h.entries[k].key &&
             back.entries[k].offset == h.entries[k].offset &&
             back.entries[k].length == h.entries[k].length &&
             back.entries[k].checksum == h.entries[k].checksum;
    }
    if (same && serialize_header(back) == bytes) ++round_trips;
  }
  gate.require(round_trips == 1000, strf("only %d/1000 headers round-tripped", round_trips));

  // A complete two-entry file; every single-byte flip must be caught either by
  // the header checksum or by an entry checksum.
  fs::path dir = scratch / "c3";
  fs::create_directories(dir);
  fs::path probe = dir / "probe.ckpt";

  std::vector<std::byte> meta(16), payload(48);
  for (size_t i = 0; i < meta.size(); ++i) meta[i] = std::byte((3 + i * 31) & 0xff);
  for (size_t i = 0; i < payload.size(); ++i) payload[i] = std::byte((7 + i * 31) & 0xff);

  CheckpointFileHeader h;
  h.entries.push_back({"__meta__", 0, meta.size(), fnv64(meta.data(), meta.size())});
  h.entries.push_back({"w", 0, payload.size(), fnv64(payload.data(), payload.size())});
  h.entries[0].offset = h.serialized_size();
  h.entries[1].offset = h.entries[0].offset + meta.size();

  write_header(probe, h);
  {
    std::fstream f(probe, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(std::streamoff(h.entries[0].offset));
    f.write(reinterpret_cast<const char*>(meta.data()), std::streamsize(meta.size()));
    f.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size()));
  }
  {
    CheckpointFileHeader ok = read_header(probe);
    gate.require(validate_entries(probe, ok).empty(), "pristine probe file failed validation");
  }

  std::string pristine = slurp(probe);
  int undetected = 0;
  fs::path damaged = dir / "damaged.ckpt";
  for (size_t pos = 0; pos < pristine.size(); ++pos) {
    std::string copy = pristine;
    copy[pos] = char(copy[pos] ^ 0x40);
    {
      std::ofstream out(damaged, std::ios::binary | std::ios::trunc);
      out.write(copy.data(), std::streamsize(copy.size()));
    }
    bool detected = false;
    try {
      CheckpointFileHeader hh = read_header(damaged);
      detected = !validate_entries(damaged, hh).empty();
    } catch (const FormatError&) {
      detected = true;
    }
    if (!detected) ++undetected;
  }
  gate.require(undetected == 0, strf("%d byte flips slipped through", undetected));

  detail = gate.ok ? strf("1000/1000 header round trips bit-exact; %zu/%zu byte flips detected",
                          pristine.size(), pristine.size())
                   : gate.why;
  return gate.ok;
}

// ---------------------------------------------------------------------------
// Criterion 4: two-phase commit safety under injected failures.

class ScriptedParticipant : public CommitParticipant {
public:
  enum class Behavior { Prepared, FailVote, Silent };

  ScriptedParticipant(uint32_t rank, Behavior behavior, const ManifestStore* store)
      : rank_(rank), behavior_(behavior), store_(store) {}

  uint32_t flat_rank() const override { return rank_; }

  std::optional<ValidationReport> prepare(uint64_t step) override {
    if (behavior_ == Behavior::Silent) return std::nullopt;
    ValidationReport r;
    if (behavior_ == Behavior::FailVote) {
      r.detail = "scripted validation failure";
      return r;
    }
    r.vote = Vote::Prepared;
    r.files.push_back({"step-" + std::to_string(step) + "/rank-0-0-" + std::to_string(rank_) +
                           "/layers-0-0.ckpt",
                       64, 0xabc0 + rank_});
    return r;
  }

  void learn(uint64_t step, Decision decision) override {
    std::lock_guard lock(mutex_);
    learned_ = decision;
    manifest_flag_ = store_->is_committed(step);
  }

  std::optional<Decision> learned() const {
    std::lock_guard lock(mutex_);
    return learned_;
  }
  bool manifest_flag() const {
    std::lock_guard lock(mutex_);
    return manifest_flag_;
  }

private:
  uint32_t rank_;
  Behavior behavior_;
  const ManifestStore* store_;
  mutable std::mutex mutex_;
  std::optional<Decision> learned_;
  bool manifest_flag_ = false;
};

// Four real engines sharing one checkpoint root: dp=2, tp=2, one node.
struct LiveRanks {
  ParallelTopology topo{2, 1, 2, 4, 1};
  ModelSpec model;
  fs::path root;
  CheckpointPlan plan;
  std::vector<std::unique_ptr<Engine>> engines;
  std::vector<StateTree> trees;
  std::vector<std::shared_ptr<CaptureTicket>> tickets;

  LiveRanks(const fs::path& dir, uint64_t step, double rank2_bandwidth = 0.0) {
    model.name = "tiny";
    model.param_count = 4096;
    model.layer_count = 4;
    model.hidden_dim = 16;
    root = dir;
    plan = plan_checkpoint(topo, model, step);

    for (uint32_t flat = 0; flat < topo.ranks(); ++flat) {
      EngineConfig cfg;
      cfg.checkpoint_root = root;
      cfg.host_buffer_bytes = 4 << 20;
      cfg.copy_channel = ThrottledChannel{flat == 2 ? rank2_bandwidth : 0.0, 4 << 10};
      cfg.flush = FlushConfig{0, false};
      cfg.large_leaf_threshold = 1024;
      engines.push_back(std::make_unique<Engine>(cfg, topo, rank_coord(topo, flat)));
    }
  }

  void capture_all(uint64_t step) {
    for (uint32_t flat = 0; flat < topo.ranks(); ++flat) {
      const auto& shards = plan.shards(flat);
      StateTree tree;
      for (size_t i = 0; i < shards.size(); ++i) {
        std::vector<std::byte> bytes(shards[i].size_bytes);
        for (size_t b = 0; b < bytes.size(); ++b) {
          bytes[b] = std::byte((10 * flat + i + b * 31) & 0xff);
        }
        tree.set_region("s" + std::to_string(i) + "/data",
                        std::make_shared<DeviceRegion>(std::move(bytes)));
      }
      trees.push_back(std::move(tree));
      tickets.push_back(engines[flat]->capture(plan, trees.back(), step));
    }
  }

  std::vector<std::unique_ptr<EngineCommitParticipant>> participants() {
    std::vector<std::unique_ptr<EngineCommitParticipant>> out;
    for (uint32_t flat = 0; flat < topo.ranks(); ++flat) {
      out.push_back(std::make_unique<EngineCommitParticipant>(*engines[flat], plan, tickets[flat]));
    }
    return out;
  }

  void drain_all() {
    for (auto& e : engines) e->drain();
  }
};

std::vector<CommitParticipant*> as_pointers(
    const std::vector<std::unique_ptr<EngineCommitParticipant>>& owned) {
  std::vector<CommitParticipant*> out;
  for (const auto& p : owned) out.push_back(p.get());
  return out;
}

bool audit_manifest(const ManifestStore& manifest, const fs::path& root, Gate& gate) {
  for (uint64_t s : manifest.committed_steps()) {
    for (const ManifestFileRecord& f : manifest.files_for(s)) {
      fs::path full = root / f.relative_path;
      if (!fs::exists(full)) {
        gate.require(false, strf("committed step %llu references missing file %s",
                                 (unsigned long long)s, f.relative_path.c_str()));
        return false;
      }
      if (fs::file_size(full) != f.length) {
        gate.require(false, strf("committed step %llu has a short file %s",
                                 (unsigned long long)s, f.relative_path.c_str()));
        return false;
      }
      std::string bytes = slurp(full);
      if (fnv64(bytes.data(), bytes.size()) != f.digest) {
        gate.require(false, strf("committed step %llu has a corrupt file %s",
                                 (unsigned long long)s, f.relative_path.c_str()));
        return false;
      }
    }
  }
  return true;
}

bool criterion_commit_safety(const fs::path& scratch, std::string& detail) {
  Gate gate;
  int fake_runs = 0;

  // Stage matrix over scripted participants: a failed vote and a crashed
  // (silent) rank at the first, middle, and last position, for 4, 9, and 16
  // participants, must always abort with exactly that rank blamed.
  struct Size {
    uint32_t n, gpn, nodes;
  };
  for (Size size : {Size{4, 2, 2}, Size{9, 3, 3}, Size{16, 4, 4}}) {
    fs::path dir = scratch / strf("c4-fake-%u", size.n);
    fs::create_directories(dir);
    ManifestStore manifest(dir / "manifest.json");
    ParallelTopology topo{size.n, 1, 1, size.gpn, size.nodes};
    CommitCoordinator coordinator(manifest, topo, CommitConfig{400ms});

    uint64_t step = 1;
    for (auto behavior :
         {ScriptedParticipant::Behavior::FailVote, ScriptedParticipant::Behavior::Silent}) {
      for (uint32_t victim : {0u, size.n / 2, size.n - 1}) {
        std::vector<std::unique_ptr<ScriptedParticipant>> owned;
        std::vector<CommitParticipant*> parts;
        for (uint32_t r = 0; r < size.n; ++r) {
          owned.push_back(std::make_unique<ScriptedParticipant>(
              r, r == victim ? behavior : ScriptedParticipant::Behavior::Prepared, &manifest));
          parts.push_back(owned.back().get());
        }
        CommitRecord rec = coordinator.run_step(step, parts);
        ++fake_runs;
        gate.require(rec.decision == Decision::Aborted,
                     strf("n=%u victim=%u: aborted stage was committed", size.n, victim));
        gate.require(rec.problem_ranks == std::vector<uint32_t>{victim},
                     strf("n=%u victim=%u: wrong rank blamed", size.n, victim));
        gate.require(!manifest.is_committed(step),
                     strf("n=%u victim=%u: manifest recorded an aborted step", size.n, victim));
        for (uint32_t r = 0; r < size.n; ++r) {
          if (r == victim) continue;
          gate.require(owned[r]->learned() == Decision::Aborted,
                       strf("n=%u victim=%u: rank %u missed the abort", size.n, victim, r));
        }
        ++step;
      }
    }

    // The all-healthy control commits, with the manifest durable before any
    // participant learns, and the decision stays immutable afterwards.
    std::vector<std::unique_ptr<ScriptedParticipant>> owned;
    std::vector<CommitParticipant*> parts;
    for (uint32_t r = 0; r < size.n; ++r) {
      owned.push_back(std::make_unique<ScriptedParticipant>(
          r, ScriptedParticipant::Behavior::Prepared, &manifest));
      parts.push_back(owned.back().get());
    }
    CommitRecord rec = coordinator.run_step(step, parts);
    ++fake_runs;
    gate.require(rec.decision == Decision::Committed,
                 strf("n=%u: healthy control did not commit", size.n));
    for (const auto& p : owned) {
      gate.require(p->learned() == Decision::Committed && p->manifest_flag(),
                   strf("n=%u: a rank learned before the manifest was durable", size.n));
    }

    ScriptedParticipant late(0, ScriptedParticipant::Behavior::FailVote, &manifest);
    std::vector<CommitParticipant*> late_parts{&late};
    gate.require(coordinator.run_step(step, late_parts).decision == Decision::Committed,
                 strf("n=%u: decided step was re-decided", size.n));
    gate.require(!late.learned().has_value(),
                 strf("n=%u: re-running a decided step reached participants", size.n));
  }

  // Real engines, failures injected at each pipeline stage. The committed
  // history must only ever advance on fully persisted steps.
  fs::path root = scratch / "c4-real" / "ckpt";
  ManifestStore manifest(scratch / "c4-real" / "manifest.json");

  {  // clean baseline
    LiveRanks ranks(root, 30);
    CommitCoordinator coordinator(manifest, ranks.topo);
    ranks.capture_all(30);
    for (uint32_t f = 0; f < 4; ++f) ranks.engines[f]->update_barrier(ranks.tickets[f]);
    gate.require(coordinator.run_step(30, as_pointers(ranks.participants())).decision ==
                     Decision::Committed,
                 "clean step 30 did not commit");
  }
  gate.require(manifest.latest_committed() == std::optional<uint64_t>{30}, "latest is not 30");

  {  // torn capture: mutation lands inside rank 2's slow copy
    LiveRanks ranks(root, 31, 200e3);
    CommitCoordinator coordinator(manifest, ranks.topo);
    ranks.capture_all(31);
    std::this_thread::sleep_for(5ms);
    ranks.trees[2].region_at("s1/data")->mutate(
        [](std::span<std::byte> b) { b[0] ^= std::byte{1}; });
    CommitRecord rec = coordinator.run_step(31, as_pointers(ranks.participants()));
    gate.require(rec.decision == Decision::Aborted, "torn step 31 was committed");
    gate.require(rec.problem_ranks == std::vector<uint32_t>{2}, "torn step blamed wrong rank");
    ranks.drain_all();
  }
  gate.require(manifest.latest_committed() == std::optional<uint64_t>{30},
               "torn step moved the committed history");

  {  // flush breaks partway on rank 1
    LiveRanks ranks(root, 32);
    CommitCoordinator coordinator(manifest, ranks.topo);
    ranks.engines[1]->flush().inject_failure_after(1000);
    ranks.capture_all(32);
    CommitRecord rec = coordinator.run_step(32, as_pointers(ranks.participants()));
    gate.require(rec.decision == Decision::Aborted, "interrupted flush was committed");
    gate.require(rec.problem_ranks == std::vector<uint32_t>{1}, "flush failure blamed wrong rank");
    ranks.drain_all();
  }
  gate.require(manifest.latest_committed() == std::optional<uint64_t>{30},
               "interrupted flush moved the committed history");

  {  // bytes damaged on disk after persistence, before the vote
    LiveRanks ranks(root, 33);
    CommitCoordinator coordinator(manifest, ranks.topo);
    ranks.capture_all(33);
    for (uint32_t f = 0; f < 4; ++f) ranks.engines[f]->wait_persisted(ranks.tickets[f]);
    fs::path victim = ranks.tickets[3]->shard_files()[0];
    {
      std::fstream f(victim, std::ios::binary | std::ios::in | std::ios::out);
      char c;
      f.seekg(-1, std::ios::end);
      f.get(c);
      f.seekp(-1, std::ios::end);
      f.put(char(c ^ 0x1));
    }
    CommitRecord rec = coordinator.run_step(33, as_pointers(ranks.participants()));
    gate.require(rec.decision == Decision::Aborted, "damaged shard was committed");
    gate.require(rec.problem_ranks == std::vector<uint32_t>{3}, "damage blamed wrong rank");
  }
  gate.require(manifest.latest_committed() == std::optional<uint64_t>{30},
               "damaged step moved the committed history");

  {  // recovery: the next healthy step commits and certifies on disk
    LiveRanks ranks(root, 34);
    CommitCoordinator coordinator(manifest, ranks.topo);
    ranks.capture_all(34);
    for (uint32_t f = 0; f < 4; ++f) ranks.engines[f]->update_barrier(ranks.tickets[f]);
    gate.require(coordinator.run_step(34, as_pointers(ranks.participants())).decision ==
                     Decision::Committed,
                 "recovery step 34 did not commit");
    for (uint32_t f = 0; f < 4; ++f) {
      ValidationReport report = validate_rank_files(root, 34, ranks.plan.shards(f));
      gate.require(report.vote == Vote::Prepared,
                   strf("rank %u files failed validation after commit", f));
    }
    std::vector<uint64_t> swept = sweep_uncommitted(root, manifest);
    gate.require(swept == std::vector<uint64_t>{31, 32, 33},
                 "sweep after the failures removed the wrong steps");
  }
  gate.require(manifest.latest_committed() == std::optional<uint64_t>{34}, "latest is not 34");
  audit_manifest(manifest, root, gate);

  // Crash during a live multi-rank run: everything from the broken step on
  // aborts, and the latest committed step still restores byte-exact.
  BenchOptions bopt;
  bopt.scratch_dir = scratch / "c4-bench";
  bopt.dp = 2;
  bopt.steps = 3;
  bopt.checkpoint_every = 1;
  bopt.params = 120'000;
  bopt.compute_ms = 25.0;
  bopt.kill_at_step = 2;
  bopt.kill_rank = 0;
  BenchReport crash = run_bench(bopt);
  gate.require(crash.passed(), "crash bench failed its own consistency check");
  gate.require(!crash.aborted_steps.empty(), "crash bench aborted nothing");
  for (uint64_t s : crash.committed_steps) {
    gate.require(s < 2, "a step at or after the crash was committed");
  }
  gate.require(crash.restored_step == 0 || crash.restore_matches,
               "latest committed step did not restore byte-exact");

  detail = gate.ok ? strf("%d scripted stage runs at n=4,9,16; live injections at capture, "
                          "flush, and disk all aborted; crash bench restored step %llu",
                          fake_runs, (unsigned long long)crash.restored_step)
                   : gate.why;
  return gate.ok;
}

// ---------------------------------------------------------------------------
// Criteria 5 through 10 run on the cluster simulator.

sim::RunConfig solo_config(double checkpoint_bytes) {
  sim::RunConfig cfg;
  cfg.cluster.node_count = 1;
  cfg.cluster.gpus_per_node = 1;
  cfg.topology = ParallelTopology{1, 1, 1, 1, 1};
  cfg.model.name = "solo";
  cfg.model.param_count = uint64_t(checkpoint_bytes) / 2;
  cfg.model.layer_count = 1;
  cfg.model.hidden_dim = 1;
  cfg.model.bytes_per_param_model = 1;
  cfg.model.bytes_per_param_optimizer = 1;
  cfg.phases = sim::PhaseProfile{0.1, 0.1, 0.05};
  cfg.iterations = 2;
  cfg.checkpoint_every = 2;
  return cfg;
}

sim::RunConfig preset_config(const char* name, uint32_t dp = 1) {
  const ModelPreset* preset = find_model_preset(name);
  if (!preset) throw Error(std::string("no preset named ") + name);
  return sim::preset_run_config(*preset, dp);
}

bool criterion_oracle(std::string& detail) {
  Gate gate;
  double worst = 0;
  const sim::Strategy strategies[] = {sim::Strategy::sync(), sim::Strategy::async_snapshot(),
                                      sim::Strategy::chunked(), sim::Strategy::lazy()};
  for (double gb : {1.0, 5.0, 10.0, 15.0}) {
    for (const auto& strategy : strategies) {
      sim::RunConfig cfg = solo_config(gb * 1e9);
      cfg.strategy = strategy;
      sim::Metrics m = sim::simulate(cfg);
      double expected = sim::analytic_blocked_time(strategy, gb * 1e9, cfg.cluster, cfg.phases);
      double err = expected == 0 ? (m.blocked_per_checkpoint_s > 1e-9 ? 1.0 : 0.0)
                                 : std::abs(m.blocked_per_checkpoint_s - expected) / expected;
      worst = std::max(worst, err);
      gate.require(err <= 0.05, strf("%s at %.0f GB: simulated %.4f s vs %.4f s analytic",
                                     sim::to_string(strategy.kind), gb,
                                     m.blocked_per_checkpoint_s, expected));
    }
  }
  detail = gate.ok ? strf("16 strategy/size cases within 5%% of the closed form "
                          "(worst deviation %.3f%%)",
                          worst * 100)
                   : gate.why;
  return gate.ok;
}

bool criterion_throughput_gap(std::string& detail) {
  Gate gate;
  double min_ratio = 1e300;
  for (const char* name : {"3B", "7B", "13B", "30B", "70B"}) {
    sim::RunConfig cfg = preset_config(name);
    cfg.iterations = 12;
    cfg.checkpoint_every = 1;
    auto results = sim::compare_strategies(cfg);
    double sync_b = results[0].metrics.blocked_per_checkpoint_s;
    double chunked_b = results[2].metrics.blocked_per_checkpoint_s;
    double lazy_b = results[3].metrics.blocked_per_checkpoint_s;
    gate.require(lazy_b <= chunked_b + 1e-9 && chunked_b <= sync_b + 1e-9,
                 strf("%s: blocked-time ordering violated", name));
    double ratio = results[3].metrics.throughput_Bps / results[0].metrics.throughput_Bps;
    min_ratio = std::min(min_ratio, ratio);
    gate.require(ratio >= 3.0, strf("%s: lazy/sync throughput ratio %.2f below 3", name, ratio));
  }
  detail = gate.ok ? strf("all 5 models keep lazy <= chunked <= sync in blocked time; "
                          "min lazy/sync throughput ratio %.1fx",
                          min_ratio)
                   : gate.why;
  return gate.ok;
}

bool criterion_dp_scaling(std::string& detail) {
  Gate gate;
  const uint32_t dps[] = {1, 2, 4, 8, 16};
  std::vector<std::vector<double>> tput(4);
  uint64_t per_gpu_1 = 0, per_gpu_16 = 0;

  for (uint32_t dp : dps) {
    sim::RunConfig cfg = preset_config("13B", dp);
    cfg.iterations = 8;
    cfg.checkpoint_every = 1;
    auto results = sim::compare_strategies(cfg);
    uint64_t per_gpu = results[0].metrics.checkpoint_bytes / cfg.topology.ranks();
    if (dp == 1) per_gpu_1 = per_gpu;
    if (dp == 16) per_gpu_16 = per_gpu;
    for (size_t s = 0; s < 4; ++s) tput[s].push_back(results[s].metrics.throughput_Bps);
  }

  gate.require(std::abs(double(per_gpu_1) - 10.4e9) / 10.4e9 <= 0.15,
               strf("per-GPU bytes at dp=1 are %.2f GB, not within 15%% of 10.4", per_gpu_1 / 1e9));
  gate.require(std::abs(double(per_gpu_16) - 650e6) / 650e6 <= 0.15,
               strf("per-GPU bytes at dp=16 are %.0f MB, not within 15%% of 650", per_gpu_16 / 1e6));
  const char* names[] = {"sync", "async_snapshot", "chunked", "lazy"};
  for (size_t s = 0; s < 4; ++s) {
    for (size_t i = 1; i < tput[s].size(); ++i) {
      gate.require(tput[s][i] >= tput[s][i - 1] * (1.0 - 1e-9),
                   strf("%s throughput drops between dp=%u and dp=%u", names[s], dps[i - 1],
                        dps[i]));
    }
  }
  detail = gate.ok ? strf("per-GPU %.2f GB at dp=1 and %.0f MB at dp=16; every strategy's "
                          "throughput non-decreasing over dp 1..16",
                          per_gpu_1 / 1e9, per_gpu_16 / 1e6)
                   : gate.why;
  return gate.ok;
}

bool criterion_frequency(std::string& detail) {
  Gate gate;
  sim::RunConfig seven = preset_config("7B");
  seven.iterations = 40;
  seven.checkpoint_every = 1;
  double t1 = sim::simulate(seven).throughput_Bps;
  seven.checkpoint_every = 10;
  double t10 = sim::simulate(seven).throughput_Bps;
  gate.require(t1 < t10, strf("7B throughput at every=1 (%.3g) not below every=10 (%.3g)", t1, t10));

  sim::RunConfig thirteen = preset_config("13B");
  thirteen.iterations = 40;
  double lo = 1e300, hi = 0;
  for (uint32_t every : {1u, 2u, 5u, 10u}) {
    thirteen.checkpoint_every = every;
    double t = sim::simulate(thirteen).throughput_Bps;
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  gate.require((hi - lo) / hi <= 0.10,
               strf("13B throughput swings %.1f%% across frequencies", (hi - lo) / hi * 100));

  detail = gate.ok ? strf("7B loses throughput at every step (%.3g vs %.3g B/s); "
                          "13B stays within %.2f%% across every=1,2,5,10",
                          t1, t10, (hi - lo) / (hi > 0 ? hi : 1) * 100)
                   : gate.why;
  return gate.ok;
}

bool criterion_end_to_end(std::string& detail) {
  sim::RunConfig cfg = preset_config("13B");
  cfg.iterations = 50;
  cfg.checkpoint_every = 1;
  cfg.strategy = sim::Strategy::sync();
  double sync_e2e = sim::simulate(cfg).end_to_end_s;
  cfg.strategy = sim::Strategy::lazy();
  double lazy_e2e = sim::simulate(cfg).end_to_end_s;
  double ratio = sync_e2e / lazy_e2e;

  detail = strf("50 iterations at every step: sync %.1f s, lazy %.1f s, ratio %.2fx", sync_e2e,
                lazy_e2e, ratio);
  return ratio >= 1.3 && ratio <= 3.0;
}

bool criterion_determinism(std::string& detail) {
  const char* text =
      "[model]\n"
      "presets = 3B,7B,13B\n"
      "[strategy]\n"
      "kind = all\n"
      "[run]\n"
      "iterations = 4\n"
      "dp = 1,2\n";
  std::string a = run_scenario_csv(parse_scenario(text));
  std::string b = run_scenario_csv(parse_scenario(text));
  size_t rows = size_t(std::count(a.begin(), a.end(), '\n'));
  detail = strf("two full runs of a 24-row sweep produced identical CSV (%zu bytes, %zu lines)",
                a.size(), rows);
  return !a.empty() && a == b;
}

template <typename Fn>
void run_criterion(int id, bool& all_ok, Fn&& fn) {
  auto t0 = std::chrono::steady_clock::now();
  bool ok = false;
  std::string detail;
  try {
    ok = fn(detail);
  } catch (const std::exception& e) {
    ok = false;
    detail = strf("unexpected exception: %s", e.what());
  }
  std::printf("criterion %2d: %s  [%6.1f s]  %s\n", id, ok ? "PASS" : "FAIL", seconds_since(t0),
              detail.c_str());
  std::fflush(stdout);
  all_ok = all_ok && ok;
}

}  // namespace

int main() {
  fs::path scratch = fs::temp_directory_path() / "lzckpt-acceptance";
  std::error_code ec;
  fs::remove_all(scratch, ec);
  fs::create_directories(scratch);

  bool all_ok = true;
  run_criterion(1, all_ok, [&](std::string& d) { return criterion_consistency(scratch, d); });
  run_criterion(2, all_ok, [&](std::string& d) { return criterion_buffer_pool(d); });
  run_criterion(3, all_ok, [&](std::string& d) { return criterion_file_format(scratch, d); });
  run_criterion(4, all_ok, [&](std::string& d) { return criterion_commit_safety(scratch, d); });
  run_criterion(5, all_ok, [&](std::string& d) { return criterion_oracle(d); });
  run_criterion(6, all_ok, [&](std::string& d) { return criterion_throughput_gap(d); });
  run_criterion(7, all_ok, [&](std::string& d) { return criterion_dp_scaling(d); });
  run_criterion(8, all_ok, [&](std::string& d) { return criterion_frequency(d); });
  run_criterion(9, all_ok, [&](std::string& d) { return criterion_end_to_end(d); });
  run_criterion(10, all_ok, [&](std::string& d) { return criterion_determinism(d); });

  std::printf("acceptance: %s\n", all_ok ? "all criteria PASS" : "FAILURES above");
  return all_ok ? 0 : 1;
}
