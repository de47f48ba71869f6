#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstring>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lzckpt/buffer_pool.hpp"
#include "lzckpt/checksum.hpp"
#include "lzckpt/errors.hpp"
#include "lzckpt/flush_pipeline.hpp"
#include "lzckpt/format.hpp"
#include "test_support.hpp"

using namespace lzckpt;
using namespace std::chrono_literals;

namespace {

struct StagedFile {
  Segment seg;
  CheckpointFileHeader header;
  std::vector<std::byte> payload;
};

// Builds a dense header, reserves a matching segment and copies the payload
// into it, standing in for the transfer engine.
StagedFile stage(HostBufferPool& pool, uint64_t ticket,
                 const std::vector<std::pair<std::string, uint64_t>>& entries, int pattern) {
  StagedFile sf;
  for (const auto& [key, length] : entries) {
    HeaderEntry e;
    e.key = key;
    e.length = length;
    sf.header.entries.push_back(e);
  }
  uint64_t offset = sf.header.serialized_size();
  uint64_t total = 0;
  for (auto& e : sf.header.entries) {
    e.offset = offset;
    offset += e.length;
    total += e.length;
  }
  sf.payload = testsup::patterned(total, pattern);
  sf.seg = pool.reserve(total, ticket);
  std::memcpy(pool.segment_data(sf.seg), sf.payload.data(), total);
  return sf;
}

// Feeds the staged payload as in-order chunks; the segment is marked Filled
// before its last chunk, mirroring the copy engine's ordering.
void feed(FlushPipeline& fp, HostBufferPool& pool, const StagedFile& sf, uint64_t quantum) {
  uint64_t done = 0;
  while (done < sf.payload.size()) {
    uint64_t n = std::min<uint64_t>(quantum, sf.payload.size() - done);
    if (done + n == sf.payload.size()) pool.mark_filled(sf.seg.id);
    fp.enqueue_flush(sf.seg.id, done, n);
    done += n;
  }
}

}  // namespace

TEST_CASE("streamed payload persists with a checksummed trailing header") {
  auto dir = testsup::fresh_dir("flush-happy");
  HostBufferPool pool(1 << 20);
  FlushPipeline fp(pool, FlushConfig{0, false});

  StagedFile sf = stage(pool, 1, {{"__meta__", 100}, {"w", 5000}}, 3);
  std::mutex mu;
  std::vector<std::pair<uint64_t, FlushFileState>> done_events;
  uint64_t id = fp.register_file(dir / "a.ckpt", sf.header, sf.seg.id,
                                 [&](uint64_t fid, FlushFileState st) {
                                   std::lock_guard lock(mu);
                                   done_events.emplace_back(fid, st);
                                 });

  feed(fp, pool, sf, 512);
  fp.drain();

  CHECK(fp.file_state(id) == FlushFileState::Persisted);
  CHECK(fp.files_persisted() == 1);
  CHECK(fp.bytes_written() == sf.payload.size());
  CHECK(pool.live_segments() == 0);

  CheckpointFileHeader back = read_header(dir / "a.ckpt");
  REQUIRE(back.entries.size() == 2);
  CHECK(back.find("w")->checksum == fnv64(sf.payload.data() + 100, 5000));
  CHECK(back.find("__meta__")->checksum == fnv64(sf.payload.data(), 100));
  CHECK(validate_entries(dir / "a.ckpt", back).empty());

  std::lock_guard lock(mu);
  REQUIRE(done_events.size() == 1);
  CHECK(done_events[0] == std::pair{id, FlushFileState::Persisted});
}

TEST_CASE("the header goes to disk only after the last payload byte") {
  auto dir = testsup::fresh_dir("flush-late-header");
  HostBufferPool pool(1 << 20);
  FlushPipeline fp(pool, FlushConfig{0, false});

  StagedFile sf = stage(pool, 1, {{"w", 8000}}, 5);
  fp.register_file(dir / "b.ckpt", sf.header, sf.seg.id);

  fp.enqueue_flush(sf.seg.id, 0, 4000);
  while (fp.bytes_written() < 4000) std::this_thread::sleep_for(1ms);

  // Half the payload is on disk but the header bytes are still a hole.
  CHECK_THROWS_AS(read_header(dir / "b.ckpt"), BadMagic);

  pool.mark_filled(sf.seg.id);
  fp.enqueue_flush(sf.seg.id, 4000, 4000);
  fp.drain();
  CHECK(validate_entries(dir / "b.ckpt", read_header(dir / "b.ckpt")).empty());
}

TEST_CASE("abandoned files never gain a header and still release their segment") {
  auto dir = testsup::fresh_dir("flush-abandon");
  HostBufferPool pool(1 << 20);
  FlushPipeline fp(pool, FlushConfig{0, false});

  StagedFile sf = stage(pool, 1, {{"w", 3000}}, 8);
  FlushFileState seen = FlushFileState::Pending;
  uint64_t id = fp.register_file(dir / "torn.ckpt", sf.header, sf.seg.id,
                                 [&](uint64_t, FlushFileState st) { seen = st; });
  fp.abandon(id);
  feed(fp, pool, sf, 1000);
  fp.drain();

  CHECK(fp.file_state(id) == FlushFileState::Abandoned);
  CHECK(seen == FlushFileState::Abandoned);
  CHECK(fp.files_persisted() == 0);
  CHECK(pool.live_segments() == 0);
  CHECK_THROWS_AS(pool.segment_state(sf.seg.id), IllegalTransition);
  CHECK_THROWS_AS(read_header(dir / "torn.ckpt"), BadMagic);
}

TEST_CASE("registration validates the segment against the header") {
  auto dir = testsup::fresh_dir("flush-reg");
  HostBufferPool pool(1 << 20);
  FlushPipeline fp(pool, FlushConfig{0, false});

  SUBCASE("payload extent must match segment length") {
    StagedFile sf = stage(pool, 1, {{"w", 1000}}, 1);
    sf.header.entries[0].length = 999;  // extent no longer matches
    CHECK_THROWS_AS(fp.register_file(dir / "c.ckpt", sf.header, sf.seg.id), Error);
  }
  SUBCASE("empty payload is not a file") {
    Segment seg = pool.reserve(16, 1);
    CheckpointFileHeader empty;
    CHECK_THROWS_AS(fp.register_file(dir / "d.ckpt", empty, seg.id), Error);
  }
}

TEST_CASE("worker faults surface in drain") {
  auto dir = testsup::fresh_dir("flush-fault");

  SUBCASE("out-of-order chunk") {
    HostBufferPool pool(1 << 20);
    FlushPipeline fp(pool, FlushConfig{0, false});
    StagedFile sf = stage(pool, 1, {{"w", 2000}}, 2);
    fp.register_file(dir / "e.ckpt", sf.header, sf.seg.id);
    fp.enqueue_flush(sf.seg.id, 500, 500);
    CHECK_THROWS_AS(fp.drain(), Error);
  }
  SUBCASE("chunk for a segment nobody registered") {
    HostBufferPool pool(1 << 20);
    FlushPipeline fp(pool, FlushConfig{0, false});
    fp.enqueue_flush(4242, 0, 16);
    CHECK_THROWS_AS(fp.drain(), Error);
  }
}

TEST_CASE("injected disk failure abandons exactly the starved files") {
  auto dir = testsup::fresh_dir("flush-inject");
  HostBufferPool pool(1 << 20);
  FlushPipeline fp(pool, FlushConfig{0, false});

  StagedFile a = stage(pool, 1, {{"w", 1000}}, 1);
  StagedFile b = stage(pool, 2, {{"w", 6000}}, 2);
  StagedFile c = stage(pool, 3, {{"w", 500}}, 3);
  uint64_t ia = fp.register_file(dir / "a.ckpt", a.header, a.seg.id);
  uint64_t ib = fp.register_file(dir / "b.ckpt", b.header, b.seg.id);
  uint64_t ic = fp.register_file(dir / "c.ckpt", c.header, c.seg.id);

  // Budget covers all of a and two thirds of b; c starves completely.
  fp.inject_failure_after(5000);
  feed(fp, pool, a, 400);
  feed(fp, pool, b, 1500);
  feed(fp, pool, c, 500);
  fp.drain();

  CHECK(fp.file_state(ia) == FlushFileState::Persisted);
  CHECK(fp.file_state(ib) == FlushFileState::Abandoned);
  CHECK(fp.file_state(ic) == FlushFileState::Abandoned);
  CHECK(fp.bytes_written() == 5000);
  CHECK(fp.files_persisted() == 1);
  CHECK(pool.live_segments() == 0);

  CHECK(validate_entries(dir / "a.ckpt", read_header(dir / "a.ckpt")).empty());
  CHECK_THROWS_AS(read_header(dir / "b.ckpt"), BadMagic);
  CHECK_THROWS_AS(read_header(dir / "c.ckpt"), FormatError);
}

TEST_CASE("interleaved chunks from several segments route to their files") {
  auto dir = testsup::fresh_dir("flush-interleave");
  HostBufferPool pool(1 << 20);
  FlushPipeline fp(pool, FlushConfig{0, false});

  StagedFile a = stage(pool, 1, {{"__meta__", 64}, {"w", 4000}}, 4);
  StagedFile b = stage(pool, 2, {{"w", 3000}}, 6);
  fp.register_file(dir / "a.ckpt", a.header, a.seg.id);
  fp.register_file(dir / "b.ckpt", b.header, b.seg.id);

  fp.enqueue_flush(a.seg.id, 0, 2000);
  fp.enqueue_flush(b.seg.id, 0, 1500);
  pool.mark_filled(a.seg.id);
  fp.enqueue_flush(a.seg.id, 2000, 2064);
  pool.mark_filled(b.seg.id);
  fp.enqueue_flush(b.seg.id, 1500, 1500);
  fp.drain();

  CHECK(fp.files_persisted() == 2);
  CHECK(validate_entries(dir / "a.ckpt", read_header(dir / "a.ckpt")).empty());
  CHECK(validate_entries(dir / "b.ckpt", read_header(dir / "b.ckpt")).empty());
  CHECK(pool.live_segments() == 0);
}

TEST_CASE("storage pacing slows the flush, not the enqueue") {
  auto dir = testsup::fresh_dir("flush-paced");
  HostBufferPool pool(1 << 20);
  FlushPipeline fp(pool, FlushConfig{10e6, false});

  StagedFile sf = stage(pool, 1, {{"w", 512 << 10}}, 9);
  fp.register_file(dir / "slow.ckpt", sf.header, sf.seg.id);

  auto start = std::chrono::steady_clock::now();
  feed(fp, pool, sf, 64 << 10);
  double enqueue_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  fp.drain();
  double total_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  // 512 KiB at 10 MB/s is ~52 ms of disk time; handing over chunks is instant.
  CHECK(enqueue_s < 0.03);
  CHECK(total_s >= 0.04);
  CHECK(validate_entries(dir / "slow.ckpt", read_header(dir / "slow.ckpt")).empty());
}
