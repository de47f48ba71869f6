#include "lzckpt/format.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "lzckpt/checksum.hpp"
#include "lzckpt/errors.hpp"

namespace lzckpt {

namespace {

void put_u32(std::vector<std::byte>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::byte((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::byte>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::byte((v >> (8 * i)) & 0xff));
}

class Reader {
public:
  Reader(std::span<const std::byte> data) : data_(data) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string bytes(uint32_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  size_t pos() const { return pos_; }

private:
  void need(size_t n) {
    if (pos_ + n > data_.size()) {
      throw TruncatedFile("header ends mid-field at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::byte> data_;
  size_t pos_ = 0;
};

void check_structure(const CheckpointFileHeader& h, uint64_t header_size) {
  uint64_t prev_end = header_size;
  for (size_t i = 0; i < h.entries.size(); ++i) {
    const auto& e = h.entries[i];
    if (e.key.size() > kMaxKeyLength) {
      throw FormatError("entry key exceeds " + std::to_string(kMaxKeyLength) + " bytes");
    }
    if (e.offset < prev_end) {
      throw FormatError("entry '" + e.key + "' offset " + std::to_string(e.offset) +
                        " overlaps preceding bytes ending at " + std::to_string(prev_end));
    }
    prev_end = e.offset + e.length;
  }
}

}  // namespace

uint64_t CheckpointFileHeader::serialized_size() const {
  uint64_t n = 8 + 4 + 4;  // magic, version, count
  for (const auto& e : entries) n += 4 + e.key.size() + 8 + 8 + 8;
  return n + 8;  // header checksum
}

uint64_t CheckpointFileHeader::payload_end() const {
  uint64_t end = serialized_size();
  for (const auto& e : entries) end = std::max(end, e.offset + e.length);
  return end;
}

const HeaderEntry* CheckpointFileHeader::find(std::string_view key) const {
  for (const auto& e : entries) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

std::vector<std::byte> serialize_header(const CheckpointFileHeader& header) {
  check_structure(header, header.serialized_size());

  std::vector<std::byte> out;
  out.reserve(header.serialized_size());
  for (char c : kMagic) out.push_back(std::byte(c));
  put_u32(out, header.format_version);
  put_u32(out, static_cast<uint32_t>(header.entries.size()));
  for (const auto& e : header.entries) {
    put_u32(out, static_cast<uint32_t>(e.key.size()));
    for (char c : e.key) out.push_back(std::byte(c));
    put_u64(out, e.offset);
    put_u64(out, e.length);
    put_u64(out, e.checksum);
  }
  put_u64(out, fnv64(out.data(), out.size()));
  return out;
}

CheckpointFileHeader parse_header(std::span<const std::byte> bytes) {
  if (bytes.size() < sizeof(kMagic)) {
    throw TruncatedFile("file shorter than the magic string");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw BadMagic("not a checkpoint shard file");
  }

  Reader r(bytes);
  r.bytes(8);  // magic, verified above
  CheckpointFileHeader h;
  h.format_version = r.u32();
  if (h.format_version != kFormatVersion) {
    throw FormatError("unsupported format version " + std::to_string(h.format_version));
  }
  uint32_t count = r.u32();
  h.entries.reserve(std::min<uint32_t>(count, 4096));
  for (uint32_t i = 0; i < count; ++i) {
    HeaderEntry e;
    uint32_t key_len = r.u32();
    if (key_len > kMaxKeyLength) {
      throw FormatError("entry key length " + std::to_string(key_len) + " exceeds limit");
    }
    e.key = r.bytes(key_len);
    e.offset = r.u64();
    e.length = r.u64();
    e.checksum = r.u64();
    h.entries.push_back(std::move(e));
  }

  uint64_t declared = 0;
  {
    size_t body_end = r.pos();
    declared = r.u64();
    uint64_t actual = fnv64(bytes.data(), body_end);
    if (declared != actual) {
      throw ChecksumMismatch("header checksum mismatch");
    }
  }
  check_structure(h, r.pos());
  return h;
}

void write_header(const std::filesystem::path& file, const CheckpointFileHeader& header) {
  auto bytes = serialize_header(header);
  std::fstream f(file, std::ios::binary | std::ios::in | std::ios::out);
  if (!f.is_open()) {
    f.open(file, std::ios::binary | std::ios::out);  // create
  }
  if (!f) throw IoError("write_header: cannot open " + file.string());
  f.seekp(0);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  f.flush();
  if (!f) throw IoError("write_header: write failed for " + file.string());
}

CheckpointFileHeader read_header(const std::filesystem::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("read_header: cannot open " + file.string());
  std::vector<std::byte> bytes;
  {
    f.seekg(0, std::ios::end);
    auto size = f.tellg();
    if (size < 0) throw IoError("read_header: cannot stat " + file.string());
    f.seekg(0);
    bytes.resize(size_t(size));
    if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw IoError("read_header: read failed for " + file.string());
  }
  CheckpointFileHeader h = parse_header(bytes);
  if (h.payload_end() > bytes.size()) {
    throw TruncatedFile("file ends before the declared payload extent");
  }
  return h;
}

std::vector<std::string> validate_entries(const std::filesystem::path& file,
                                          const CheckpointFileHeader& header) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("validate_entries: cannot open " + file.string());
  f.seekg(0, std::ios::end);
  uint64_t size = uint64_t(f.tellg());
  std::vector<std::string> bad;
  if (size != header.payload_end()) {
    throw TruncatedFile("file length " + std::to_string(size) +
                        " does not match declared extent " +
                        std::to_string(header.payload_end()));
  }
  std::vector<std::byte> buf;
  for (const auto& e : header.entries) {
    buf.resize(e.length);
    f.seekg(std::streamoff(e.offset));
    if (e.length > 0) f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(e.length));
    if (!f) throw IoError("validate_entries: read failed for " + file.string());
    if (fnv64(buf.data(), buf.size()) != e.checksum) bad.push_back(e.key);
  }
  return bad;
}

std::string step_dirname(uint64_t step) { return "step-" + std::to_string(step); }

std::string rank_dirname(const RankCoord& coord) {
  return "rank-" + std::to_string(coord.dp) + "-" + std::to_string(coord.pp) + "-" +
         std::to_string(coord.tp);
}

std::filesystem::path rank_dir(const std::filesystem::path& base, uint64_t step,
                               const RankCoord& coord) {
  return base / step_dirname(step) / rank_dirname(coord);
}

std::filesystem::path shard_path(const std::filesystem::path& base, uint64_t step,
                                 const ShardDescriptor& shard) {
  return rank_dir(base, step, shard.owner) / shard.filename();
}

}  // namespace lzckpt
