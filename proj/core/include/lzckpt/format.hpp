#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lzckpt/topology.hpp"

namespace lzckpt {

// Shard file layout, all integers little-endian fixed width:
//
//   magic[8] = "LZCKPT01"
//   u32 format_version
//   u32 entry_count
//   entry_count x { u32 key_len, key bytes, u64 offset, u64 length, u64 checksum }
//   u64 header_checksum            FNV-1a of every preceding header byte
//   payload...                     entry offsets are absolute file offsets
//
// Entries are sorted by offset and non-overlapping; the first payload byte
// sits exactly at the end of the header, so offsets can be fixed the moment
// the entry list is known, before any payload bytes exist.

inline constexpr char kMagic[8] = {'L', 'Z', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr uint32_t kFormatVersion = 1;
inline constexpr uint32_t kMaxKeyLength = 64 * 1024;

struct HeaderEntry {
  std::string key;
  uint64_t offset = 0;
  uint64_t length = 0;
  uint64_t checksum = 0;  // FNV-1a of the payload bytes
};

struct CheckpointFileHeader {
  uint32_t format_version = kFormatVersion;
  std::vector<HeaderEntry> entries;

  uint64_t serialized_size() const;
  // One past the last payload byte; equals serialized_size for no entries.
  uint64_t payload_end() const;
  const HeaderEntry* find(std::string_view key) const;
};

// Throws FormatError subtypes on structural violations (unsorted, overlapping,
// offsets inside the header, oversized keys).
std::vector<std::byte> serialize_header(const CheckpointFileHeader& header);
CheckpointFileHeader parse_header(std::span<const std::byte> bytes);

// write_header patches bytes [0, serialized_size) of the file, creating it if
// needed; read_header parses and also rejects files shorter than the declared
// payload extent.
void write_header(const std::filesystem::path& file, const CheckpointFileHeader& header);
CheckpointFileHeader read_header(const std::filesystem::path& file);

// Recomputes every entry checksum against the payload bytes on disk. Returns
// the keys that do not match; also enforces that the file length equals the
// declared payload extent exactly.
std::vector<std::string> validate_entries(const std::filesystem::path& file,
                                          const CheckpointFileHeader& header);

// Directory layout: <base>/step-<N>/rank-<dp>-<pp>-<tp>/<shard filename>
std::string step_dirname(uint64_t step);
std::string rank_dirname(const RankCoord& coord);
std::filesystem::path rank_dir(const std::filesystem::path& base, uint64_t step,
                               const RankCoord& coord);
std::filesystem::path shard_path(const std::filesystem::path& base, uint64_t step,
                                 const ShardDescriptor& shard);

}  // namespace lzckpt
