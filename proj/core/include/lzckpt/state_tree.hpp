#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lzckpt/transfer_engine.hpp"

namespace lzckpt {

// Hierarchical training state for one rank: named subtrees with leaves that
// are either device-resident regions or small host blobs (step counters, RNG
// state, schedules). Children are kept in ordered maps so traversal order is
// a pure function of the paths, independent of insertion order.
class StateTree {
public:
  using RegionPtr = std::shared_ptr<DeviceRegion>;
  using BlobPtr = std::shared_ptr<const std::vector<std::byte>>;

  void set_region(std::string_view path, RegionPtr region);
  void set_blob(std::string_view path, std::vector<std::byte> bytes);

  bool has(std::string_view path) const;
  RegionPtr region_at(std::string_view path) const;  // throws if not a region leaf
  const std::vector<std::byte>& blob_at(std::string_view path) const;

  size_t top_level_count() const { return root_.children.size(); }
  std::vector<std::string> top_level_names() const;
  size_t leaf_count() const;
  uint64_t total_leaf_bytes() const;

  struct FlatLeaf {
    std::string path;
    RegionPtr region;  // exactly one of region / blob is set
    BlobPtr blob;
    uint64_t size = 0;
  };

  // Depth-first, children in path order. Throws DuplicatePath when a full
  // path collides with the reserved metadata key.
  std::vector<FlatLeaf> flatten() const;
  // Leaves under one top-level child only, same ordering guarantees.
  std::vector<FlatLeaf> flatten_child(std::string_view top_level_name) const;

  static constexpr std::string_view kMetaKey = "__meta__";

private:
  struct Node {
    std::map<std::string, Node> children;
    RegionPtr region;
    BlobPtr blob;
    bool is_leaf() const { return region != nullptr || blob != nullptr; }
  };

  Node& insert_path(std::string_view path);
  const Node* find(std::string_view path) const;
  static void collect(const Node& node, std::string& path, std::vector<FlatLeaf>& out);

  Node root_;
};

// Compact description of every leaf in a shard subtree, stored as the shard
// file's metadata entry. Small leaves (below the large-leaf threshold) carry
// their bytes inline; large leaves are recorded by size and live as their own
// payload entries keyed by leaf path.
struct LeafManifestEntry {
  std::string path;
  bool is_region = false;  // restore rebuilds the same leaf kind
  bool inlined = false;
  uint64_t size = 0;
  std::vector<std::byte> inline_bytes;
};

std::vector<std::byte> serialize_leaf_manifest(const std::vector<LeafManifestEntry>& entries);
std::vector<LeafManifestEntry> parse_leaf_manifest(const std::vector<std::byte>& bytes);

}  // namespace lzckpt
