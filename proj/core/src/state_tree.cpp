#include "lzckpt/state_tree.hpp"

#include <cstring>
#include <utility>

#include "lzckpt/errors.hpp"

namespace lzckpt {

namespace {

std::vector<std::string_view> split_path(std::string_view path) {
  if (path.empty()) throw DuplicatePath("empty path");
  std::vector<std::string_view> parts;
  size_t start = 0;
  while (start <= path.size()) {
    size_t slash = path.find('/', start);
    if (slash == std::string_view::npos) slash = path.size();
    if (slash == start) throw DuplicatePath("empty path component in '" + std::string(path) + "'");
    parts.push_back(path.substr(start, slash - start));
    start = slash + 1;
  }
  return parts;
}

}  // namespace

StateTree::Node& StateTree::insert_path(std::string_view path) {
  auto parts = split_path(path);
  Node* node = &root_;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (node->is_leaf()) {
      throw DuplicatePath("'" + std::string(path) + "' descends through an existing leaf");
    }
    node = &node->children[std::string(parts[i])];
  }
  if (node->is_leaf() || !node->children.empty()) {
    throw DuplicatePath("'" + std::string(path) + "' is already in use");
  }
  return *node;
}

void StateTree::set_region(std::string_view path, RegionPtr region) {
  if (!region) throw Error("set_region: null region");
  insert_path(path).region = std::move(region);
}

void StateTree::set_blob(std::string_view path, std::vector<std::byte> bytes) {
  insert_path(path).blob = std::make_shared<const std::vector<std::byte>>(std::move(bytes));
}

const StateTree::Node* StateTree::find(std::string_view path) const {
  auto parts = split_path(path);
  const Node* node = &root_;
  for (const auto& part : parts) {
    auto it = node->children.find(std::string(part));
    if (it == node->children.end()) return nullptr;
    node = &it->second;
  }
  return node;
}

bool StateTree::has(std::string_view path) const {
  const Node* n = find(path);
  return n != nullptr && n->is_leaf();
}

StateTree::RegionPtr StateTree::region_at(std::string_view path) const {
  const Node* n = find(path);
  if (n == nullptr || !n->region) throw Error("no region leaf at '" + std::string(path) + "'");
  return n->region;
}

const std::vector<std::byte>& StateTree::blob_at(std::string_view path) const {
  const Node* n = find(path);
  if (n == nullptr || !n->blob) throw Error("no blob leaf at '" + std::string(path) + "'");
  return *n->blob;
}

std::vector<std::string> StateTree::top_level_names() const {
  std::vector<std::string> names;
  names.reserve(root_.children.size());
  for (const auto& [name, child] : root_.children) names.push_back(name);
  return names;
}

size_t StateTree::leaf_count() const {
  std::vector<FlatLeaf> leaves;
  std::string path;
  collect(root_, path, leaves);
  return leaves.size();
}

uint64_t StateTree::total_leaf_bytes() const {
  uint64_t total = 0;
  std::vector<FlatLeaf> leaves;
  std::string path;
  collect(root_, path, leaves);
  for (const auto& leaf : leaves) total += leaf.size;
  return total;
}

void StateTree::collect(const Node& node, std::string& path, std::vector<FlatLeaf>& out) {
  if (node.is_leaf()) {
    FlatLeaf leaf;
    leaf.path = path;
    leaf.region = node.region;
    leaf.blob = node.blob;
    leaf.size = node.region ? node.region->size() : node.blob->size();
    out.push_back(std::move(leaf));
    return;
  }
  for (const auto& [name, child] : node.children) {
    size_t mark = path.size();
    if (!path.empty()) path.push_back('/');
    path.append(name);
    collect(child, path, out);
    path.resize(mark);
  }
}

std::vector<StateTree::FlatLeaf> StateTree::flatten() const {
  std::vector<FlatLeaf> leaves;
  std::string path;
  collect(root_, path, leaves);
  for (const auto& leaf : leaves) {
    if (leaf.path == kMetaKey) {
      throw DuplicatePath("'" + std::string(kMetaKey) + "' is reserved for shard metadata");
    }
  }
  return leaves;
}

std::vector<StateTree::FlatLeaf> StateTree::flatten_child(std::string_view top_level_name) const {
  auto it = root_.children.find(std::string(top_level_name));
  if (it == root_.children.end()) {
    throw Error("no top-level child named '" + std::string(top_level_name) + "'");
  }
  std::vector<FlatLeaf> leaves;
  std::string path(top_level_name);
  collect(it->second, path, leaves);
  return leaves;
}

namespace {

void put_u32(std::vector<std::byte>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::byte((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::byte>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::byte((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::byte* p;
  size_t left;
  void need(size_t n) const {
    if (left < n) throw FormatError("leaf manifest truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(std::to_integer<uint8_t>(p[i])) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(std::to_integer<uint8_t>(p[i])) << (8 * i);
    p += 8;
    left -= 8;
    return v;
  }
  std::vector<std::byte> bytes(size_t n) {
    need(n);
    std::vector<std::byte> out(p, p + n);
    p += n;
    left -= n;
    return out;
  }
  std::string str(size_t n) {
    need(n);
    std::string out(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return out;
  }
};

}  // namespace

std::vector<std::byte> serialize_leaf_manifest(const std::vector<LeafManifestEntry>& entries) {
  std::vector<std::byte> out;
  put_u32(out, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, static_cast<uint32_t>(e.path.size()));
    const auto* p = reinterpret_cast<const std::byte*>(e.path.data());
    out.insert(out.end(), p, p + e.path.size());
    uint8_t flags = (e.is_region ? 1 : 0) | (e.inlined ? 2 : 0);
    out.push_back(std::byte(flags));
    put_u64(out, e.size);
    if (e.inlined) {
      out.insert(out.end(), e.inline_bytes.begin(), e.inline_bytes.end());
    }
  }
  return out;
}

std::vector<LeafManifestEntry> parse_leaf_manifest(const std::vector<std::byte>& bytes) {
  Reader r{bytes.data(), bytes.size()};
  uint32_t count = r.u32();
  std::vector<LeafManifestEntry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    LeafManifestEntry e;
    uint32_t path_len = r.u32();
    e.path = r.str(path_len);
    r.need(1);
    uint8_t flags = std::to_integer<uint8_t>(*r.p);
    ++r.p;
    --r.left;
    e.is_region = (flags & 1) != 0;
    e.inlined = (flags & 2) != 0;
    e.size = r.u64();
    if (e.inlined) {
      e.inline_bytes = r.bytes(e.size);
    }
    entries.push_back(std::move(e));
  }
  if (r.left != 0) throw FormatError("leaf manifest has trailing bytes");
  return entries;
}

}  // namespace lzckpt
