#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <string>
#include <vector>

#include "lzckpt/errors.hpp"
#include "lzckpt/state_tree.hpp"
#include "test_support.hpp"

using namespace lzckpt;

namespace {

StateTree::RegionPtr region_of(uint64_t n, int pattern = 1) {
  return std::make_shared<DeviceRegion>(testsup::patterned(n, pattern));
}

}  // namespace

TEST_CASE("leaves are reachable by path and typed") {
  StateTree tree;
  tree.set_region("model/layer0/weights", region_of(256));
  tree.set_blob("meta/rng", testsup::patterned(16, 4));

  CHECK(tree.has("model/layer0/weights"));
  CHECK(tree.has("meta/rng"));
  CHECK_FALSE(tree.has("model/layer0"));  // interior node, not a leaf
  CHECK_FALSE(tree.has("model/layer1/weights"));

  CHECK(tree.region_at("model/layer0/weights")->size() == 256);
  CHECK(tree.blob_at("meta/rng").size() == 16);
  CHECK_THROWS_AS(tree.region_at("meta/rng"), Error);
  CHECK_THROWS_AS(tree.blob_at("model/layer0/weights"), Error);
  CHECK_THROWS_AS(tree.region_at("nowhere"), Error);
}

TEST_CASE("path collisions are rejected") {
  StateTree tree;
  tree.set_region("a/b", region_of(8));

  CHECK_THROWS_AS(tree.set_region("a/b", region_of(8)), DuplicatePath);
  CHECK_THROWS_AS(tree.set_blob("a/b/c", {}), DuplicatePath);  // descends through a leaf
  CHECK_THROWS_AS(tree.set_region("a", region_of(8)), DuplicatePath);  // interior node in use
  CHECK_THROWS_AS(tree.set_blob("", {}), DuplicatePath);
  CHECK_THROWS_AS(tree.set_blob("a//c", {}), DuplicatePath);
  CHECK_THROWS_AS(tree.set_region("x", nullptr), Error);
}

TEST_CASE("flatten order depends on paths, not insertion order") {
  StateTree tree;
  tree.set_region("opt/moments", region_of(100));
  tree.set_blob("cfg", testsup::patterned(10, 2));
  tree.set_region("model/l1/w", region_of(40));
  tree.set_region("model/l0/w", region_of(30));

  auto leaves = tree.flatten();
  REQUIRE(leaves.size() == 4);
  CHECK(leaves[0].path == "cfg");
  CHECK(leaves[1].path == "model/l0/w");
  CHECK(leaves[2].path == "model/l1/w");
  CHECK(leaves[3].path == "opt/moments");
  CHECK(leaves[0].blob != nullptr);
  CHECK(leaves[1].region != nullptr);
  CHECK(leaves[1].size == 30);

  CHECK(tree.leaf_count() == 4);
  CHECK(tree.total_leaf_bytes() == 10 + 30 + 40 + 100);
  CHECK(tree.top_level_count() == 3);
  CHECK(tree.top_level_names() == std::vector<std::string>{"cfg", "model", "opt"});
}

TEST_CASE("flatten_child scopes to one subtree with full paths") {
  StateTree tree;
  tree.set_region("model/l0/w", region_of(30));
  tree.set_region("model/l0/b", region_of(5));
  tree.set_region("opt/m", region_of(7));

  auto leaves = tree.flatten_child("model");
  REQUIRE(leaves.size() == 2);
  CHECK(leaves[0].path == "model/l0/b");
  CHECK(leaves[1].path == "model/l0/w");

  CHECK_THROWS_AS(tree.flatten_child("missing"), Error);
}

TEST_CASE("the metadata key is reserved at top level only") {
  StateTree reserved;
  reserved.set_blob(std::string(StateTree::kMetaKey), testsup::patterned(4, 1));
  CHECK_THROWS_AS(reserved.flatten(), DuplicatePath);

  StateTree nested;
  nested.set_blob("shard/__meta__", testsup::patterned(4, 1));
  CHECK(nested.flatten().size() == 1);  // only the exact top-level name collides
}

TEST_CASE("leaf manifest round-trips inlined and referenced leaves") {
  std::vector<LeafManifestEntry> entries(3);
  entries[0].path = "cfg/schedule";
  entries[0].is_region = false;
  entries[0].inlined = true;
  entries[0].inline_bytes = testsup::patterned(48, 7);
  entries[0].size = 48;
  entries[1].path = "model/w";
  entries[1].is_region = true;
  entries[1].inlined = false;
  entries[1].size = 1 << 22;
  entries[2].path = "opt/step";
  entries[2].is_region = true;
  entries[2].inlined = true;
  entries[2].inline_bytes = testsup::patterned(8, 9);
  entries[2].size = 8;

  auto bytes = serialize_leaf_manifest(entries);
  auto back = parse_leaf_manifest(bytes);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].path == entries[i].path);
    CHECK(back[i].is_region == entries[i].is_region);
    CHECK(back[i].inlined == entries[i].inlined);
    CHECK(back[i].size == entries[i].size);
    CHECK(back[i].inline_bytes == entries[i].inline_bytes);
  }

  SUBCASE("trailing bytes rejected") {
    bytes.push_back(std::byte{0});
    CHECK_THROWS_AS(parse_leaf_manifest(bytes), FormatError);
  }
  SUBCASE("truncation rejected") {
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_AS(parse_leaf_manifest(bytes), FormatError);
  }
  SUBCASE("empty manifest is valid") {
    auto none = serialize_leaf_manifest({});
    CHECK(parse_leaf_manifest(none).empty());
  }
}
