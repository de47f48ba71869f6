#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace lzckpt {

struct ManifestFileRecord {
  std::string relative_path;  // below the checkpoint root
  uint64_t length = 0;
  uint64_t digest = 0;  // whole-file hash as validated at commit time
};

struct CommittedStep {
  uint64_t step = 0;
  std::vector<ManifestFileRecord> files;
};

// Durable record of which steps are committed and exactly which files make
// them up. Every mutation rewrites the manifest to a temp file and renames it
// into place, so the on-disk manifest is always either the old or the new
// version in full. A step absent from the manifest was never committed, no
// matter what shard files exist beside it.
class ManifestStore {
public:
  explicit ManifestStore(std::filesystem::path manifest_path);

  void commit_step(CommittedStep step);

  bool is_committed(uint64_t step) const;
  std::optional<uint64_t> latest_committed() const;
  std::vector<uint64_t> committed_steps() const;
  std::vector<ManifestFileRecord> files_for(uint64_t step) const;  // throws NotCommitted

  const std::filesystem::path& path() const { return path_; }

private:
  void load();
  void store_locked() const;

  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<uint64_t, CommittedStep> steps_;
};

}  // namespace lzckpt
