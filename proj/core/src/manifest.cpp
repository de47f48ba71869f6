#include "lzckpt/manifest.hpp"

#include <fstream>
#include <utility>

#include <json.hpp>

#include "lzckpt/errors.hpp"

namespace lzckpt {

using nlohmann::json;

ManifestStore::ManifestStore(std::filesystem::path manifest_path)
    : path_(std::move(manifest_path)) {
  load();
}

void ManifestStore::load() {
  std::ifstream in(path_);
  if (!in) return;  // fresh store

  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw CorruptManifest(path_.string() + ": " + e.what());
  }

  try {
    if (doc.at("format") != "lzckpt-manifest-1") {
      throw CorruptManifest(path_.string() + ": unknown manifest format");
    }
    for (const auto& step_doc : doc.at("steps")) {
      CommittedStep s;
      s.step = step_doc.at("step").get<uint64_t>();
      for (const auto& file_doc : step_doc.at("files")) {
        ManifestFileRecord f;
        f.relative_path = file_doc.at("path").get<std::string>();
        f.length = file_doc.at("length").get<uint64_t>();
        f.digest = std::stoull(file_doc.at("digest").get<std::string>(), nullptr, 16);
        s.files.push_back(std::move(f));
      }
      steps_.emplace(s.step, std::move(s));
    }
  } catch (const json::exception& e) {
    throw CorruptManifest(path_.string() + ": " + e.what());
  }
}

void ManifestStore::store_locked() const {
  json steps = json::array();
  for (const auto& [step, record] : steps_) {
    json files = json::array();
    for (const auto& f : record.files) {
      char digest_hex[17];
      std::snprintf(digest_hex, sizeof digest_hex, "%016llx",
                    static_cast<unsigned long long>(f.digest));
      files.push_back({{"path", f.relative_path},
                       {"length", f.length},
                       {"digest", std::string(digest_hex)}});
    }
    steps.push_back({{"step", step}, {"files", std::move(files)}});
  }
  json doc = {{"format", "lzckpt-manifest-1"}, {"steps", std::move(steps)}};

  std::filesystem::path tmp = path_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path_, ec);
  if (ec) throw IoError("cannot replace " + path_.string() + ": " + ec.message());
}

void ManifestStore::commit_step(CommittedStep step) {
  std::lock_guard lock(mutex_);
  steps_[step.step] = std::move(step);
  store_locked();
}

bool ManifestStore::is_committed(uint64_t step) const {
  std::lock_guard lock(mutex_);
  return steps_.count(step) != 0;
}

std::optional<uint64_t> ManifestStore::latest_committed() const {
  std::lock_guard lock(mutex_);
  if (steps_.empty()) return std::nullopt;
  return steps_.rbegin()->first;
}

std::vector<uint64_t> ManifestStore::committed_steps() const {
  std::lock_guard lock(mutex_);
  std::vector<uint64_t> out;
  out.reserve(steps_.size());
  for (const auto& [step, record] : steps_) out.push_back(step);
  return out;
}

std::vector<ManifestFileRecord> ManifestStore::files_for(uint64_t step) const {
  std::lock_guard lock(mutex_);
  auto it = steps_.find(step);
  if (it == steps_.end()) {
    throw NotCommitted("step " + std::to_string(step) + " is not committed");
  }
  return it->second.files;
}

}  // namespace lzckpt
