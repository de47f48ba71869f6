#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lzckpt/engine.hpp"
#include "lzckpt/manifest.hpp"
#include "lzckpt/topology.hpp"

namespace lzckpt {

enum class Vote { Prepared, Failed };
enum class Decision { Committed, Aborted };
const char* to_string(Decision d);

struct ValidationReport {
  Vote vote = Vote::Failed;
  std::vector<ManifestFileRecord> files;  // what the manifest records on commit
  std::string detail;                     // first problem found, empty when Prepared
};

// File-level validation of one rank's shard files for a step: presence,
// parseable header, exact payload extent, every entry checksum. Reads every
// payload byte back, so a Prepared vote certifies bytes on storage, not
// bytes we meant to write.
ValidationReport validate_rank_files(const std::filesystem::path& root, uint64_t step,
                                     const std::vector<ShardDescriptor>& shards);

// One rank's view of the commit protocol. prepare() runs phase one and may
// return nothing at all, which models a rank that died without answering;
// the coordinator can only find out via its timeout.
class CommitParticipant {
public:
  virtual ~CommitParticipant() = default;
  virtual uint32_t flat_rank() const = 0;
  virtual std::optional<ValidationReport> prepare(uint64_t step) = 0;
  virtual void learn(uint64_t step, Decision decision) = 0;
};

// Production participant: gates on the capture ticket (a torn or abandoned
// capture votes Failed without looking at disk), then validates the files.
class EngineCommitParticipant : public CommitParticipant {
public:
  EngineCommitParticipant(Engine& engine, const CheckpointPlan& plan,
                          std::shared_ptr<CaptureTicket> ticket);

  uint32_t flat_rank() const override;
  std::optional<ValidationReport> prepare(uint64_t step) override;
  void learn(uint64_t step, Decision decision) override;

  std::optional<Decision> last_decision() const;

private:
  Engine& engine_;
  const CheckpointPlan& plan_;
  std::shared_ptr<CaptureTicket> ticket_;
  mutable std::mutex mutex_;
  std::optional<Decision> last_decision_;
};

struct CommitConfig {
  std::chrono::milliseconds timeout{30'000};  // per step, both aggregation tiers
};

struct CommitRecord {
  uint64_t step = 0;
  Decision decision = Decision::Aborted;
  std::string reason;                    // empty when committed
  std::vector<uint32_t> problem_ranks;   // voted Failed or never answered
};

// Runs the two-phase protocol for one step: per-rank votes are aggregated by
// node-leader threads, node verdicts by this coordinator, and the decision
// flows back down the same tree. All-or-nothing: one Failed vote, or one
// silent rank past the timeout, aborts the step for everyone. A committed
// step is recorded in the manifest before any participant learns the
// decision. Decisions are final; re-running a decided step returns the
// original record untouched.
//
// Never call this from a trainer thread; it blocks for up to the timeout.
class CommitCoordinator {
public:
  CommitCoordinator(ManifestStore& manifest, ParallelTopology topo, CommitConfig config = {});

  CommitRecord run_step(uint64_t step, const std::vector<CommitParticipant*>& participants);
  std::optional<CommitRecord> record_for(uint64_t step) const;

private:
  ManifestStore& manifest_;
  const ParallelTopology topo_;
  const CommitConfig config_;
  mutable std::mutex mutex_;
  std::map<uint64_t, CommitRecord> decided_;
};

// Removes step directories under the checkpoint root that the manifest does
// not list as committed (aborted steps, debris from a crashed run). Returns
// the steps swept away.
std::vector<uint64_t> sweep_uncommitted(const std::filesystem::path& root,
                                        const ManifestStore& manifest);

}  // namespace lzckpt
