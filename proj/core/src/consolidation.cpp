#include "lzckpt/consolidation.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <set>
#include <thread>
#include <utility>

#include "lzckpt/checksum.hpp"
#include "lzckpt/errors.hpp"
#include "lzckpt/format.hpp"

namespace lzckpt {

const char* to_string(Decision d) {
  return d == Decision::Committed ? "committed" : "aborted";
}

ValidationReport validate_rank_files(const std::filesystem::path& root, uint64_t step,
                                     const std::vector<ShardDescriptor>& shards) {
  ValidationReport report;  // vote defaults to Failed
  for (const auto& shard : shards) {
    const std::filesystem::path full = shard_path(root, step, shard);
    const std::string rel =
        step_dirname(step) + "/" + rank_dirname(shard.owner) + "/" + shard.filename();
    try {
      CheckpointFileHeader header = read_header(full);
      auto bad = validate_entries(full, header);
      if (!bad.empty()) {
        report.files.clear();
        report.detail = rel + ": checksum mismatch in entry '" + bad.front() + "'";
        return report;
      }

      std::ifstream in(full, std::ios::binary);
      if (!in) throw IoError("cannot open " + full.string());
      Fnv64 digest;
      uint64_t length = 0;
      char buf[1 << 16];
      while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        digest.update(reinterpret_cast<const std::byte*>(buf),
                      static_cast<size_t>(in.gcount()));
        length += static_cast<uint64_t>(in.gcount());
      }
      report.files.push_back({rel, length, digest.digest()});
    } catch (const std::exception& e) {
      report.files.clear();
      report.detail = e.what();
      return report;
    }
  }
  report.vote = Vote::Prepared;
  return report;
}

EngineCommitParticipant::EngineCommitParticipant(Engine& engine, const CheckpointPlan& plan,
                                                 std::shared_ptr<CaptureTicket> ticket)
    : engine_(engine), plan_(plan), ticket_(std::move(ticket)) {}

uint32_t EngineCommitParticipant::flat_rank() const {
  return lzckpt::flat_rank(plan_.topology(), engine_.rank());
}

std::optional<ValidationReport> EngineCommitParticipant::prepare(uint64_t step) {
  // The ticket gate comes first: shard files of a torn capture can look
  // perfectly healthy on disk and must still never be committed.
  try {
    engine_.wait_persisted(ticket_);
  } catch (const std::exception& e) {
    ValidationReport r;
    r.detail = e.what();
    return r;
  }
  return validate_rank_files(engine_.checkpoint_root(), step, plan_.shards(flat_rank()));
}

void EngineCommitParticipant::learn(uint64_t /*step*/, Decision decision) {
  std::lock_guard lock(mutex_);
  last_decision_ = decision;
}

std::optional<Decision> EngineCommitParticipant::last_decision() const {
  std::lock_guard lock(mutex_);
  return last_decision_;
}

namespace {

template <typename T>
class Mailbox {
public:
  void post(T value) {
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(std::move(value));
    }
    cv_.notify_one();
  }
  std::optional<T> take_until(std::chrono::steady_clock::time_point deadline) {
    std::unique_lock lock(mutex_);
    if (!cv_.wait_until(lock, deadline, [&] { return !queue_.empty(); })) return std::nullopt;
    T value = std::move(queue_.front());
    queue_.pop_front();
    return value;
  }

private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<T> queue_;
};

struct DecisionLatch {
  std::mutex mutex;
  std::condition_variable cv;
  std::optional<Decision> decision;

  void set(Decision d) {
    {
      std::lock_guard lock(mutex);
      decision = d;
    }
    cv.notify_all();
  }
  Decision wait() {
    std::unique_lock lock(mutex);
    cv.wait(lock, [&] { return decision.has_value(); });
    return *decision;
  }
};

struct VoteMsg {
  uint32_t rank = 0;
  ValidationReport report;
};

struct NodeMsg {
  uint32_t node = 0;
  Vote vote = Vote::Prepared;
  std::vector<ManifestFileRecord> files;
  std::vector<uint32_t> problems;
  std::string detail;
};

}  // namespace

CommitCoordinator::CommitCoordinator(ManifestStore& manifest, ParallelTopology topo,
                                     CommitConfig config)
    : manifest_(manifest), topo_(topo), config_(config) {}

std::optional<CommitRecord> CommitCoordinator::record_for(uint64_t step) const {
  std::lock_guard lock(mutex_);
  auto it = decided_.find(step);
  if (it == decided_.end()) return std::nullopt;
  return it->second;
}

CommitRecord CommitCoordinator::run_step(uint64_t step,
                                         const std::vector<CommitParticipant*>& participants) {
  {
    std::lock_guard lock(mutex_);
    auto it = decided_.find(step);
    if (it != decided_.end()) return it->second;
  }
  if (participants.empty()) {
    CommitRecord rec{step, Decision::Aborted, "no participants", {}};
    std::lock_guard lock(mutex_);
    decided_.emplace(step, rec);
    return rec;
  }

  const auto deadline = std::chrono::steady_clock::now() + config_.timeout;
  // Leaders flush their report right after the vote deadline passes, so the
  // coordinator must listen a little longer than the participants get to
  // vote. Otherwise a leader blaming a silent rank races the coordinator's
  // own timeout and the blame can be lost.
  const auto report_deadline = deadline + config_.timeout;
  auto up = std::make_shared<Mailbox<NodeMsg>>();
  auto latch = std::make_shared<DecisionLatch>();

  std::map<uint32_t, std::vector<CommitParticipant*>> nodes;
  for (auto* p : participants) nodes[p->flat_rank() / topo_.gpus_per_node].push_back(p);

  std::vector<std::thread> leaders;
  leaders.reserve(nodes.size());
  for (auto& [node_id_ref, group_ref] : nodes) {
    const uint32_t node_id = node_id_ref;
    std::vector<CommitParticipant*> group = group_ref;
    leaders.emplace_back([node_id, group, step, deadline, up, latch] {
      auto votes = std::make_shared<Mailbox<VoteMsg>>();
      std::vector<std::thread> workers;
      workers.reserve(group.size());
      for (auto* p : group) {
        workers.emplace_back([votes, p, step] {
          auto report = p->prepare(step);
          if (report) votes->post(VoteMsg{p->flat_rank(), std::move(*report)});
        });
      }

      NodeMsg msg;
      msg.node = node_id;
      std::set<uint32_t> responded;
      for (size_t i = 0; i < group.size(); ++i) {
        auto vote = votes->take_until(deadline);
        if (!vote) break;
        responded.insert(vote->rank);
        if (vote->report.vote == Vote::Failed) {
          msg.vote = Vote::Failed;
          msg.problems.push_back(vote->rank);
          if (msg.detail.empty()) {
            msg.detail = "rank " + std::to_string(vote->rank) + ": " + vote->report.detail;
          }
        } else {
          msg.files.insert(msg.files.end(),
                           std::make_move_iterator(vote->report.files.begin()),
                           std::make_move_iterator(vote->report.files.end()));
        }
      }
      for (auto* p : group) {
        if (!responded.count(p->flat_rank())) {
          msg.vote = Vote::Failed;
          msg.problems.push_back(p->flat_rank());
          if (msg.detail.empty()) {
            msg.detail = "rank " + std::to_string(p->flat_rank()) +
                         " did not answer before the timeout";
          }
        }
      }
      up->post(std::move(msg));

      // Phase two flows back down the same tree: the leader relays the
      // decision to the ranks that answered. Silent ranks learn nothing,
      // exactly like a crashed process would.
      Decision decision = latch->wait();
      for (auto* p : group) {
        if (responded.count(p->flat_rank())) p->learn(step, decision);
      }
      for (auto& w : workers) w.join();
    });
  }

  Vote overall = Vote::Prepared;
  std::vector<ManifestFileRecord> files;
  std::vector<uint32_t> problems;
  std::string reason;
  for (size_t i = 0; i < nodes.size(); ++i) {
    auto msg = up->take_until(report_deadline);
    if (!msg) {
      overall = Vote::Failed;
      if (reason.empty()) reason = "a node leader did not report before the timeout";
      break;
    }
    if (msg->vote == Vote::Failed) {
      overall = Vote::Failed;
      problems.insert(problems.end(), msg->problems.begin(), msg->problems.end());
      if (reason.empty()) reason = msg->detail;
    } else {
      files.insert(files.end(), std::make_move_iterator(msg->files.begin()),
                   std::make_move_iterator(msg->files.end()));
    }
  }

  CommitRecord rec;
  rec.step = step;
  rec.decision = overall == Vote::Prepared ? Decision::Committed : Decision::Aborted;
  rec.reason = std::move(reason);
  std::sort(problems.begin(), problems.end());
  rec.problem_ranks = std::move(problems);

  if (rec.decision == Decision::Committed) {
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.relative_path < b.relative_path; });
    manifest_.commit_step({step, std::move(files)});
  }
  {
    std::lock_guard lock(mutex_);
    decided_.emplace(step, rec);
  }
  latch->set(rec.decision);
  for (auto& t : leaders) t.join();
  return rec;
}

std::vector<uint64_t> sweep_uncommitted(const std::filesystem::path& root,
                                        const ManifestStore& manifest) {
  std::vector<uint64_t> removed;
  if (!std::filesystem::exists(root)) return removed;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("step-", 0) != 0) continue;
    const std::string digits = name.substr(5);
    if (digits.empty() ||
        digits.find_first_not_of("0123456789") != std::string::npos) {
      continue;
    }
    const uint64_t step = std::stoull(digits);
    if (!manifest.is_committed(step)) {
      std::filesystem::remove_all(entry.path());
      removed.push_back(step);
    }
  }
  std::sort(removed.begin(), removed.end());
  return removed;
}

}  // namespace lzckpt
