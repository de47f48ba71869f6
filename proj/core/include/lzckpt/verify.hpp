#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lzckpt {

// Randomized round-trip checking: build a random sharded state, capture it,
// mutate every device region the way a training update would, persist and
// commit, then restore and compare byte for byte against the image the
// capture was supposed to freeze.
//
// With skip_barrier set the mutation happens while copies are still in
// flight, before the update barrier. Every trial is then expected to be
// caught as a torn snapshot and the commit round to abort; a trial that
// slips through undetected is the failure.
struct VerifyOptions {
  std::filesystem::path scratch_dir;
  uint32_t trials = 5;
  uint64_t seed = 42;
  bool skip_barrier = false;
};

struct TrialOutcome {
  uint32_t trial = 0;
  uint64_t steps = 0;
  uint64_t payload_bytes = 0;
  bool committed = false;
  bool byte_exact = false;
  bool torn_detected = false;
  bool aborted = false;
};

struct VerifyReport {
  VerifyOptions options;
  std::vector<TrialOutcome> outcomes;

  uint32_t trials() const { return static_cast<uint32_t>(outcomes.size()); }
  uint32_t byte_exact() const;
  uint32_t torn_detected() const;
  uint32_t committed() const;

  // Honest mode: every trial committed and restored byte-exact.
  // skip_barrier mode: every trial was caught torn and no step committed.
  bool passed() const;
};

VerifyReport run_verification(const VerifyOptions& options);

}  // namespace lzckpt
