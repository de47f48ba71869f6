#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lzckpt/simulator.hpp"

namespace lzckpt {

// A scenario file is INI-style text with four sections:
//
//   [model]     preset = 13B            one built-in, or presets = 3B,7B,...
//               (or an explicit model: name, params, layers, hidden,
//                bytes_per_param_model, bytes_per_param_optimizer)
//   [cluster]   gpus_per_node and the six bandwidth knobs, bytes or bytes/s
//   [strategy]  kind = sync | async_snapshot | chunked | lazy | all
//               chunked_threads, async_overlap_last_shard
//   [run]       iterations, checkpoint_every, buffer_capacity, dp (list),
//               tp, pp, t_forward, t_backward, t_update
//
// '#' and ';' start comments. Sizes take decimal (KB, MB, GB, TB) or binary
// (KiB, MiB, GiB) suffixes, or scientific notation. Unknown sections, unknown
// keys, and duplicate keys are errors with line numbers. The expansion is the
// cross product models x dp values x strategies, in that nesting order.
struct Scenario {
  std::vector<sim::RunConfig> runs;
};

Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::filesystem::path& file);

// The full default scenario as annotated, parseable text (`defaults` verb).
std::string default_scenario_text();

// Size/rate literals as accepted in scenario values.
uint64_t parse_bytes(std::string_view text);       // "16GB", "64MiB", "1e9"
double parse_bandwidth(std::string_view text);     // bytes/s, same suffixes

// CSV emission. One row per run, schema fixed:
//   strategy,model,dp,checkpoint_every,blocked_s,throughput_Bps,iter_s,end_to_end_s
std::string csv_header();
std::string csv_row(const sim::RunConfig& cfg, const sim::Metrics& m);

// Simulates every run (optionally only one strategy) and renders the whole
// CSV document. Deterministic: same scenario, same bytes.
std::string run_scenario_csv(const Scenario& scenario,
                             std::optional<sim::StrategyKind> only = std::nullopt);

}  // namespace lzckpt
