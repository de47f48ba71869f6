#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lzckpt/bench.hpp"
#include "lzckpt/consolidation.hpp"
#include "lzckpt/errors.hpp"
#include "lzckpt/manifest.hpp"
#include "lzckpt/scenario.hpp"
#include "lzckpt/verify.hpp"

namespace {

namespace fs = std::filesystem;

fs::path default_scratch() {
  if (const char* env = std::getenv("LZCKPT_SCRATCH")) return fs::path(env);
  return fs::temp_directory_path() / "lzckpt";
}

std::string human_bytes(uint64_t n) {
  char buf[64];
  if (n >= 1'000'000'000ull) {
    std::snprintf(buf, sizeof(buf), "%.2f GB", n / 1e9);
  } else if (n >= 1'000'000ull) {
    std::snprintf(buf, sizeof(buf), "%.2f MB", n / 1e6);
  } else if (n >= 1'000ull) {
    std::snprintf(buf, sizeof(buf), "%.2f KB", n / 1e3);
  } else {
    std::snprintf(buf, sizeof(buf), "%llu B", static_cast<unsigned long long>(n));
  }
  return buf;
}

int cmd_simulate(const std::string& config_path, const std::string& strategy,
                 const std::string& csv_path) {
  lzckpt::Scenario scenario = config_path.empty()
                                  ? lzckpt::parse_scenario(lzckpt::default_scenario_text())
                                  : lzckpt::load_scenario(config_path);

  std::optional<lzckpt::sim::StrategyKind> only;
  if (!strategy.empty() && strategy != "all") {
    only = lzckpt::sim::strategy_from_string(strategy);
    if (!only) throw lzckpt::ConfigError("unknown strategy '" + strategy + "'");
  }

  std::string csv = lzckpt::run_scenario_csv(scenario, only);
  if (csv_path.empty() || csv_path == "-") {
    std::cout << csv;
  } else {
    std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
    if (!out) throw lzckpt::IoError("cannot write " + csv_path);
    out << csv;
    std::cerr << "wrote " << csv_path << "\n";
  }
  return 0;
}

int cmd_verify(const fs::path& scratch, uint32_t trials, uint64_t seed, bool skip_barrier) {
  lzckpt::VerifyOptions opt;
  opt.scratch_dir = scratch / (skip_barrier ? "verify-torn" : "verify");
  opt.trials = trials;
  opt.seed = seed;
  opt.skip_barrier = skip_barrier;

  lzckpt::VerifyReport report = lzckpt::run_verification(opt);
  for (const auto& t : report.outcomes) {
    std::cout << "trial " << t.trial << ": steps=" << t.steps << " payload="
              << human_bytes(t.payload_bytes);
    if (skip_barrier) {
      std::cout << (t.torn_detected ? " torn-detected" : " TEAR MISSED")
                << (t.aborted ? " aborted" : t.committed ? " COMMITTED ANYWAY" : "");
    } else {
      std::cout << (t.committed ? " committed" : " NOT COMMITTED")
                << (t.byte_exact ? " byte-exact" : " MISMATCH");
    }
    std::cout << "\n";
  }
  if (skip_barrier) {
    std::cout << "verification (no barrier): " << report.torn_detected() << "/" << report.trials()
              << " torn snapshots caught, " << report.committed() << " committed\n";
  } else {
    std::cout << "verification: " << report.byte_exact() << "/" << report.trials()
              << " byte-exact round trips, " << report.committed() << "/" << report.trials()
              << " committed\n";
  }
  std::cout << (report.passed() ? "PASS" : "FAIL") << "\n";
  return report.passed() ? 0 : 1;
}

int cmd_bench(const lzckpt::BenchOptions& opt) {
  lzckpt::BenchReport r = lzckpt::run_bench(opt);

  std::cout << "ranks=" << r.ranks << " steps=" << r.steps_run
            << " checkpoints=" << r.checkpoints_attempted
            << " committed=" << r.committed_steps.size()
            << " aborted=" << r.aborted_steps.size() << "\n";
  for (const auto& s : r.rank_stats) {
    std::printf("rank %u: captures=%llu bytes=%s capture %.2f ms, barrier %.2f ms (max %.2f ms)\n",
                s.flat_rank, static_cast<unsigned long long>(s.captures),
                human_bytes(s.bytes_captured).c_str(), s.capture_s * 1e3, s.barrier_s * 1e3,
                s.max_barrier_s * 1e3);
  }
  if (r.restored_step > 0) {
    std::cout << "restore: step " << r.restored_step
              << (r.restore_matches ? " byte-exact" : " MISMATCH") << "\n";
  } else {
    std::cout << "restore: no committed step\n";
  }
  if (!r.aborted_steps.empty()) {
    std::cout << "aborted steps:";
    for (uint64_t s : r.aborted_steps) std::cout << " " << s;
    std::cout << "\n";
  }
  std::printf("wall %.2f s — %s\n", r.wall_s, r.passed() ? "PASS" : "FAIL");
  return r.passed() ? 0 : 1;
}

int cmd_gc(const fs::path& root) {
  lzckpt::ManifestStore manifest(root / "manifest.json");
  std::vector<uint64_t> removed = lzckpt::sweep_uncommitted(root, manifest);
  if (removed.empty()) {
    std::cout << "nothing to sweep under " << root.string() << "\n";
  } else {
    std::cout << "swept uncommitted steps:";
    for (uint64_t s : removed) std::cout << " " << s;
    std::cout << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lazy multi-tier checkpointing: simulator, round-trip verifier, live-engine bench"};
  app.require_subcommand(1);

  auto* simulate = app.add_subcommand("simulate", "run checkpoint strategies through the cluster model, emit CSV");
  std::string config_path, strategy, csv_path = "-";
  simulate->add_option("--config", config_path, "scenario file (omit for built-in defaults)");
  simulate->add_option("--strategy", strategy, "restrict to one strategy: sync, async_snapshot, chunked, lazy");
  simulate->add_option("--csv", csv_path, "output file, '-' for stdout");

  auto* defaults = app.add_subcommand("defaults", "print the default scenario as a config file");

  auto* verify = app.add_subcommand("verify", "randomized capture/mutate/restore round trips");
  std::string verify_scratch = default_scratch().string();
  uint32_t trials = 5;
  uint64_t seed = 42;
  bool skip_barrier = false;
  verify->add_option("--scratch", verify_scratch, "working directory (env LZCKPT_SCRATCH)");
  verify->add_option("--trials", trials, "number of randomized trials");
  verify->add_option("--seed", seed, "base RNG seed");
  verify->add_flag("--skip-barrier", skip_barrier,
                   "mutate before the update barrier; every trial must be caught torn");

  auto* bench = app.add_subcommand("bench", "multi-rank trainer loop against the real engine");
  lzckpt::BenchOptions bopt;
  bopt.scratch_dir = default_scratch();
  std::string bench_scratch = bopt.scratch_dir.string();
  std::string buffer_text, copy_bw_text, storage_bw_text;
  int64_t kill_at_step = -1;
  bench->add_option("--scratch", bench_scratch, "working directory (env LZCKPT_SCRATCH)");
  bench->add_option("--dp", bopt.dp, "data-parallel width");
  bench->add_option("--pp", bopt.pp, "pipeline stages");
  bench->add_option("--tp", bopt.tp, "tensor-parallel width");
  bench->add_option("--gpus-per-node", bopt.gpus_per_node, "0 = one node");
  bench->add_option("--steps", bopt.steps, "training steps");
  bench->add_option("--every", bopt.checkpoint_every, "checkpoint cadence, 0 = off");
  bench->add_option("--params", bopt.params, "model parameter count");
  bench->add_option("--layers", bopt.layers, "model layer count");
  bench->add_option("--compute-ms", bopt.compute_ms, "forward+backward time per step");
  bench->add_option("--buffer", buffer_text, "host pool per rank, e.g. 256MB");
  bench->add_option("--copy-bw", copy_bw_text, "device-to-host bytes/s, e.g. 2GB");
  bench->add_option("--storage-bw", storage_bw_text, "flush writer bytes/s");
  bench->add_option("--seed", bopt.seed, "state RNG seed");
  bench->add_flag("--fsync", bopt.fsync, "fsync each shard file on finalize");
  bench->add_option("--kill-at-step", kill_at_step, "break one rank's storage at this step");
  bench->add_option("--kill-rank", bopt.kill_rank, "which flat rank to break");

  auto* gc = app.add_subcommand("gc", "remove uncommitted step directories under a checkpoint root");
  std::string gc_root;
  gc->add_option("root", gc_root, "checkpoint root (default: $LZCKPT_SCRATCH)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(config_path, strategy, csv_path);
    if (defaults->parsed()) {
      std::cout << lzckpt::default_scenario_text();
      return 0;
    }
    if (verify->parsed()) return cmd_verify(verify_scratch, trials, seed, skip_barrier);
    if (bench->parsed()) {
      bopt.scratch_dir = bench_scratch;
      if (!buffer_text.empty()) bopt.buffer_bytes = lzckpt::parse_bytes(buffer_text);
      if (!copy_bw_text.empty()) bopt.copy_bandwidth_Bps = lzckpt::parse_bandwidth(copy_bw_text);
      if (!storage_bw_text.empty()) {
        bopt.storage_bandwidth_Bps = lzckpt::parse_bandwidth(storage_bw_text);
      }
      if (kill_at_step >= 0) bopt.kill_at_step = static_cast<uint32_t>(kill_at_step);
      return cmd_bench(bopt);
    }
    if (gc->parsed()) {
      fs::path root = gc_root.empty() ? default_scratch() : fs::path(gc_root);
      return cmd_gc(root);
    }
  } catch (const lzckpt::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
