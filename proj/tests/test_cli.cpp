#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lzckpt/manifest.hpp"
#include "lzckpt/scenario.hpp"
#include "test_support.hpp"

#ifndef LZCKPT_CLI_PATH
#error "LZCKPT_CLI_PATH must point at the built binary"
#endif

namespace {

namespace fs = std::filesystem;

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr combined
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

CmdResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static fs::path io_dir = testsup::fresh_dir("cli-io");
  static int counter = 0;
  fs::path capture = io_dir / ("out-" + std::to_string(counter++) + ".txt");

  std::string cmd = env_prefix + "\"" + LZCKPT_CLI_PATH + "\" " + args + " >\"" +
                    capture.string() + "\" 2>&1";
  int status = std::system(cmd.c_str());

  CmdResult r;
  if (status != -1 && WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  r.output = slurp(capture);
  return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

// A scenario small enough to simulate instantly.
const char* kTinyScenario =
    "[model]\n"
    "params = 1MB\n"
    "bytes_per_param_model = 1\n"
    "bytes_per_param_optimizer = 1\n"
    "[cluster]\n"
    "gpus_per_node = 1\n"
    "[run]\n"
    "iterations = 2\n"
    "t_forward = 0.1\n"
    "t_backward = 0.1\n"
    "t_update = 0.05\n";

fs::path write_scenario(const fs::path& dir, const std::string& body) {
  fs::path p = dir / "scenario.ini";
  std::ofstream out(p, std::ios::binary);
  out << body;
  return p;
}

size_t line_count(const std::string& s) {
  return static_cast<size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("defaults prints a scenario the parser accepts") {
  CmdResult r = run_cli("defaults");
  CHECK(r.exit_code == 0);
  lzckpt::Scenario s = lzckpt::parse_scenario(r.output);
  REQUIRE(s.runs.size() == 1);
  CHECK(s.runs[0].model.name == "13B");
}

TEST_CASE("simulate emits the same CSV to stdout and to a file, byte for byte") {
  auto dir = testsup::fresh_dir("cli-sim");
  fs::path cfg = write_scenario(dir, kTinyScenario);

  CmdResult to_stdout = run_cli("simulate --config \"" + cfg.string() + "\"");
  CHECK(to_stdout.exit_code == 0);
  CHECK(to_stdout.output.rfind(lzckpt::csv_header(), 0) == 0);
  CHECK(line_count(to_stdout.output) == 2);  // header + one run

  fs::path a = dir / "a.csv";
  fs::path b = dir / "b.csv";
  CmdResult r1 = run_cli("simulate --config \"" + cfg.string() + "\" --csv \"" + a.string() + "\"");
  CmdResult r2 = run_cli("simulate --config \"" + cfg.string() + "\" --csv \"" + b.string() + "\"");
  CHECK(r1.exit_code == 0);
  CHECK(r2.exit_code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) == to_stdout.output);
}

TEST_CASE("simulate can restrict the run to one strategy") {
  auto dir = testsup::fresh_dir("cli-strategy");
  fs::path cfg = write_scenario(dir, std::string(kTinyScenario) + "[strategy]\nkind = all\n");

  CmdResult all = run_cli("simulate --config \"" + cfg.string() + "\"");
  CHECK(all.exit_code == 0);
  CHECK(line_count(all.output) == 5);  // header + four strategies

  CmdResult lazy = run_cli("simulate --config \"" + cfg.string() + "\" --strategy lazy");
  CHECK(lazy.exit_code == 0);
  CHECK(line_count(lazy.output) == 2);
  CHECK(contains(lazy.output, "\nlazy,"));

  CmdResult bad = run_cli("simulate --config \"" + cfg.string() + "\" --strategy warp");
  CHECK(bad.exit_code == 2);
  CHECK(contains(bad.output, "unknown strategy"));
}

TEST_CASE("configuration problems exit with code 2") {
  auto dir = testsup::fresh_dir("cli-badcfg");
  fs::path cfg = write_scenario(dir, "[run]\nbogus = 1\n");
  CmdResult r = run_cli("simulate --config \"" + cfg.string() + "\"");
  CHECK(r.exit_code == 2);
  CHECK(contains(r.output, "scenario line 2"));

  CmdResult missing = run_cli("simulate --config \"" + (dir / "nope.ini").string() + "\"");
  CHECK(missing.exit_code == 2);
  CHECK(contains(missing.output, "cannot open"));
}

TEST_CASE("usage errors exit with code 2, help with 0") {
  CHECK(run_cli("frobnicate").exit_code == 2);
  CHECK(run_cli("").exit_code == 2);  // a subcommand is required
  CHECK(run_cli("simulate --bogus-flag").exit_code == 2);
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(contains(run_cli("--help").output, "simulate"));
}

TEST_CASE("verify reports byte-exact round trips") {
  auto dir = testsup::fresh_dir("cli-verify");
  CmdResult r = run_cli("verify --trials 1 --scratch \"" + dir.string() + "\"");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.output, "1/1 byte-exact round trips"));
  CHECK(contains(r.output, "PASS"));
}

TEST_CASE("verify --skip-barrier reports torn snapshots") {
  auto dir = testsup::fresh_dir("cli-verify-torn");
  CmdResult r = run_cli("verify --skip-barrier --trials 1 --scratch \"" + dir.string() + "\"");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.output, "1/1 torn snapshots caught"));
  CHECK(contains(r.output, "torn-detected"));
  CHECK(contains(r.output, "PASS"));
}

TEST_CASE("bench runs a small training loop to PASS") {
  auto dir = testsup::fresh_dir("cli-bench");
  CmdResult r = run_cli("bench --dp 2 --steps 2 --params 120000 --compute-ms 5 --scratch \"" +
                        dir.string() + "\"");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.output, "ranks=2"));
  CHECK(contains(r.output, "byte-exact"));
  CHECK(contains(r.output, "PASS"));
}

TEST_CASE("bench with a broken disk still exits cleanly and reports the aborts") {
  auto dir = testsup::fresh_dir("cli-bench-kill");
  CmdResult r = run_cli(
      "bench --dp 2 --steps 2 --params 120000 --compute-ms 5 --kill-at-step 1 --scratch \"" +
      dir.string() + "\"");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.output, "aborted steps:"));
  CHECK(contains(r.output, "PASS"));
}

TEST_CASE("gc sweeps only uncommitted step directories") {
  auto root = testsup::fresh_dir("cli-gc");

  CmdResult empty = run_cli("gc \"" + root.string() + "\"");
  CHECK(empty.exit_code == 0);
  CHECK(contains(empty.output, "nothing to sweep"));

  // One committed step, one abandoned one.
  {
    lzckpt::ManifestStore manifest(root / "manifest.json");
    manifest.commit_step(lzckpt::CommittedStep{6, {}});
  }
  fs::create_directories(root / "step-5");
  fs::create_directories(root / "step-6");
  fs::create_directories(root / "not-a-step");
  std::ofstream(root / "step-5" / "junk.bin") << "x";

  CmdResult swept = run_cli("gc \"" + root.string() + "\"");
  CHECK(swept.exit_code == 0);
  CHECK(contains(swept.output, "swept uncommitted steps: 5"));
  CHECK_FALSE(fs::exists(root / "step-5"));
  CHECK(fs::exists(root / "step-6"));
  CHECK(fs::exists(root / "not-a-step"));
}

TEST_CASE("gc falls back to the scratch environment variable") {
  auto root = testsup::fresh_dir("cli-gc-env");
  CmdResult r = run_cli("gc", "LZCKPT_SCRATCH=\"" + root.string() + "\" ");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.output, "nothing to sweep"));
  CHECK(contains(r.output, root.string()));
}
