#include "lzckpt/scenario.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "lzckpt/errors.hpp"

namespace lzckpt {
namespace {

struct Entry {
  std::string value;
  int line = 0;
  mutable bool used = false;
};

using Section = std::map<std::string, Entry>;

struct RawScenario {
  std::map<std::string, Section> sections;

  const Entry* find(const std::string& sec, const std::string& key) const {
    auto s = sections.find(sec);
    if (s == sections.end()) return nullptr;
    auto e = s->second.find(key);
    if (e == s->second.end()) return nullptr;
    e->second.used = true;
    return &e->second;
  }
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void fail_at(int line, const std::string& message) {
  throw ConfigError("scenario line " + std::to_string(line) + ": " + message);
}

bool known_section(std::string_view name) {
  return name == "model" || name == "cluster" || name == "strategy" || name == "run";
}

RawScenario tokenize(std::string_view text) {
  RawScenario raw;
  std::string current;
  int lineno = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? nl : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;

    size_t comment = line.find_first_of("#;");
    if (comment != std::string_view::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail_at(lineno, "unterminated section header");
      std::string_view name = trim(line.substr(1, line.size() - 2));
      if (!known_section(name)) {
        fail_at(lineno, "unknown section [" + std::string(name) + "]");
      }
      current = std::string(name);
      raw.sections[current];
      continue;
    }

    size_t eq = line.find('=');
    if (eq == std::string_view::npos) fail_at(lineno, "expected 'key = value'");
    if (current.empty()) fail_at(lineno, "key appears before any section header");
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) fail_at(lineno, "empty key");
    if (value.empty()) fail_at(lineno, "empty value for '" + key + "'");

    auto [it, inserted] = raw.sections[current].emplace(key, Entry{value, lineno});
    if (!inserted) {
      fail_at(lineno, "duplicate key '" + key + "' in [" + current + "] (first at line " +
                          std::to_string(it->second.line) + ")");
    }
  }
  return raw;
}

double suffix_multiplier(std::string_view suffix, int line) {
  if (suffix.empty() || suffix == "B") return 1.0;
  if (suffix == "KB") return 1e3;
  if (suffix == "MB") return 1e6;
  if (suffix == "GB") return 1e9;
  if (suffix == "TB") return 1e12;
  if (suffix == "KiB") return 1024.0;
  if (suffix == "MiB") return 1024.0 * 1024.0;
  if (suffix == "GiB") return 1024.0 * 1024.0 * 1024.0;
  if (suffix == "TiB") return 1024.0 * 1024.0 * 1024.0 * 1024.0;
  fail_at(line, "unknown size suffix '" + std::string(suffix) + "'");
}

double scaled_value(std::string_view text, int line) {
  std::string s(trim(text));
  if (s.empty()) fail_at(line, "empty size value");
  size_t idx = 0;
  double base = 0;
  try {
    base = std::stod(s, &idx);
  } catch (const std::exception&) {
    fail_at(line, "'" + s + "' is not a number");
  }
  std::string_view suffix = trim(std::string_view(s).substr(idx));
  double v = base * suffix_multiplier(suffix, line);
  if (!std::isfinite(v) || v < 0) fail_at(line, "size '" + s + "' out of range");
  return v;
}

uint64_t to_count(const Entry& e, const char* what) {
  const std::string& s = e.value;
  size_t idx = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &idx);
  } catch (const std::exception&) {
    fail_at(e.line, std::string(what) + " '" + s + "' is not a whole number");
  }
  if (idx != s.size() || s.front() == '-') {
    fail_at(e.line, std::string(what) + " '" + s + "' is not a whole number");
  }
  return v;
}

double to_real(const Entry& e, const char* what) {
  size_t idx = 0;
  double v = 0;
  try {
    v = std::stod(e.value, &idx);
  } catch (const std::exception&) {
    fail_at(e.line, std::string(what) + " '" + e.value + "' is not a number");
  }
  if (idx != e.value.size() || !std::isfinite(v)) {
    fail_at(e.line, std::string(what) + " '" + e.value + "' is not a number");
  }
  return v;
}

bool to_flag(const Entry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  fail_at(e.line, "'" + e.value + "' is not a boolean (true/false)");
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= text.size()) {
    size_t comma = text.find(',', start);
    std::string_view piece =
        trim(text.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (!piece.empty()) out.emplace_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct ModelChoice {
  ModelSpec model;
  uint32_t default_pp = 1;
  bool from_preset = false;
};

std::vector<ModelChoice> bind_models(const RawScenario& raw) {
  const Entry* preset = raw.find("model", "preset");
  const Entry* presets = raw.find("model", "presets");
  const Entry* params = raw.find("model", "params");

  int given = (preset != nullptr) + (presets != nullptr) + (params != nullptr);
  if (given > 1) {
    const Entry* e = presets ? presets : params;
    fail_at(e->line, "choose one of 'preset', 'presets', or an explicit model via 'params'");
  }

  std::vector<ModelChoice> out;
  if (params) {
    ModelSpec m;
    m.name = "custom";
    if (const Entry* e = raw.find("model", "name")) m.name = e->value;
    double p = scaled_value(params->value, params->line);
    m.param_count = static_cast<uint64_t>(std::llround(p));
    m.layer_count = 1;
    m.hidden_dim = 1024;
    if (const Entry* e = raw.find("model", "layers")) m.layer_count = static_cast<uint32_t>(to_count(*e, "layers"));
    if (const Entry* e = raw.find("model", "hidden")) m.hidden_dim = static_cast<uint32_t>(to_count(*e, "hidden"));
    if (const Entry* e = raw.find("model", "bytes_per_param_model")) {
      m.bytes_per_param_model = static_cast<uint32_t>(to_count(*e, "bytes_per_param_model"));
    }
    if (const Entry* e = raw.find("model", "bytes_per_param_optimizer")) {
      m.bytes_per_param_optimizer = static_cast<uint32_t>(to_count(*e, "bytes_per_param_optimizer"));
    }
    out.push_back(ModelChoice{m, 1, false});
    return out;
  }

  std::vector<std::string> names;
  int line = 0;
  if (presets) {
    names = split_list(presets->value);
    line = presets->line;
    if (names.empty()) fail_at(line, "'presets' lists no models");
  } else {
    names.push_back(preset ? preset->value : "13B");
    line = preset ? preset->line : 0;
  }
  for (const std::string& name : names) {
    const ModelPreset* p = find_model_preset(name);
    if (!p) {
      std::string msg = "unknown model preset '" + name + "'";
      if (line > 0) fail_at(line, msg);
      throw ConfigError(msg);
    }
    out.push_back(ModelChoice{p->model, p->nodes, true});
  }
  return out;
}

std::vector<sim::Strategy> bind_strategies(const RawScenario& raw) {
  std::string kind = "lazy";
  int line = 0;
  if (const Entry* e = raw.find("strategy", "kind")) {
    kind = e->value;
    line = e->line;
  }
  uint32_t threads = 4;
  if (const Entry* e = raw.find("strategy", "chunked_threads")) {
    threads = static_cast<uint32_t>(to_count(*e, "chunked_threads"));
    if (threads == 0) fail_at(e->line, "chunked_threads must be at least 1");
  }
  bool overlap = false;
  if (const Entry* e = raw.find("strategy", "async_overlap_last_shard")) overlap = to_flag(*e);

  auto build = [&](sim::StrategyKind k) {
    sim::Strategy s;
    s.kind = k;
    s.chunked_threads = threads;
    s.async_overlap_last_shard = overlap;
    return s;
  };

  if (kind == "all") {
    return {build(sim::StrategyKind::Sync), build(sim::StrategyKind::AsyncSnapshot),
            build(sim::StrategyKind::Chunked), build(sim::StrategyKind::Lazy)};
  }
  auto parsed = sim::strategy_from_string(kind);
  if (!parsed) {
    std::string msg = "unknown strategy '" + kind + "'";
    if (line > 0) fail_at(line, msg);
    throw ConfigError(msg);
  }
  return {build(*parsed)};
}

}  // namespace

uint64_t parse_bytes(std::string_view text) {
  double v = scaled_value(text, 0);
  if (v > 9.2e18) throw ConfigError("size '" + std::string(text) + "' out of range");
  return static_cast<uint64_t>(std::llround(v));
}

double parse_bandwidth(std::string_view text) { return scaled_value(text, 0); }

Scenario parse_scenario(std::string_view text) {
  RawScenario raw = tokenize(text);

  std::vector<ModelChoice> models = bind_models(raw);
  std::vector<sim::Strategy> strategies = bind_strategies(raw);

  sim::ClusterSpec cluster;
  if (const Entry* e = raw.find("cluster", "gpus_per_node")) {
    cluster.gpus_per_node = static_cast<uint32_t>(to_count(*e, "gpus_per_node"));
    if (cluster.gpus_per_node == 0) fail_at(e->line, "gpus_per_node must be at least 1");
  }
  if (const Entry* e = raw.find("cluster", "d2h_pinned")) cluster.b_d2h_pinned = scaled_value(e->value, e->line);
  if (const Entry* e = raw.find("cluster", "d2h_unpinned")) cluster.b_d2h_unpinned = scaled_value(e->value, e->line);
  if (const Entry* e = raw.find("cluster", "d2d")) cluster.b_d2d = scaled_value(e->value, e->line);
  if (const Entry* e = raw.find("cluster", "pfs_aggregate")) cluster.b_pfs_aggregate = scaled_value(e->value, e->line);
  if (const Entry* e = raw.find("cluster", "per_writer_cap")) cluster.per_writer_cap = scaled_value(e->value, e->line);
  if (const Entry* e = raw.find("cluster", "alloc_bandwidth")) cluster.alloc_bandwidth = scaled_value(e->value, e->line);

  uint32_t iterations = 10;
  if (const Entry* e = raw.find("run", "iterations")) {
    iterations = static_cast<uint32_t>(to_count(*e, "iterations"));
    if (iterations == 0) fail_at(e->line, "iterations must be at least 1");
  }
  uint32_t every = 1;
  if (const Entry* e = raw.find("run", "checkpoint_every")) {
    every = static_cast<uint32_t>(to_count(*e, "checkpoint_every"));
  }
  uint64_t buffer_capacity = 16'000'000'000ull;
  if (const Entry* e = raw.find("run", "buffer_capacity")) {
    double v = scaled_value(e->value, e->line);
    if (v > 9.2e18) fail_at(e->line, "buffer_capacity out of range");
    buffer_capacity = static_cast<uint64_t>(std::llround(v));
  }

  std::vector<uint32_t> dps{1};
  if (const Entry* e = raw.find("run", "dp")) {
    dps.clear();
    for (const std::string& piece : split_list(e->value)) {
      Entry fake{piece, e->line};
      uint64_t v = to_count(fake, "dp");
      if (v == 0) fail_at(e->line, "dp must be at least 1");
      dps.push_back(static_cast<uint32_t>(v));
    }
    if (dps.empty()) fail_at(e->line, "'dp' lists no values");
  }

  const Entry* tp_entry = raw.find("run", "tp");
  const Entry* pp_entry = raw.find("run", "pp");
  const Entry* tf = raw.find("run", "t_forward");
  const Entry* tb = raw.find("run", "t_backward");
  const Entry* tu = raw.find("run", "t_update");

  for (const auto& [sec_name, section] : raw.sections) {
    for (const auto& [key, entry] : section) {
      if (!entry.used) {
        fail_at(entry.line, "unrecognized key '" + key + "' in [" + sec_name + "]");
      }
    }
  }

  Scenario scenario;
  for (const ModelChoice& choice : models) {
    uint32_t tp = tp_entry ? static_cast<uint32_t>(to_count(*tp_entry, "tp"))
                           : (choice.from_preset ? 4u : cluster.gpus_per_node);
    uint32_t pp = pp_entry ? static_cast<uint32_t>(to_count(*pp_entry, "pp")) : choice.default_pp;
    if (tp == 0 || pp == 0) {
      const Entry* e = (tp == 0) ? tp_entry : pp_entry;
      fail_at(e->line, "tp and pp must be at least 1");
    }

    sim::PhaseProfile phases = choice.from_preset ? sim::default_phase_profile(choice.model.name)
                                                  : sim::PhaseProfile{};
    if (tf) phases.t_forward = to_real(*tf, "t_forward");
    if (tb) phases.t_backward = to_real(*tb, "t_backward");
    if (tu) phases.t_update = to_real(*tu, "t_update");

    for (uint32_t dp : dps) {
      uint64_t ranks = uint64_t(dp) * pp * tp;
      if (ranks % cluster.gpus_per_node != 0) {
        throw ConfigError("model " + choice.model.name + ": dp=" + std::to_string(dp) +
                          " tp=" + std::to_string(tp) + " pp=" + std::to_string(pp) + " gives " +
                          std::to_string(ranks) + " ranks, not divisible by gpus_per_node=" +
                          std::to_string(cluster.gpus_per_node));
      }
      ParallelTopology topo;
      topo.dp = dp;
      topo.pp = pp;
      topo.tp = tp;
      topo.gpus_per_node = cluster.gpus_per_node;
      topo.node_count = static_cast<uint32_t>(ranks / cluster.gpus_per_node);
      topo.validate();

      sim::ClusterSpec run_cluster = cluster;
      run_cluster.node_count = topo.node_count;
      run_cluster.gpus_per_node = topo.gpus_per_node;
      run_cluster.validate();

      for (const sim::Strategy& strategy : strategies) {
        sim::RunConfig cfg;
        cfg.cluster = run_cluster;
        cfg.topology = topo;
        cfg.model = choice.model;
        cfg.phases = phases;
        cfg.strategy = strategy;
        cfg.iterations = iterations;
        cfg.checkpoint_every = every;
        cfg.buffer_capacity = buffer_capacity;
        scenario.runs.push_back(std::move(cfg));
      }
    }
  }
  return scenario;
}

Scenario load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open scenario file: " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

std::string default_scenario_text() {
  return
      "# Default scenario. Every key shows the value used when it is omitted.\n"
      "\n"
      "[model]\n"
      "preset = 13B              # built-ins: 3B 7B 13B 30B 70B; or presets = 3B,7B,...\n"
      "# An explicit model instead of a preset:\n"
      "# name = custom\n"
      "# params = 13e9\n"
      "# layers = 40\n"
      "# hidden = 5120\n"
      "# bytes_per_param_model = 2\n"
      "# bytes_per_param_optimizer = 12\n"
      "\n"
      "[cluster]\n"
      "gpus_per_node = 4\n"
      "d2h_pinned = 25GB         # device-to-host into pinned staging, bytes/s\n"
      "d2h_unpinned = 10GB       # device-to-host into pageable memory, bytes/s\n"
      "d2d = 85GB                # device-to-device, bytes/s (reported, not consumed)\n"
      "pfs_aggregate = 650GB     # parallel file system, all writers combined\n"
      "per_writer_cap = 5GB      # parallel file system, one stream\n"
      "alloc_bandwidth = 2GB     # cost of materializing a snapshot buffer\n"
      "\n"
      "[strategy]\n"
      "kind = lazy               # sync | async_snapshot | chunked | lazy | all\n"
      "chunked_threads = 4\n"
      "async_overlap_last_shard = false\n"
      "\n"
      "[run]\n"
      "iterations = 10\n"
      "checkpoint_every = 1      # 0 disables checkpointing\n"
      "buffer_capacity = 16GB    # pinned host pool per rank\n"
      "dp = 1                    # accepts a list: dp = 1,2,4\n"
      "# tp = 4                  # tensor-parallel width (preset default: 4)\n"
      "# pp = 4                  # pipeline stages (preset default: preset node count)\n"
      "# t_forward = 1.25        # phase overrides, seconds\n"
      "# t_backward = 1.40\n"
      "# t_update = 0.15\n";
}

std::string csv_header() {
  return "strategy,model,dp,checkpoint_every,blocked_s,throughput_Bps,iter_s,end_to_end_s";
}

std::string csv_row(const sim::RunConfig& cfg, const sim::Metrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%s,%u,%u,%.6f,%.6g,%.6f,%.6f",
                sim::to_string(cfg.strategy.kind), cfg.model.name.c_str(), cfg.topology.dp,
                cfg.checkpoint_every, m.blocked_per_checkpoint_s, m.throughput_Bps,
                m.iteration_s, m.end_to_end_s);
  return buf;
}

std::string run_scenario_csv(const Scenario& scenario, std::optional<sim::StrategyKind> only) {
  std::string out = csv_header();
  out += '\n';
  for (const sim::RunConfig& cfg : scenario.runs) {
    if (only && cfg.strategy.kind != *only) continue;
    sim::Metrics m = sim::simulate(cfg);
    out += csv_row(cfg, m);
    out += '\n';
  }
  return out;
}

}  // namespace lzckpt
