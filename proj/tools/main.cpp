#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cascadeflow/errors.hpp"
#include "cascadeflow/pipeline.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("cascadeflow");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("CASCADEFLOW_LOG"); env && *env) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only accept it when asked for.
    if (level == spdlog::level::off && std::string(env) != "off") {
      spdlog::warn("ignoring unknown CASCADEFLOW_LOG level '{}'", env);
    } else {
      spdlog::set_level(level);
    }
  }
}

struct Flags {
  std::string config;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> window;
  std::optional<std::uint64_t> min_reposts;
  std::optional<std::string> out;
  bool json = false;
  std::optional<std::string> posts, reposts, graph, users;
  std::optional<double> rate;
  std::optional<double> negative_multiplier;
  std::optional<int> utc_offset;
  bool strict = false;
  bool emit_edges = false;
  bool emit_exposures = false;
  bool dedup = false;
};

cascadeflow::RunConfig resolve(const Flags& f) {
  cascadeflow::RunConfig c;
  if (!f.config.empty()) c = cascadeflow::load_run_config(f.config);
  if (f.workers) c.workers = *f.workers;
  if (f.seed) {
    c.seed = *f.seed;
    c.synth.seed = *f.seed;
  }
  if (f.window) c.windows = {*f.window};
  if (f.min_reposts) c.min_reposts = *f.min_reposts;
  if (f.out) c.out_dir = *f.out;
  if (f.json) c.json = true;
  if (f.posts) c.inputs.posts = *f.posts;
  if (f.reposts) c.inputs.reposts = *f.reposts;
  if (f.graph) c.inputs.graph = *f.graph;
  if (f.users) c.inputs.users = *f.users;
  if (f.rate) c.positive_rate = *f.rate;
  if (f.negative_multiplier) c.negative_multiplier = *f.negative_multiplier;
  if (f.utc_offset) c.hour_bins.utc_offset_hours = *f.utc_offset;
  if (f.strict) c.strict = true;
  if (f.emit_edges) c.emit_edges = true;
  if (f.emit_exposures) c.emit_exposures = true;
  if (f.dedup) c.dedup_same_sender = true;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"cascadeflow: repost cascades, virtual timelines and influence metrics"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", CASCADEFLOW_CLI_VERSION);

  Flags f;
  app.add_option("--config", f.config, "JSON run configuration");
  app.add_option("--workers", f.workers, "Worker threads (0 = all cores)");
  app.add_option("--seed", f.seed, "Seed for sampling and synthetic data");
  app.add_option("--window", f.window, "Window: 30m, 1h, 3h, 6h, 24h, a length in ms, or start_ms:end_ms");
  app.add_option("--min-reposts", f.min_reposts, "Minimum cascade size for shares and timeseries");
  app.add_option("--out", f.out, "Output directory");
  app.add_flag("--json", f.json, "Machine-readable JSON alongside each table and on stdout");
  app.add_option("--posts", f.posts, "Posts NDJSON (gzip ok)");
  app.add_option("--reposts", f.reposts, "Reposts NDJSON (gzip ok)");
  app.add_option("--graph", f.graph, "Follower graph CSV (gzip ok)");
  app.add_option("--users", f.users, "Optional users NDJSON");
  app.add_option("--rate", f.rate, "Positive sampling rate for the regression export");
  app.add_option("--negative-multiplier", f.negative_multiplier, "Negatives per positive (default 2)");
  app.add_option("--utc-offset", f.utc_offset, "UTC offset in hours for repost_hour bins (default 9)");
  app.add_flag("--strict", f.strict, "Fail on the first malformed line or event-stream issue");
  app.add_flag("--emit-edges", f.emit_edges, "Also write edges.csv");
  app.add_flag("--emit-exposures", f.emit_exposures, "Also write exposures.csv (large)");
  app.add_flag("--dedup-same-sender", f.dedup, "Count repeated reposts by one sender as one view");

  const std::pair<const char*, const char*> commands[] = {
      {"ingest-check", "Load and validate the inputs"},
      {"influence", "h, g, hg and influence category per user"},
      {"cascades", "Reconstruct cascades and their tree metrics"},
      {"timeline", "Per-viewer exposure counts"},
      {"crp", "Cascading repost probability tables"},
      {"shares", "View and repost shares per influence category"},
      {"behavior", "Repost-count skew and CCDF"},
      {"virality", "First-reposter structural virality and depth"},
      {"sample-regression", "Case-control dataset for the regression"},
      {"synth", "Generate synthetic input files"},
      {"run", "Whole pipeline"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  const auto* sub = app.get_subcommands().front();
  const auto stage = cascadeflow::parse_stage(sub->get_name());
  try {
    const auto config = resolve(f);
    const auto result = cascadeflow::run_stage(*stage, config);
    std::cout << result.summary;
    return 0;
  } catch (const std::exception& e) {
    const int code = cascadeflow::exit_code_for(std::current_exception());
    spdlog::error("{}", e.what());
    return code;
  }
}
