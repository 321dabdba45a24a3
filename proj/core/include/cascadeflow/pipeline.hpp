#pragma once

// End-to-end orchestration: ingest, influence, cascades, timelines,
// metrics and the regression export, driven by one RunConfig.

#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cascadeflow/model.hpp"
#include "cascadeflow/regress_export.hpp"
#include "cascadeflow/synth.hpp"

namespace cascadeflow {

struct InputPaths {
  std::filesystem::path posts;
  std::filesystem::path reposts;
  std::filesystem::path graph;
  std::filesystem::path users;  // optional
};

struct RunConfig {
  InputPaths inputs;
  std::vector<std::string> official_keywords = {"official", "公式"};
  bool strict = false;  // fail on the first malformed line and on any validation issue
  /// CRP windows; the first one also scopes shares, timelines, exposures
  /// and the regression export.
  std::vector<std::string> windows = {"6h"};
  std::vector<std::uint64_t> popularity_thresholds = {1000, 5000, 10000};
  std::uint64_t min_reposts = 0;  // shares and timeseries only count cascades this large
  Millis timeseries_bucket_ms = kHour;
  Millis timeseries_horizon_ms = 24 * kHour;
  std::size_t virality_min_size = 2;
  bool dedup_same_sender = false;
  bool emit_edges = false;
  bool emit_exposures = false;
  std::vector<double> top_fractions = {0.01, 0.05, 0.1, 0.2, 0.5};
  HourBins hour_bins;
  std::optional<double> positive_rate;  // no default: regression export needs it set
  double negative_multiplier = 2.0;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  std::size_t workers = 1;  // 0 means all hardware threads
  bool json = false;
  SynthConfig synth;

  /// Throws ValidationError for inconsistent settings.
  void validate() const;
  TimeWindow primary_window() const;
};

/// Reads a JSON config; unknown keys are rejected. Throws InputError when
/// the file is missing and ValidationError when it does not parse.
RunConfig load_run_config(const std::filesystem::path& path);
/// Overlays the keys present in `json_text` onto `config`.
void merge_run_config(RunConfig& config, const std::string& json_text);
/// Canonical JSON rendering, as stored in the manifest.
std::string run_config_json(const RunConfig& config);

enum class Stage {
  ingest_check,
  influence,
  cascades,
  timeline,
  crp,
  shares,
  behavior,
  virality,
  sample_regression,
  synth,
  run,
};

std::string_view stage_name(Stage s);
std::optional<Stage> parse_stage(std::string_view name);

struct StageResult {
  std::vector<std::filesystem::path> outputs;
  std::string summary;  // human or JSON summary for stdout
};

/// Runs one stage and writes its outputs plus manifest.json into
/// config.out_dir. Throws the library's error types on failure.
StageResult run_stage(Stage stage, const RunConfig& config);

/// Exit status for a failure: 2 missing input, 3 validation, 4 invariant
/// breach, 1 anything else.
int exit_code_for(const std::exception_ptr& error);

}  // namespace cascadeflow
