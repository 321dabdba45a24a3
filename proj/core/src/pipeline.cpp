#include "cascadeflow/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <fstream>
#include <sstream>
#include <variant>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cascadeflow/cascade.hpp"
#include "cascadeflow/errors.hpp"
#include "cascadeflow/influence.hpp"
#include "cascadeflow/ingest.hpp"
#include "cascadeflow/io.hpp"
#include "cascadeflow/metrics.hpp"
#include "cascadeflow/parallel.hpp"
#include "cascadeflow/timeline.hpp"

#ifndef CASCADEFLOW_VERSION
#define CASCADEFLOW_VERSION "0.0.0"
#endif

namespace cascadeflow {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  if (windows.empty()) throw ValidationError("at least one window is required");
  for (const auto& w : windows) (void)TimeWindow::parse(w);
  (void)PopularityBuckets(popularity_thresholds);
  (void)CrpTimeseries(min_reposts, timeseries_bucket_ms, timeseries_horizon_ms);
  for (double f : top_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ValidationError("top_fractions must lie in (0, 1]");
  }
  hour_bins.validate();
  if (positive_rate) SamplingParams{*positive_rate, negative_multiplier, seed}.validate();
  if (!(negative_multiplier > 0.0)) throw ValidationError("negative_multiplier must be > 0");
  if (virality_min_size < 2) throw ValidationError("virality_min_size must be >= 2");
}

TimeWindow RunConfig::primary_window() const { return TimeWindow::parse(windows.front()); }

namespace {

template <typename T>
T get_as(const json& j, std::string_view key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: '" + std::string(key) + "' has the wrong type");
  }
}

void reject_unknown(const json& obj, std::initializer_list<std::string_view> known, std::string_view where) {
  if (!obj.is_object()) throw ValidationError("config: '" + std::string(where) + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ValidationError("config: unknown key '" + key + "' in " + std::string(where));
    }
  }
}

void apply_synth(SynthConfig& s, const json& j) {
  reject_unknown(j,
                 {"n_users", "follower_degree_exponent", "mean_out_degree", "max_out_degree",
                  "attractiveness_exponent", "n_roots", "horizon_ms", "root_spread_ms", "base_repost_prob",
                  "prestige_beta", "content_appeal_sd", "mean_reaction_ms", "seed"},
                 "synth");
  auto set = [&](const char* key, auto& field) {
    if (j.contains(key)) field = get_as<std::decay_t<decltype(field)>>(j[key], key);
  };
  set("n_users", s.n_users);
  set("follower_degree_exponent", s.follower_degree_exponent);
  set("mean_out_degree", s.mean_out_degree);
  set("max_out_degree", s.max_out_degree);
  set("attractiveness_exponent", s.attractiveness_exponent);
  set("n_roots", s.n_roots);
  set("horizon_ms", s.horizon_ms);
  set("root_spread_ms", s.root_spread_ms);
  set("base_repost_prob", s.base_repost_prob);
  set("prestige_beta", s.prestige_beta);
  set("content_appeal_sd", s.content_appeal_sd);
  set("mean_reaction_ms", s.mean_reaction_ms);
  set("seed", s.seed);
}

void apply(RunConfig& c, const json& j, const std::filesystem::path& base) {
  reject_unknown(j,
                 {"inputs", "official_keywords", "strict", "window", "windows", "popularity_thresholds",
                  "min_reposts", "timeseries", "virality_min_size", "dedup_same_sender", "emit_edges",
                  "emit_exposures", "top_fractions", "hour_bins", "sampling", "seed", "out", "workers", "json",
                  "synth"},
                 "config");
  auto path_of = [&](const json& v, std::string_view key) {
    std::filesystem::path p = get_as<std::string>(v, key);
    if (p.is_relative() && !base.empty()) p = base / p;
    return p.lexically_normal();
  };
  if (j.contains("inputs")) {
    const auto& in = j["inputs"];
    reject_unknown(in, {"posts", "reposts", "graph", "users"}, "inputs");
    if (in.contains("posts")) c.inputs.posts = path_of(in["posts"], "posts");
    if (in.contains("reposts")) c.inputs.reposts = path_of(in["reposts"], "reposts");
    if (in.contains("graph")) c.inputs.graph = path_of(in["graph"], "graph");
    if (in.contains("users")) c.inputs.users = path_of(in["users"], "users");
  }
  if (j.contains("official_keywords")) {
    c.official_keywords = get_as<std::vector<std::string>>(j["official_keywords"], "official_keywords");
  }
  if (j.contains("strict")) c.strict = get_as<bool>(j["strict"], "strict");
  if (j.contains("window")) c.windows = {get_as<std::string>(j["window"], "window")};
  if (j.contains("windows")) c.windows = get_as<std::vector<std::string>>(j["windows"], "windows");
  if (j.contains("popularity_thresholds")) {
    c.popularity_thresholds = get_as<std::vector<std::uint64_t>>(j["popularity_thresholds"], "popularity_thresholds");
  }
  if (j.contains("min_reposts")) c.min_reposts = get_as<std::uint64_t>(j["min_reposts"], "min_reposts");
  if (j.contains("timeseries")) {
    const auto& ts = j["timeseries"];
    reject_unknown(ts, {"bucket_ms", "horizon_ms"}, "timeseries");
    if (ts.contains("bucket_ms")) c.timeseries_bucket_ms = get_as<Millis>(ts["bucket_ms"], "bucket_ms");
    if (ts.contains("horizon_ms")) c.timeseries_horizon_ms = get_as<Millis>(ts["horizon_ms"], "horizon_ms");
  }
  if (j.contains("virality_min_size")) {
    c.virality_min_size = get_as<std::size_t>(j["virality_min_size"], "virality_min_size");
  }
  if (j.contains("dedup_same_sender")) c.dedup_same_sender = get_as<bool>(j["dedup_same_sender"], "dedup_same_sender");
  if (j.contains("emit_edges")) c.emit_edges = get_as<bool>(j["emit_edges"], "emit_edges");
  if (j.contains("emit_exposures")) c.emit_exposures = get_as<bool>(j["emit_exposures"], "emit_exposures");
  if (j.contains("top_fractions")) c.top_fractions = get_as<std::vector<double>>(j["top_fractions"], "top_fractions");
  if (j.contains("hour_bins")) {
    const auto& hb = j["hour_bins"];
    reject_unknown(hb, {"utc_offset_hours", "bins"}, "hour_bins");
    if (hb.contains("utc_offset_hours")) {
      c.hour_bins.utc_offset_hours = get_as<int>(hb["utc_offset_hours"], "utc_offset_hours");
    }
    if (hb.contains("bins")) {
      c.hour_bins.bins.clear();
      for (const auto& b : hb["bins"]) {
        reject_unknown(b, {"label", "start_hour", "end_hour"}, "hour_bins.bins");
        if (!b.contains("label") || !b.contains("start_hour") || !b.contains("end_hour")) {
          throw ValidationError("config: each hour bin needs label, start_hour and end_hour");
        }
        c.hour_bins.bins.push_back(HourBin{get_as<std::string>(b["label"], "label"),
                                           get_as<int>(b["start_hour"], "start_hour"),
                                           get_as<int>(b["end_hour"], "end_hour")});
      }
    }
  }
  if (j.contains("sampling")) {
    const auto& s = j["sampling"];
    reject_unknown(s, {"positive_rate", "negative_multiplier"}, "sampling");
    if (s.contains("positive_rate")) {
      if (s["positive_rate"].is_null()) {
        c.positive_rate.reset();
      } else {
        c.positive_rate = get_as<double>(s["positive_rate"], "positive_rate");
      }
    }
    if (s.contains("negative_multiplier")) {
      c.negative_multiplier = get_as<double>(s["negative_multiplier"], "negative_multiplier");
    }
  }
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j["seed"], "seed");
  if (j.contains("out")) c.out_dir = path_of(j["out"], "out");
  if (j.contains("workers")) c.workers = get_as<std::size_t>(j["workers"], "workers");
  if (j.contains("json")) c.json = get_as<bool>(j["json"], "json");
  if (j.contains("synth")) apply_synth(c.synth, j["synth"]);
}

json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(origin + ": " + e.what());
  }
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig c;
  apply(c, parse_json_text(buf.str(), path.string()), path.parent_path());
  return c;
}

void merge_run_config(RunConfig& config, const std::string& json_text) {
  apply(config, parse_json_text(json_text, "config"), {});
}

namespace {

ojson config_to_json(const RunConfig& c) {
  ojson j;
  j["inputs"] = {{"posts", c.inputs.posts.string()},
                 {"reposts", c.inputs.reposts.string()},
                 {"graph", c.inputs.graph.string()},
                 {"users", c.inputs.users.string()}};
  j["official_keywords"] = c.official_keywords;
  j["strict"] = c.strict;
  j["windows"] = c.windows;
  j["popularity_thresholds"] = c.popularity_thresholds;
  j["min_reposts"] = c.min_reposts;
  j["timeseries"] = {{"bucket_ms", c.timeseries_bucket_ms}, {"horizon_ms", c.timeseries_horizon_ms}};
  j["virality_min_size"] = c.virality_min_size;
  j["dedup_same_sender"] = c.dedup_same_sender;
  j["emit_edges"] = c.emit_edges;
  j["emit_exposures"] = c.emit_exposures;
  j["top_fractions"] = c.top_fractions;
  j["hour_bins"]["utc_offset_hours"] = c.hour_bins.utc_offset_hours;
  j["hour_bins"]["bins"] = ojson::array();
  for (const auto& b : c.hour_bins.bins) {
    j["hour_bins"]["bins"].push_back({{"label", b.label}, {"start_hour", b.start_hour}, {"end_hour", b.end_hour}});
  }
  j["sampling"]["positive_rate"] = c.positive_rate ? ojson(*c.positive_rate) : ojson(nullptr);
  j["sampling"]["negative_multiplier"] = c.negative_multiplier;
  j["seed"] = c.seed;
  j["out"] = c.out_dir.string();
  j["workers"] = c.workers;
  j["json"] = c.json;
  const auto& s = c.synth;
  j["synth"] = {{"n_users", s.n_users},
                {"follower_degree_exponent", s.follower_degree_exponent},
                {"mean_out_degree", s.mean_out_degree},
                {"max_out_degree", s.max_out_degree},
                {"attractiveness_exponent", s.attractiveness_exponent},
                {"n_roots", s.n_roots},
                {"horizon_ms", s.horizon_ms},
                {"root_spread_ms", s.root_spread_ms},
                {"base_repost_prob", s.base_repost_prob},
                {"prestige_beta", s.prestige_beta},
                {"content_appeal_sd", s.content_appeal_sd},
                {"mean_reaction_ms", s.mean_reaction_ms},
                {"seed", s.seed}};
  return j;
}

}  // namespace

std::string run_config_json(const RunConfig& config) { return config_to_json(config).dump(2) + "\n"; }

// ---------------------------------------------------------------- stages

namespace {

constexpr std::array<std::pair<Stage, std::string_view>, 11> kStageNames = {{
    {Stage::ingest_check, "ingest-check"},
    {Stage::influence, "influence"},
    {Stage::cascades, "cascades"},
    {Stage::timeline, "timeline"},
    {Stage::crp, "crp"},
    {Stage::shares, "shares"},
    {Stage::behavior, "behavior"},
    {Stage::virality, "virality"},
    {Stage::sample_regression, "sample-regression"},
    {Stage::synth, "synth"},
    {Stage::run, "run"},
}};

}  // namespace

std::string_view stage_name(Stage s) {
  for (const auto& [stage, name] : kStageNames) {
    if (stage == s) return name;
  }
  return "unknown";
}

std::optional<Stage> parse_stage(std::string_view name) {
  for (const auto& [stage, n] : kStageNames) {
    if (n == name) return stage;
  }
  return std::nullopt;
}

int exit_code_for(const std::exception_ptr& error) {
  try {
    std::rethrow_exception(error);
  } catch (const InputError&) {
    return 2;
  } catch (const ValidationError&) {
    return 3;
  } catch (const InvariantError&) {
    return 4;
  } catch (const ContractViolation&) {
    return 4;
  } catch (...) {
    return 1;
  }
}

namespace {

// One output table, written as CSV and optionally mirrored as a JSON array.
using Cell = std::variant<std::monostate, std::uint64_t, std::int64_t, double, std::string>;

Cell opt(const std::optional<double>& v) {
  if (v) return *v;
  return std::monostate{};
}

struct OutputLog {
  std::vector<std::pair<std::string, std::size_t>> files;  // name, data rows
  std::vector<std::filesystem::path> paths;
};

class TableWriter {
 public:
  TableWriter(const std::filesystem::path& dir, std::string name, std::vector<std::string> columns, bool json)
      : dir_(dir), name_(std::move(name)), columns_(std::move(columns)), csv_(dir / name_), json_(json) {
    auto& out = csv_.stream();
    for (std::size_t i = 0; i < columns_.size(); ++i) out << (i ? "," : "") << columns_[i];
    out << '\n';
    if (json_) rows_json_ = ojson::array();
  }

  void row(const std::vector<Cell>& cells) {
    if (cells.size() != columns_.size()) throw InvariantError("table " + name_ + ": row width mismatch");
    auto& out = csv_.stream();
    ojson obj;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::monostate>) {
              if (json_) obj[columns_[i]] = nullptr;
            } else if constexpr (std::is_same_v<T, double>) {
              out << io::format_double(v);
              if (json_) obj[columns_[i]] = v;
            } else if constexpr (std::is_same_v<T, std::string>) {
              out << io::csv_escape(v);
              if (json_) obj[columns_[i]] = v;
            } else {
              out << v;
              if (json_) obj[columns_[i]] = v;
            }
          },
          cells[i]);
    }
    out << '\n';
    if (json_) rows_json_.push_back(std::move(obj));
    ++rows_;
  }

  void commit(OutputLog& log) {
    csv_.commit();
    log.files.emplace_back(name_, rows_);
    log.paths.push_back(dir_ / name_);
    if (json_) {
      const auto stem = std::filesystem::path(name_).stem().string() + ".json";
      io::AtomicFile f(dir_ / stem);
      f.stream() << rows_json_.dump(2) << '\n';
      f.commit();
      log.paths.push_back(dir_ / stem);
    }
  }

 private:
  std::filesystem::path dir_;
  std::string name_;
  std::vector<std::string> columns_;
  io::AtomicFile csv_;
  bool json_;
  ojson rows_json_;
  std::size_t rows_ = 0;
};

struct Dataset {
  UserDirectory directory;
  std::vector<PostEvent> posts;
  std::vector<RepostEvent> reposts;
  FollowerGraph graph;
  UserSet official;
  ValidationReport report;
  std::vector<std::pair<std::string, std::vector<LineError>>> line_errors;  // per input file
  std::size_t self_edges_dropped = 0;
};

void require_input(const std::filesystem::path& p, std::string_view what) {
  if (p.empty()) throw InputError("no " + std::string(what) + " input configured");
  if (!std::filesystem::exists(p)) throw InputError("missing " + std::string(what) + " input: " + p.string());
}

std::string describe(const ValidationReport& r) {
  std::ostringstream s;
  s << r.duplicate_post_ids.size() << " duplicate post id(s), " << r.duplicate_repost_ids.size()
    << " duplicate repost id(s), " << r.dangling_sources.size() << " dangling source(s), "
    << r.time_inversions.size() << " repost(s) before their root, " << r.negative_timestamps.size()
    << " negative timestamp(s)";
  return s.str();
}

Dataset load_dataset(const RunConfig& c, bool tolerate_issues) {
  require_input(c.inputs.posts, "posts");
  require_input(c.inputs.reposts, "reposts");
  require_input(c.inputs.graph, "follower graph");
  if (!c.inputs.users.empty()) require_input(c.inputs.users, "users");

  const auto policy = c.strict ? MalformedPolicy::fail_fast : MalformedPolicy::skip_and_log;
  const OfficialAccountFilter filter(c.official_keywords);
  Dataset d;
  if (!c.inputs.users.empty()) {
    d.line_errors.emplace_back("users", load_users(c.inputs.users, d.directory, policy));
  }
  auto posts = load_posts(c.inputs.posts, d.directory, filter, policy);
  d.posts = std::move(posts.events);
  d.line_errors.emplace_back("posts", std::move(posts.errors));
  auto reposts = load_reposts(c.inputs.reposts, d.directory, policy);
  d.reposts = std::move(reposts.events);
  d.line_errors.emplace_back("reposts", std::move(reposts.errors));
  auto graph = load_follower_graph(c.inputs.graph, d.directory, policy);
  d.graph = std::move(graph.graph);
  d.self_edges_dropped = graph.self_edges_dropped;
  d.line_errors.emplace_back("graph", std::move(graph.errors));

  d.directory.fill_follower_counts(d.graph);
  d.official = d.directory.official_users(filter);
  d.report = validate_event_stream(d.posts, d.reposts);
  if (!d.report.accepted()) {
    if (c.strict && !tolerate_issues) throw ValidationError("event stream rejected: " + describe(d.report));
    spdlog::warn("event stream issues: {}", describe(d.report));
  }
  spdlog::info("loaded {} posts, {} reposts, {} follow edges, {} users ({} official)", d.posts.size(),
               d.reposts.size(), d.graph.edge_count(), d.directory.size(), d.official.count());
  return d;
}

InfluenceTable compute_influence(const Dataset& d, std::size_t workers) {
  const auto counts = repost_counts(d.posts, d.reposts);
  const auto scores = compute_scores(d.posts, counts, d.directory.size(), workers);
  return assign_categories(scores);
}

CascadeBuild compute_cascades(const Dataset& d, std::size_t workers) {
  auto build = build_cascades(d.posts, d.reposts, d.graph, d.official, workers);
  parallel_for(build.cascades.size(), workers, [&](std::size_t, std::size_t i) { check_tree(build.cascades[i]); });
  if (build.fallback_attachments > 0) {
    spdlog::info("{} repost(s) attached to the root without a follow edge", build.fallback_attachments);
  }
  return build;
}

// What one sweep over the cascades' exposures should accumulate.
struct SweepPlan {
  bool crp = false;
  bool timeseries = false;
  bool shares = false;
  bool timeline = false;
  bool collect = false;    // keep the primary-window outcomes for an exposure dump
  bool positives = false;  // regression pass 1
};

struct SweepResult {
  std::vector<CrpAccumulator> crp;  // one per configured window
  std::optional<CrpTimeseries> timeseries;
  ShareAccumulator shares = ShareAccumulator(0);
  std::vector<std::uint64_t> viewer_exposures;
  std::vector<std::uint64_t> viewer_posts;
  std::vector<Outcome> collected;  // canonical order
  std::optional<CaseSampler> sampler;
};

struct Context {
  const RunConfig& config;
  const Dataset& data;
  const InfluenceTable& influence;
  const std::vector<Cascade>& cascades;
  TimeWindow primary;
  ExposureOptions options;
  UserSet active;
  CascadeSizes sizes;
  std::vector<TimeWindow> windows;
  std::size_t workers;

  Context(const RunConfig& c, const Dataset& d, const InfluenceTable& inf, const std::vector<Cascade>& cs)
      : config(c), data(d), influence(inf), cascades(cs), primary(c.primary_window()) {
    Millis end = c.timeseries_horizon_ms;
    for (const auto& w : c.windows) {
      windows.push_back(TimeWindow::parse(w));
      end = std::max(end, windows.back().end_offset());
    }
    options.window = TimeWindow::first(end);
    options.dedup_same_sender = c.dedup_same_sender;
    active = active_reposters(cs, d.directory.size());
    sizes = cascade_sizes(cs);
    workers = std::min(effective_workers(c.workers), std::max<std::size_t>(1, cs.size()));
  }

  std::optional<SamplingParams> sampling() const {
    if (!config.positive_rate) return std::nullopt;
    return SamplingParams{*config.positive_rate, config.negative_multiplier, config.seed};
  }
};

SweepResult sweep(const Context& ctx, const SweepPlan& plan) {
  const auto& c = ctx.config;
  const std::size_t n_users = ctx.data.directory.size();
  const std::size_t n = ctx.cascades.size();

  struct Worker {
    ExposureBuilder builder;
    SweepResult acc;
    std::vector<std::uint64_t> viewer_stamp;
    std::vector<Outcome> scratch;
  };
  std::vector<std::unique_ptr<Worker>> workers;
  for (std::size_t w = 0; w < ctx.workers; ++w) {
    auto worker = std::make_unique<Worker>(Worker{
        ExposureBuilder(ctx.data.graph, ctx.data.official, ctx.active, ctx.options), SweepResult{}, {}, {}});
    auto& acc = worker->acc;
    for (const auto& win : ctx.windows) acc.crp.emplace_back(PopularityBuckets(c.popularity_thresholds), win);
    acc.timeseries.emplace(c.min_reposts, c.timeseries_bucket_ms, c.timeseries_horizon_ms);
    acc.shares = ShareAccumulator(c.min_reposts);
    if (plan.timeline) {
      acc.viewer_exposures.assign(n_users, 0);
      acc.viewer_posts.assign(n_users, 0);
      worker->viewer_stamp.assign(n_users, 0);
    }
    if (plan.positives) acc.sampler.emplace(*ctx.sampling());
    workers.push_back(std::move(worker));
  }
  std::vector<std::vector<Outcome>> collected(plan.collect ? n : 0);

  parallel_for(n, ctx.workers, [&](std::size_t w, std::size_t i) {
    auto& worker = *workers[w];
    auto& acc = worker.acc;
    const auto& cascade = ctx.cascades[i];
    worker.scratch.clear();
    worker.builder.build(cascade, worker.scratch);
    const auto reposts = cascade.repost_count();
    for (const auto& o : worker.scratch) {
      const auto slot = category_slot(ctx.influence, o.exposure.sender);
      if (plan.crp) {
        for (auto& a : acc.crp) a.add(o, slot, reposts);
      }
      if (plan.timeseries) acc.timeseries->add(o, slot, reposts);
      if (!ctx.primary.contains(o.exposure.elapsed_since_root)) continue;
      if (plan.shares) acc.shares.add(o, slot, reposts);
      if (plan.timeline) {
        const auto v = o.exposure.viewer.value;
        ++acc.viewer_exposures[v];
        if (worker.viewer_stamp[v] != i + 1) {
          worker.viewer_stamp[v] = i + 1;
          ++acc.viewer_posts[v];
        }
      }
      if (plan.positives) acc.sampler->offer_positive(o);
      if (plan.collect) collected[i].push_back(o);
    }
  });

  SweepResult out = std::move(workers.front()->acc);
  for (std::size_t w = 1; w < workers.size(); ++w) {
    auto& other = workers[w]->acc;
    for (std::size_t k = 0; k < out.crp.size(); ++k) out.crp[k].merge(other.crp[k]);
    out.timeseries->merge(*other.timeseries);
    out.shares.merge(other.shares);
    for (std::size_t u = 0; u < out.viewer_exposures.size(); ++u) {
      out.viewer_exposures[u] += other.viewer_exposures[u];
      out.viewer_posts[u] += other.viewer_posts[u];
    }
    if (out.sampler) out.sampler->merge_positives(*other.sampler);
  }
  if (plan.collect) {
    std::size_t total = 0;
    for (const auto& v : collected) total += v.size();
    out.collected.reserve(total);
    for (auto& v : collected) {
      out.collected.insert(out.collected.end(), v.begin(), v.end());
      std::vector<Outcome>().swap(v);
    }
    std::sort(out.collected.begin(), out.collected.end(),
              [](const Outcome& a, const Outcome& b) { return exposure_before(a.exposure, b.exposure); });
  }
  return out;
}

void check_crp_conservation(const CrpAccumulator& acc) {
  // Bucket 0 (< first threshold) and bucket 1 (>= first threshold) partition
  // the cascades, so together they must reproduce the total exactly.
  ViewCount sum;
  for (const auto& cell : acc.cells()) {
    if (cell.counts.reposted > cell.counts.viewed) throw InvariantError("crp cell with reposted > viewed");
    if (cell.popularity_bucket <= 1) sum += cell.counts;
  }
  if (sum != acc.total()) throw InvariantError("crp cells do not sum to the window total");
}

SampleResult sample_regression(const Context& ctx, CaseSampler positives) {
  positives.freeze();
  std::vector<CaseSampler> forks;
  std::vector<ExposureBuilder> builders;
  for (std::size_t w = 0; w < ctx.workers; ++w) {
    forks.push_back(positives.fork_for_negatives());
    builders.emplace_back(ctx.data.graph, ctx.data.official, ctx.active, ctx.options);
  }
  std::vector<std::vector<Outcome>> scratch(ctx.workers);
  parallel_for(ctx.cascades.size(), ctx.workers, [&](std::size_t w, std::size_t i) {
    scratch[w].clear();
    builders[w].build(ctx.cascades[i], scratch[w]);
    for (const auto& o : scratch[w]) {
      if (ctx.primary.contains(o.exposure.elapsed_since_root)) forks[w].offer_negative(o);
    }
  });
  for (const auto& f : forks) positives.merge_negatives(f);
  return positives.finish();
}

std::string external(const UserDirectory& dir, UserId u) { return dir.external_id(u); }

// ---------------------------------------------------------------- writers

void write_influence(const RunConfig& c, const Dataset& d, const InfluenceTable& t, OutputLog& log) {
  TableWriter w(c.out_dir, "influence.csv", {"user_id", "h", "g", "hg", "category"}, c.json);
  for (const auto& r : t.rows()) {
    w.row({external(d.directory, r.user), r.h, r.g, r.hg, std::string(to_string(r.category))});
  }
  w.commit(log);
}

void write_cascades(const RunConfig& c, const Dataset& d, const InfluenceTable& t,
                    const std::vector<Cascade>& cascades, OutputLog& log) {
  std::vector<CascadeMetrics> metrics(cascades.size());
  parallel_for(cascades.size(), c.workers, [&](std::size_t, std::size_t i) { metrics[i] = measure(cascades[i]); });
  TableWriter w(c.out_dir, "cascades.csv",
                {"root_post_id", "size", "max_depth", "structural_virality", "first_reposter",
                 "first_reposter_category"},
                c.json);
  for (std::size_t i = 0; i < cascades.size(); ++i) {
    const auto& cs = cascades[i];
    Cell first = std::monostate{};
    Cell category = std::monostate{};
    if (auto u = cs.first_reposter()) {
      first = external(d.directory, *u);
      if (auto cat = t.category_of(*u)) category = std::string(to_string(*cat));
    }
    w.row({cs.root_post.value, static_cast<std::uint64_t>(metrics[i].size),
           static_cast<std::uint64_t>(metrics[i].max_depth), opt(metrics[i].structural_virality), first, category});
  }
  w.commit(log);
  if (!c.emit_edges) return;
  TableWriter e(c.out_dir, "edges.csv", {"root_post_id", "child_repost_id", "parent_repost_id_or_ROOT"}, c.json);
  for (const auto& cs : cascades) {
    for (const auto& node : cs.nodes) {
      Cell parent = std::string("ROOT");
      if (node.parent >= 0) parent = cs.nodes[static_cast<std::size_t>(node.parent)].repost_id.value;
      e.row({cs.root_post.value, node.repost_id.value, parent});
    }
  }
  e.commit(log);
}

Cell slot_cell(std::size_t slot) { return slot_name(slot); }


void write_crp(const RunConfig& c, const SweepResult& s, OutputLog& log) {
  TableWriter w(c.out_dir, "crp.csv",
                {"window", "window_start_ms", "window_end_ms", "popularity", "category", "viewed", "reposted", "crp"},
                c.json);
  for (std::size_t k = 0; k < s.crp.size(); ++k) {
    check_crp_conservation(s.crp[k]);
    for (const auto& cell : s.crp[k].cells()) {
      w.row({c.windows[k], cell.window.start_offset(), cell.window.end_offset(), cell.popularity_label,
             slot_cell(cell.slot), cell.counts.viewed, cell.counts.reposted, opt(cell.crp())});
    }
  }
  w.commit(log);

  const auto& ts = *s.timeseries;
  TableWriter t(c.out_dir, "crp_timeseries.csv",
                {"bucket", "elapsed_start_ms", "elapsed_end_ms", "category", "viewed", "reposted", "crp"}, c.json);
  bool any_unclassified = false;
  for (std::size_t b = 0; b < ts.bucket_count(); ++b) any_unclassified |= ts.at(kUnclassifiedSlot, b).viewed > 0;
  for (std::size_t b = 0; b < ts.bucket_count(); ++b) {
    const auto start = static_cast<Millis>(b) * ts.bucket_ms();
    for (std::size_t slot = 0; slot < kCategorySlots; ++slot) {
      if (slot == kUnclassifiedSlot && !any_unclassified) continue;
      const auto& v = ts.at(slot, b);
      if (v.reposted > v.viewed) throw InvariantError("timeseries cell with reposted > viewed");
      t.row({static_cast<std::uint64_t>(b), start, start + ts.bucket_ms(), slot_cell(slot), v.viewed, v.reposted,
             opt(v.crp())});
    }
  }
  t.commit(log);
}

void write_shares(const RunConfig& c, const InfluenceTable& influence, const SweepResult& s, OutputLog& log) {
  const auto table = s.shares.table(influence);
  TableWriter w(c.out_dir, "shares.csv",
                {"category", "users", "user_share", "viewed", "view_share", "reposted", "repost_share"}, c.json);
  double user_sum = 0, view_sum = 0, repost_sum = 0;
  for (const auto& r : table.rows) {
    if (r.counts.reposted > r.counts.viewed) throw InvariantError("share row with reposted > viewed");
    user_sum += r.user_share.value_or(0.0);
    view_sum += r.view_share.value_or(0.0);
    repost_sum += r.repost_share.value_or(0.0);
    w.row({std::string(to_string(r.category)), r.users, opt(r.user_share), r.counts.viewed, opt(r.view_share),
           r.counts.reposted, opt(r.repost_share)});
  }
  auto near_one_or_absent = [](double sum, bool present) { return !present || std::abs(sum - 1.0) <= 1e-9; };
  if (!near_one_or_absent(user_sum, table.rows[0].user_share.has_value()) ||
      !near_one_or_absent(view_sum, table.rows[0].view_share.has_value()) ||
      !near_one_or_absent(repost_sum, table.rows[0].repost_share.has_value())) {
    throw InvariantError("share columns do not sum to 1");
  }
  if (table.unclassified.viewed > 0) {
    w.row({std::string("unclassified"), std::uint64_t{0}, std::monostate{}, table.unclassified.viewed,
           std::monostate{}, table.unclassified.reposted, std::monostate{}});
  }
  w.commit(log);
}

void write_behavior(const RunConfig& c, const Dataset& d, OutputLog& log) {
  const auto b = repost_behavior(d.reposts, c.top_fractions);
  TableWriter w(c.out_dir, "behavior.csv", {"top_fraction", "repost_share"}, c.json);
  for (const auto& [f, share] : b.cumulative_share) w.row({f, share});
  w.commit(log);
  TableWriter ccdf(c.out_dir, "behavior_ccdf.csv", {"reposts_at_least", "fraction_of_users"}, c.json);
  double prev = 1.0;
  for (const auto& [k, frac] : b.ccdf) {
    if (frac > prev) throw InvariantError("repost CCDF increases");
    prev = frac;
    ccdf.row({k, frac});
  }
  ccdf.commit(log);
}

void write_virality(const RunConfig& c, const InfluenceTable& influence, const std::vector<Cascade>& cascades,
                    OutputLog& log) {
  const auto t = metrics_by_first_reposter_influence(cascades, influence, c.virality_min_size);
  TableWriter w(c.out_dir, "virality.csv",
                {"category", "cascades", "sv_cascades", "mean_structural_virality", "structural_virality_ci95",
                 "mean_max_depth", "max_depth_ci95"},
                c.json);
  for (const auto& r : t.rows) {
    w.row({std::string(to_string(r.category)), static_cast<std::uint64_t>(r.count),
           static_cast<std::uint64_t>(r.sv_count), opt(r.mean_structural_virality),
           opt(r.structural_virality_half_width), opt(r.mean_max_depth), opt(r.max_depth_half_width)});
  }
  if (t.unclassified > 0) {
    w.row({std::string("unclassified"), static_cast<std::uint64_t>(t.unclassified), std::monostate{},
           std::monostate{}, std::monostate{}, std::monostate{}, std::monostate{}});
  }
  w.commit(log);
}

void write_timeline(const RunConfig& c, const Dataset& d, const SweepResult& s, OutputLog& log) {
  TableWriter w(c.out_dir, "timeline.csv", {"viewer", "exposures", "distinct_posts"}, c.json);
  for (std::size_t u = 0; u < s.viewer_exposures.size(); ++u) {
    if (s.viewer_exposures[u] == 0) continue;
    w.row({external(d.directory, UserId{u}), s.viewer_exposures[u], s.viewer_posts[u]});
  }
  w.commit(log);
}

void write_exposures(const RunConfig& c, const Dataset& d, const std::vector<Outcome>& outcomes, OutputLog& log) {
  spdlog::warn("writing {} exposure rows", outcomes.size());
  TableWriter w(c.out_dir, "exposures.csv",
                {"viewer", "sender", "root_post", "sender_repost_id", "exposure_ms", "elapsed_ms", "was_reposted"},
                false);
  for (const auto& o : outcomes) {
    const auto& e = o.exposure;
    w.row({external(d.directory, e.viewer), external(d.directory, e.sender), e.root_post.value,
           e.sender_repost_id.value, e.exposure_time, e.elapsed_since_root, std::uint64_t{o.was_reposted ? 1u : 0u}});
  }
  w.commit(log);
}

void write_regression(const RunConfig& c, const Context& ctx, CaseSampler positives, OutputLog& log) {
  const auto sample = sample_regression(ctx, std::move(positives));
  const auto features = featurize(sample.cases, ctx.influence, ctx.data.directory, c.hour_bins);
  std::size_t ones = 0;
  for (const auto& r : features.rows) ones += static_cast<std::size_t>(r.is_retweeted);
  if (features.dropped_missing_followers == 0 && features.dropped_unclassified == 0 &&
      features.rows.size() - ones != sample.negatives) {
    throw InvariantError("regression rows do not match the sampled cases");
  }
  {
    io::AtomicFile f(c.out_dir / "regression.csv");
    write_regression_csv(f.stream(), features.rows, ctx.data.directory);
    f.commit();
  }
  {
    io::AtomicFile f(c.out_dir / "regression.json");
    f.stream() << regression_sidecar_json(*ctx.sampling(), c.hour_bins, sample, features);
    f.commit();
  }
  log.files.emplace_back("regression.csv", features.rows.size());
  log.paths.push_back(c.out_dir / "regression.csv");
  log.paths.push_back(c.out_dir / "regression.json");
}

ojson line_error_json(const std::vector<LineError>& errors) {
  ojson arr = ojson::array();
  for (std::size_t i = 0; i < errors.size() && i < 100; ++i) {
    arr.push_back({{"line", errors[i].line}, {"message", errors[i].message}});
  }
  return arr;
}

ojson report_json(const ValidationReport& r) {
  auto list = [](const std::vector<ValidationReport::Entry>& v) {
    ojson arr = ojson::array();
    for (std::size_t i = 0; i < v.size() && i < 100; ++i) arr.push_back({{"id", v[i].id}, {"detail", v[i].detail}});
    return ojson{{"count", v.size()}, {"examples", arr}};
  };
  return {{"accepted", r.accepted()},
          {"duplicate_post_ids", list(r.duplicate_post_ids)},
          {"duplicate_repost_ids", list(r.duplicate_repost_ids)},
          {"dangling_sources", list(r.dangling_sources)},
          {"time_inversions", list(r.time_inversions)},
          {"negative_timestamps", list(r.negative_timestamps)}};
}

std::size_t malformed_lines(const Dataset& d) {
  std::size_t n = 0;
  for (const auto& [name, errors] : d.line_errors) n += errors.size();
  return n;
}

ojson ingest_json(const Dataset& d) {
  ojson j;
  j["posts"] = d.posts.size();
  j["reposts"] = d.reposts.size();
  j["follow_edges"] = d.graph.edge_count();
  j["users"] = d.directory.size();
  j["official_users"] = d.official.count();
  j["self_edges_dropped"] = d.self_edges_dropped;
  j["malformed_lines"] = ojson::object();
  for (const auto& [name, errors] : d.line_errors) {
    j["malformed_lines"][name] = {{"count", errors.size()}, {"examples", line_error_json(errors)}};
  }
  j["validation"] = report_json(d.report);
  return j;
}

void write_manifest(Stage stage, const RunConfig& c, const OutputLog& log, const ojson& diagnostics) {
  ojson m;
  m["tool"] = "cascadeflow";
  m["version"] = CASCADEFLOW_VERSION;
  m["stage"] = std::string(stage_name(stage));
  m["config"] = config_to_json(c);
  m["inputs"] = ojson::object();
  if (stage != Stage::synth) {
    auto digest = [&](const char* key, const std::filesystem::path& p) {
      if (p.empty()) return;
      m["inputs"][key] = {{"path", p.string()}, {"sha256", io::sha256_file(p)}};
    };
    digest("posts", c.inputs.posts);
    digest("reposts", c.inputs.reposts);
    digest("graph", c.inputs.graph);
    digest("users", c.inputs.users);
  }
  m["outputs"] = ojson::object();
  for (const auto& [name, rows] : log.files) m["outputs"][name] = {{"rows", rows}};
  m["diagnostics"] = diagnostics;
  io::AtomicFile f(c.out_dir / "manifest.json");
  f.stream() << m.dump(2) << '\n';
  f.commit();
}

std::string summarize(Stage stage, const RunConfig& c, const OutputLog& log, const ojson& diagnostics) {
  if (c.json) {
    ojson j;
    j["stage"] = std::string(stage_name(stage));
    j["out"] = c.out_dir.string();
    j["outputs"] = ojson::object();
    for (const auto& [name, rows] : log.files) j["outputs"][name] = rows;
    j["diagnostics"] = diagnostics;
    return j.dump(2) + "\n";
  }
  std::ostringstream s;
  for (const auto& [name, rows] : log.files) s << "wrote " << (c.out_dir / name).string() << " (" << rows << " rows)\n";
  return s.str();
}

}  // namespace

StageResult run_stage(Stage stage, const RunConfig& config) {
  config.validate();
  std::filesystem::create_directories(config.out_dir);
  OutputLog log;
  ojson diagnostics = ojson::object();

  if (stage == Stage::synth) {
    auto data = generate(config.synth);
    write_synth(config.out_dir, data);
    for (const char* name : {"users.ndjson", "posts.ndjson", "reposts.ndjson", "follower_graph.csv", "ground_truth.csv"}) {
      log.paths.push_back(config.out_dir / name);
    }
    log.files.emplace_back("posts.ndjson", data.posts.size());
    log.files.emplace_back("reposts.ndjson", data.reposts.size());
    log.files.emplace_back("follower_graph.csv", data.graph.edge_count());
    log.files.emplace_back("users.ndjson", data.directory.size());
    log.files.emplace_back("ground_truth.csv", data.truth.parents.size());
    write_manifest(stage, config, log, diagnostics);
    log.paths.push_back(config.out_dir / "manifest.json");
    return {log.paths, summarize(stage, config, log, diagnostics)};
  }

  const auto data = load_dataset(config, stage == Stage::ingest_check);
  diagnostics["ingest"] = ingest_json(data);

  if (stage == Stage::ingest_check) {
    io::AtomicFile f(config.out_dir / "ingest_report.json");
    f.stream() << diagnostics["ingest"].dump(2) << '\n';
    f.commit();
    log.files.emplace_back("ingest_report.json", 1);
    log.paths.push_back(config.out_dir / "ingest_report.json");
    write_manifest(stage, config, log, diagnostics);
    log.paths.push_back(config.out_dir / "manifest.json");
    StageResult result{log.paths, config.json ? diagnostics["ingest"].dump(2) + "\n"
                                              : summarize(stage, config, log, diagnostics)};
    if (!data.report.accepted() || malformed_lines(data) > 0) {
      throw ValidationError("ingest check failed: " + describe(data.report) + ", " +
                            std::to_string(malformed_lines(data)) + " malformed line(s)");
    }
    return result;
  }

  const auto run_all = stage == Stage::run;
  const auto influence = compute_influence(data, config.workers);
  if (stage == Stage::influence || run_all) write_influence(config, data, influence, log);
  if (stage == Stage::influence) {
    write_manifest(stage, config, log, diagnostics);
    log.paths.push_back(config.out_dir / "manifest.json");
    return {log.paths, summarize(stage, config, log, diagnostics)};
  }

  if (stage == Stage::behavior) {
    write_behavior(config, data, log);
    write_manifest(stage, config, log, diagnostics);
    log.paths.push_back(config.out_dir / "manifest.json");
    return {log.paths, summarize(stage, config, log, diagnostics)};
  }

  const auto build = compute_cascades(data, config.workers);
  diagnostics["cascades"] = {{"count", build.cascades.size()},
                             {"official_reposts_dropped", build.official_reposts_dropped},
                             {"dangling_reposts", build.dangling_reposts},
                             {"reposts_before_root", build.reposts_before_root},
                             {"fallback_attachments", build.fallback_attachments},
                             {"notes", build.diagnostics}};
  if (stage == Stage::cascades || run_all) write_cascades(config, data, influence, build.cascades, log);
  if (stage == Stage::virality || run_all) write_virality(config, influence, build.cascades, log);

  const bool regression = stage == Stage::sample_regression || (run_all && config.positive_rate);
  if (stage == Stage::sample_regression && !config.positive_rate) {
    throw ValidationError("sample-regression needs a positive sampling rate (--rate or sampling.positive_rate)");
  }
  SweepPlan plan;
  plan.crp = plan.timeseries = stage == Stage::crp || run_all;
  plan.shares = stage == Stage::shares || run_all;
  plan.timeline = stage == Stage::timeline || run_all;
  plan.collect = (stage == Stage::timeline || run_all) && config.emit_exposures;
  plan.positives = regression;
  const bool needs_sweep = plan.crp || plan.shares || plan.timeline || plan.positives;
  if (needs_sweep) {
    const Context ctx(config, data, influence, build.cascades);
    auto swept = sweep(ctx, plan);
    if (plan.crp) write_crp(config, swept, log);
    if (plan.shares) write_shares(config, influence, swept, log);
    if (plan.timeline) write_timeline(config, data, swept, log);
    if (plan.collect) write_exposures(config, data, swept.collected, log);
    if (regression) write_regression(config, ctx, std::move(*swept.sampler), log);
  }
  if (run_all) write_behavior(config, data, log);

  write_manifest(stage, config, log, diagnostics);
  log.paths.push_back(config.out_dir / "manifest.json");
  return {log.paths, summarize(stage, config, log, diagnostics)};
}

}  // namespace cascadeflow
