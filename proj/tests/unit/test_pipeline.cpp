#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cascadeflow/errors.hpp"
#include "cascadeflow/pipeline.hpp"
#include "test_util.hpp"

using namespace cascadeflow;
namespace fs = std::filesystem;

namespace {

// Small synthetic dataset shared by every case in this file.
const fs::path& dataset() {
  static const fs::path dir = [] {
    auto d = testutil::scratch_dir("pipeline_data");
    RunConfig c;
    c.out_dir = d;
    c.synth.n_users = 400;
    c.synth.n_roots = 60;
    c.synth.mean_out_degree = 10;
    c.synth.base_repost_prob = 0.04;
    c.synth.prestige_beta = 1.0;
    c.synth.seed = 12;
    run_stage(Stage::synth, c);
    return d;
  }();
  return dir;
}

RunConfig base_config(const std::string& out) {
  RunConfig c;
  const auto& d = dataset();
  c.inputs = {d / "posts.ndjson", d / "reposts.ndjson", d / "follower_graph.csv", d / "users.ndjson"};
  c.out_dir = testutil::scratch_dir(out);
  c.popularity_thresholds = {10, 50, 100};
  return c;
}

int cli(const std::string& args, const std::string& log = "") {
  std::string cmd = std::string(CASCADEFLOW_CLI) + " " + args + " > " +
                    (log.empty() ? std::string("/dev/null") : log) + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string first_line(const fs::path& p) {
  const auto text = testutil::read_file(p);
  return text.substr(0, text.find('\n'));
}

}  // namespace

TEST_CASE("config files: load, merge, unknown keys, relative paths") {
  const auto dir = testutil::scratch_dir("pipeline_config");
  testutil::write_file(dir / "run.json", R"({
    "inputs": {"posts": "p.ndjson", "reposts": "/abs/r.ndjson"},
    "windows": ["1h", "24h"],
    "popularity_thresholds": [5, 10],
    "sampling": {"positive_rate": 0.01},
    "hour_bins": {"utc_offset_hours": 0},
    "workers": 3,
    "synth": {"n_users": 50, "prestige_beta": 2.0}
  })");
  auto c = load_run_config(dir / "run.json");
  CHECK(c.inputs.posts == dir / "p.ndjson");
  CHECK(c.inputs.reposts == fs::path("/abs/r.ndjson"));
  CHECK(c.windows == std::vector<std::string>{"1h", "24h"});
  CHECK(c.primary_window() == TimeWindow::first(kHour));
  CHECK(c.popularity_thresholds == std::vector<std::uint64_t>{5, 10});
  CHECK(c.positive_rate == 0.01);
  CHECK(c.hour_bins.utc_offset_hours == 0);
  CHECK(c.workers == 3);
  CHECK(c.synth.n_users == 50);
  CHECK(c.synth.prestige_beta == 2.0);

  merge_run_config(c, R"({"sampling": {"positive_rate": null}, "min_reposts": 7})");
  CHECK_FALSE(c.positive_rate.has_value());
  CHECK(c.min_reposts == 7);

  CHECK_THROWS_AS(merge_run_config(c, R"({"windowz": "1h"})"), ValidationError);
  CHECK_THROWS_AS(merge_run_config(c, R"({"synth": {"users": 5}})"), ValidationError);
  CHECK_THROWS_AS(merge_run_config(c, R"({"workers": "many"})"), ValidationError);
  CHECK_THROWS_AS(merge_run_config(c, "{not json"), ValidationError);
  CHECK_THROWS_AS(load_run_config(dir / "absent.json"), InputError);

  // The canonical rendering round-trips.
  const auto again = nlohmann::json::parse(run_config_json(c));
  CHECK(again["min_reposts"] == 7);
}

TEST_CASE("config validation") {
  RunConfig c;
  c.validate();
  c.windows = {"7200000", "1000:5000"};
  c.validate();
  c.windows = {"5h"};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.windows = {"banana"};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = RunConfig{};
  c.windows.clear();
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = RunConfig{};
  c.popularity_thresholds = {10, 5};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = RunConfig{};
  c.top_fractions = {0.0};
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("stage names") {
  for (auto s : {Stage::ingest_check, Stage::influence, Stage::cascades, Stage::timeline, Stage::crp, Stage::shares,
                 Stage::behavior, Stage::virality, Stage::sample_regression, Stage::synth, Stage::run}) {
    CHECK(parse_stage(stage_name(s)) == s);
  }
  CHECK(parse_stage("ingest-check") == Stage::ingest_check);
  CHECK_FALSE(parse_stage("nope").has_value());
}

TEST_CASE("run writes every table with the fixed headers") {
  auto c = base_config("pipeline_run");
  c.positive_rate = 0.5;
  c.emit_edges = true;
  c.emit_exposures = true;
  c.json = true;
  auto r = run_stage(Stage::run, c);
  const auto& o = c.out_dir;
  CHECK(first_line(o / "influence.csv") == "user_id,h,g,hg,category");
  CHECK(first_line(o / "cascades.csv") ==
        "root_post_id,size,max_depth,structural_virality,first_reposter,first_reposter_category");
  CHECK(first_line(o / "edges.csv") == "root_post_id,child_repost_id,parent_repost_id_or_ROOT");
  CHECK(first_line(o / "crp.csv") == "window,window_start_ms,window_end_ms,popularity,category,viewed,reposted,crp");
  CHECK(first_line(o / "crp_timeseries.csv") == "bucket,elapsed_start_ms,elapsed_end_ms,category,viewed,reposted,crp");
  CHECK(first_line(o / "shares.csv") == "category,users,user_share,viewed,view_share,reposted,repost_share");
  CHECK(first_line(o / "behavior.csv") == "top_fraction,repost_share");
  CHECK(first_line(o / "behavior_ccdf.csv") == "reposts_at_least,fraction_of_users");
  CHECK(first_line(o / "timeline.csv") == "viewer,exposures,distinct_posts");
  CHECK(first_line(o / "exposures.csv") ==
        "viewer,sender,root_post,sender_repost_id,exposure_ms,elapsed_ms,was_reposted");
  CHECK(first_line(o / "regression.csv").rfind("is_retweeted,", 0) == 0);
  for (const char* f : {"virality.csv", "regression.json", "manifest.json", "crp.json", "shares.json"}) {
    CHECK(fs::exists(o / f));
  }
  auto summary = nlohmann::json::parse(r.summary);
  CHECK(summary["stage"] == "run");
  auto manifest = nlohmann::json::parse(testutil::read_file(o / "manifest.json"));
  CHECK(manifest["inputs"]["posts"]["sha256"].get<std::string>().size() == 64);
  CHECK(manifest["outputs"].contains("crp.csv"));

  auto reg = nlohmann::json::parse(testutil::read_file(o / "regression.json"));
  CHECK(reg["negatives"].get<std::size_t>() == 2 * reg["positives"].get<std::size_t>());
}

TEST_CASE("single stages match the corresponding output of run") {
  auto all = base_config("pipeline_all");
  run_stage(Stage::run, all);
  const std::pair<Stage, const char*> stages[] = {
      {Stage::influence, "influence.csv"}, {Stage::cascades, "cascades.csv"}, {Stage::crp, "crp.csv"},
      {Stage::shares, "shares.csv"},       {Stage::behavior, "behavior.csv"}, {Stage::virality, "virality.csv"},
      {Stage::timeline, "timeline.csv"},
  };
  for (const auto& [stage, file] : stages) {
    auto c = base_config("pipeline_one");
    run_stage(stage, c);
    CHECK(testutil::read_file(c.out_dir / file) == testutil::read_file(all.out_dir / file));
  }
}

TEST_CASE("outputs do not depend on the worker count") {
  auto one = base_config("pipeline_w1");
  one.positive_rate = 0.3;
  one.emit_edges = one.emit_exposures = true;
  auto four = base_config("pipeline_w4");
  four.positive_rate = 0.3;
  four.emit_edges = four.emit_exposures = true;
  four.workers = 4;
  run_stage(Stage::run, one);
  run_stage(Stage::run, four);
  for (const auto& entry : fs::directory_iterator(one.out_dir)) {
    const auto name = entry.path().filename();
    if (name == "manifest.json") continue;
    CHECK_MESSAGE(testutil::read_file(entry.path()) == testutil::read_file(four.out_dir / name), name.string());
  }
}

TEST_CASE("stage errors") {
  auto c = base_config("pipeline_err");
  CHECK_THROWS_AS(run_stage(Stage::sample_regression, c), ValidationError);
  c.inputs.posts = c.out_dir / "nope.ndjson";
  CHECK_THROWS_AS(run_stage(Stage::influence, c), InputError);

  CHECK(exit_code_for(std::make_exception_ptr(InputError("x"))) == 2);
  CHECK(exit_code_for(std::make_exception_ptr(ValidationError("x"))) == 3);
  CHECK(exit_code_for(std::make_exception_ptr(InvariantError("x"))) == 4);
  CHECK(exit_code_for(std::make_exception_ptr(std::runtime_error("x"))) == 1);
}

TEST_CASE("ingest-check reports and fails on bad input") {
  auto c = base_config("pipeline_ingest");
  run_stage(Stage::ingest_check, c);
  CHECK(fs::exists(c.out_dir / "ingest_report.json"));

  const auto bad = testutil::scratch_dir("pipeline_bad");
  testutil::write_file(bad / "posts.ndjson", R"({"post_id":1,"author_id":"a","timestamp_ms":100})" "\n{broken\n");
  testutil::write_file(bad / "reposts.ndjson", R"({"repost_id":5,"user_id":"b","source_post_id":1,"timestamp_ms":50})" "\n");
  testutil::write_file(bad / "graph.csv", "follower_id,followee_id\nb,a\n");
  c.inputs = {bad / "posts.ndjson", bad / "reposts.ndjson", bad / "graph.csv", {}};
  CHECK_THROWS_AS(run_stage(Stage::ingest_check, c), ValidationError);
  CHECK(fs::exists(c.out_dir / "ingest_report.json"));
  // Lenient runs go through; strict runs stop.
  run_stage(Stage::cascades, c);
  c.strict = true;
  CHECK_THROWS_AS(run_stage(Stage::cascades, c), ValidationError);
}

TEST_CASE("command line exit codes") {
  const auto& d = dataset();
  const auto out = testutil::scratch_dir("pipeline_cli");
  const std::string inputs = " --posts " + (d / "posts.ndjson").string() + " --reposts " +
                             (d / "reposts.ndjson").string() + " --graph " + (d / "follower_graph.csv").string();
  CHECK(cli("cascades" + inputs + " --out " + out.string()) == 0);
  CHECK(fs::exists(out / "cascades.csv"));

  const auto log = (out / "log.txt").string();
  CHECK(cli("influence --posts /no/such/posts.ndjson --reposts x --graph y --out " + out.string(), log) == 2);
  CHECK(testutil::read_file(log).find("/no/such/posts.ndjson") != std::string::npos);

  CHECK(cli("crp" + inputs + " --window banana --out " + out.string()) == 3);
  CHECK(cli("sample-regression" + inputs + " --out " + out.string()) == 3);
  CHECK(cli("no-such-command") == 3);
  CHECK(cli("--help") == 0);
  CHECK(cli("run --config /no/such/config.json") == 2);

  const auto js = (out / "summary.json").string();
  CHECK(cli("behavior" + inputs + " --json --out " + out.string(), js) == 0);
  CHECK(nlohmann::json::parse(testutil::read_file(js))["stage"] == "behavior");

  const auto synth = testutil::scratch_dir("pipeline_cli_synth");
  CHECK(cli("synth --seed 3 --out " + synth.string()) == 0);
  CHECK(fs::exists(synth / "ground_truth.csv"));
}
