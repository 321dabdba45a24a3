#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "cascadeflow/cascade.hpp"
#include "cascadeflow/errors.hpp"
#include "cascadeflow/influence.hpp"
#include "cascadeflow/synth.hpp"
#include "cascadeflow/timeline.hpp"
#include "test_util.hpp"

using namespace cascadeflow;

namespace {

SynthConfig small(std::uint64_t seed, double beta = 0.0) {
  SynthConfig c;
  c.n_users = 200;
  c.mean_out_degree = 8;
  c.max_out_degree = 100;
  c.n_roots = 40;
  c.base_repost_prob = 0.05;
  c.prestige_beta = beta;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("generation is a pure function of the config") {
  const auto a = generate(small(3));
  const auto b = generate(small(3));
  CHECK(a.posts == b.posts);
  CHECK(a.reposts == b.reposts);
  CHECK(a.graph == b.graph);
  CHECK(a.truth.tier == b.truth.tier);
  const auto c = generate(small(4));
  CHECK_FALSE(c.reposts == a.reposts);
}

TEST_CASE("generated events are well formed") {
  const auto d = generate(small(5, 1.0));
  REQUIRE_FALSE(d.reposts.empty());
  CHECK(d.posts.size() == 40);
  CHECK(d.graph.user_count() == 200);
  CHECK(d.directory.size() == 200);
  CHECK(d.truth.parents.size() == d.reposts.size());
  CHECK(d.truth.tier.size() == 200);
  CHECK(validate_event_stream(d.posts, d.reposts).accepted());

  std::set<Millis> times;
  for (const auto& p : d.posts) CHECK(times.insert(p.timestamp).second);
  for (const auto& r : d.reposts) CHECK(times.insert(r.timestamp).second);
  for (std::size_t i = 1; i < d.reposts.size(); ++i) {
    CHECK(d.reposts[i - 1].timestamp < d.reposts[i].timestamp);
    CHECK(d.reposts[i - 1].repost_id < d.reposts[i].repost_id);
  }

  // True parents are earlier reposts of the same post by a followee, or the root.
  std::map<std::uint64_t, const RepostEvent*> by_id;
  for (const auto& r : d.reposts) by_id[r.repost_id.value] = &r;
  for (std::size_t i = 0; i < d.reposts.size(); ++i) {
    const auto& r = d.reposts[i];
    CHECK(d.truth.parents[i].repost_id == r.repost_id);
    CHECK(d.truth.parent_of(r.repost_id) == d.truth.parents[i].parent);
    if (auto p = d.truth.parents[i].parent) {
      const auto* q = by_id.at(p->value);
      CHECK(q->source_post_id == r.source_post_id);
      CHECK(q->timestamp < r.timestamp);
      CHECK(d.graph.follows(r.reposter, q->reposter));
    }
  }
  CHECK_THROWS_AS(d.truth.parent_of(RepostId{~0ULL}), ValidationError);

  for (std::size_t u = 0; u < 200; ++u) {
    CHECK(d.directory.profile(UserId{u}).follower_count == d.graph.followers(UserId{u}).size());
  }
}

TEST_CASE("base probability 0 gives no reposts") {
  auto c = small(1);
  c.base_repost_prob = 0.0;
  const auto d = generate(c);
  CHECK(d.reposts.empty());
  CHECK(d.posts.size() == 40);
}

TEST_CASE("infeasible configs are rejected") {
  auto bad = [](auto edit) {
    auto c = small(1);
    edit(c);
    return c;
  };
  CHECK_THROWS_AS(generate(bad([](SynthConfig& c) { c.n_users = 1; })), ValidationError);
  CHECK_THROWS_AS(generate(bad([](SynthConfig& c) { c.follower_degree_exponent = 1.0; })), ValidationError);
  CHECK_THROWS_AS(generate(bad([](SynthConfig& c) { c.base_repost_prob = 1.0; })), ValidationError);
  CHECK_THROWS_AS(generate(bad([](SynthConfig& c) { c.prestige_beta = -1; })), ValidationError);
  CHECK_THROWS_AS(generate(bad([](SynthConfig& c) { c.mean_out_degree = 500; })), ValidationError);
  CHECK_THROWS_AS(generate(bad([](SynthConfig& c) { c.n_roots = 0; })), ValidationError);
  CHECK_THROWS_AS(generate(bad([](SynthConfig& c) {
                    c.root_spread_ms = 10;
                    c.n_roots = 11;
                  })),
                  ValidationError);
  CHECK_THROWS_AS(generate(bad([](SynthConfig& c) { c.mean_reaction_ms = 0; })), ValidationError);
}

TEST_CASE("the temporal parent rule recovers the generator's parents") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto d = generate(small(seed, 2.0));
    auto b = build_cascades(d.posts, d.reposts, d.graph, UserSet(200));
    const auto truth = cascades_from_truth(d.posts, d.reposts, d.truth);
    REQUIRE(truth.size() == b.cascades.size());
    std::size_t total = 0, hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      REQUIRE(truth[i].nodes.size() == b.cascades[i].nodes.size());
      for (std::size_t j = 0; j < truth[i].nodes.size(); ++j) {
        ++total;
        hit += truth[i].nodes[j].parent == b.cascades[i].nodes[j].parent ? 1 : 0;
      }
    }
    CHECK(static_cast<double>(hit) >= 0.99 * static_cast<double>(total));
  }
}

TEST_CASE("independent CRP recount agrees with the exposure pipeline") {
  for (std::uint64_t seed : {7, 8}) {
    const auto d = generate(small(seed, 1.5));
    const auto cascades = cascades_from_truth(d.posts, d.reposts, d.truth);
    auto scores = compute_scores(d.posts, repost_counts(d.posts, d.reposts), 200);
    auto influence = assign_categories(scores);
    const TimeWindow window = TimeWindow::first(6 * kHour);
    auto outs = build_outcomes(cascades, d.graph, UserSet(200), {window, false});
    std::array<ViewCount, kCategorySlots> got{};
    for (const auto& o : outs) got[category_slot(influence, o.exposure.sender)].add(o.was_reposted);
    auto expect = oracle_crp(d.posts, d.reposts, d.graph, d.truth,
                             [&](UserId u) { return category_slot(influence, u); }, window);
    CHECK(got == expect);
    CHECK_THROWS_AS(oracle_crp(d.posts, d.reposts, d.graph, d.truth,
                               [&](UserId u) { return category_slot(influence, u); }, window, 10),
                    ValidationError);
  }
}

TEST_CASE("files are written") {
  const auto d = generate(small(9));
  const auto dir = testutil::scratch_dir("synth_files");
  write_synth(dir, d);
  for (const char* f : {"posts.ndjson", "reposts.ndjson", "follower_graph.csv", "users.ndjson", "ground_truth.csv"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const auto truth = testutil::read_file(dir / "ground_truth.csv");
  CHECK(truth.rfind("repost_id,true_parent_id,tier\n", 0) == 0);
  std::size_t lines = 0;
  for (char ch : truth) lines += ch == '\n' ? 1 : 0;
  CHECK(lines == d.reposts.size() + 1);
}
