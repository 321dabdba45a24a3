#include <doctest.h>

#include <map>
#include <random>

#include "cascadeflow/cascade.hpp"
#include "cascadeflow/errors.hpp"
#include "cascadeflow/timeline.hpp"
#include "oracles.hpp"

using namespace cascadeflow;

namespace {

UserId U(std::uint64_t v) { return UserId{v}; }

const TimeWindow kAll = TimeWindow::first(1'000'000'000);

std::vector<oracle::NaiveExposure> as_naive(const std::vector<Outcome>& outs) {
  std::vector<oracle::NaiveExposure> v;
  for (const auto& o : outs) {
    const auto& e = o.exposure;
    v.push_back({e.viewer.value, e.sender.value, e.root_post.value, e.sender_repost_id.value, e.exposure_time,
                 e.elapsed_since_root, o.was_reposted});
  }
  return v;
}

bool same(const std::vector<oracle::NaiveExposure>& a, const std::vector<oracle::NaiveExposure>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].key() != b[i].key() || a[i].sender != b[i].sender || a[i].elapsed != b[i].elapsed ||
        a[i].reposted != b[i].reposted) {
      return false;
    }
  }
  return true;
}

// Root author 0, sender 1, followers 2 3 4 of the sender. 2 and 3 repost
// off the sender; 4 only reposts some other post.
struct Fig2c {
  FollowerGraph graph = FollowerGraph::from_edges(
      {{U(1), U(0)}, {U(2), U(1)}, {U(3), U(1)}, {U(4), U(1)}}, 6);
  std::vector<PostEvent> posts = {{PostId{1}, U(0), 0, false}, {PostId{2}, U(5), 0, false}};
  std::vector<RepostEvent> reposts = {{RepostId{10}, U(1), PostId{1}, 100},
                                      {RepostId{11}, U(2), PostId{1}, 200},
                                      {RepostId{12}, U(3), PostId{1}, 300},
                                      {RepostId{13}, U(4), PostId{2}, 50}};
};

}  // namespace

TEST_CASE("one sender, three followers, two reposts gives 2/3") {
  Fig2c f;
  auto b = build_cascades(f.posts, f.reposts, f.graph, UserSet(6));
  auto outs = build_outcomes(b.cascades, f.graph, UserSet(6), {kAll, false});
  std::uint64_t viewed = 0, reposted = 0;
  for (const auto& o : outs) {
    if (o.exposure.sender != U(1)) continue;
    ++viewed;
    reposted += o.was_reposted ? 1 : 0;
  }
  CHECK(viewed == 3);
  CHECK(reposted == 2);
  CHECK(static_cast<double>(reposted) / static_cast<double>(viewed) == 2.0 / 3.0);
}

TEST_CASE("inactive followers never view") {
  Fig2c f;
  f.reposts.pop_back();  // 4 no longer reposts anything
  auto b = build_cascades(f.posts, f.reposts, f.graph, UserSet(6));
  auto outs = build_outcomes(b.cascades, f.graph, UserSet(6), {kAll, false});
  for (const auto& o : outs) CHECK(o.exposure.viewer != U(4));
  CHECK(outs.size() == 2);
}

TEST_CASE("official senders produce no views") {
  Fig2c f;
  UserSet official(6);
  official.insert(U(1));
  auto b = build_cascades(f.posts, f.reposts, f.graph, UserSet(6));
  auto outs = build_outcomes(b.cascades, f.graph, official, {kAll, false});
  CHECK(outs.empty());
}

TEST_CASE("no views of a post after the viewer reposted it") {
  // 2 follows 1; 2 reposts first, then 1 reposts: 2 sees nothing.
  auto g = FollowerGraph::from_edges({{U(2), U(1)}}, 3);
  std::vector<PostEvent> posts = {{PostId{1}, U(0), 0, false}};
  std::vector<RepostEvent> reposts = {{RepostId{1}, U(2), PostId{1}, 10}, {RepostId{2}, U(1), PostId{1}, 20}};
  auto b = build_cascades(posts, reposts, g, UserSet(3));
  CHECK(build_outcomes(b.cascades, g, UserSet(3), {kAll, false}).empty());

  // Same instant also counts as "at or after".
  reposts[1].timestamp = 10;
  b = build_cascades(posts, reposts, g, UserSet(3));
  CHECK(build_outcomes(b.cascades, g, UserSet(3), {kAll, false}).empty());
}

TEST_CASE("every earlier followee gives a view, only the parent gets credit") {
  // 3 follows 1 and 2; both repost before 3. Parent is 2 (latest).
  auto g = FollowerGraph::from_edges({{U(3), U(1)}, {U(3), U(2)}}, 4);
  std::vector<PostEvent> posts = {{PostId{1}, U(0), 0, false}};
  std::vector<RepostEvent> reposts = {{RepostId{1}, U(1), PostId{1}, 10},
                                      {RepostId{2}, U(2), PostId{1}, 20},
                                      {RepostId{3}, U(3), PostId{1}, 30}};
  auto b = build_cascades(posts, reposts, g, UserSet(4));
  auto outs = build_outcomes(b.cascades, g, UserSet(4), {kAll, false});
  REQUIRE(outs.size() == 2);
  CHECK(outs[0].exposure.sender == U(1));
  CHECK_FALSE(outs[0].was_reposted);
  CHECK(outs[1].exposure.sender == U(2));
  CHECK(outs[1].was_reposted);
}

TEST_CASE("window filters by elapsed time of the sender's repost") {
  auto g = FollowerGraph::from_edges({{U(2), U(1)}, {U(3), U(1)}}, 4);
  std::vector<PostEvent> posts = {{PostId{1}, U(0), 1000, false}};
  std::vector<RepostEvent> reposts = {{RepostId{1}, U(1), PostId{1}, 1000 + kHour},
                                      {RepostId{2}, U(2), PostId{1}, 1000 + 2 * kHour},
                                      {RepostId{3}, U(3), PostId{1}, 1000 + 2 * kHour}};
  auto b = build_cascades(posts, reposts, g, UserSet(4));
  CHECK(build_outcomes(b.cascades, g, UserSet(4), {TimeWindow::first(kHour), false}).empty());
  auto outs = build_outcomes(b.cascades, g, UserSet(4), {TimeWindow::first(kHour + 1), false});
  REQUIRE(outs.size() == 2);
  CHECK(outs[0].exposure.elapsed_since_root == kHour);
  CHECK(outs[0].exposure.exposure_time == 1000 + kHour);
}

TEST_CASE("dedup counts one view per (viewer, sender) per post") {
  auto g = FollowerGraph::from_edges({{U(2), U(1)}}, 3);
  std::vector<PostEvent> posts = {{PostId{1}, U(0), 0, false}};
  std::vector<RepostEvent> reposts = {{RepostId{1}, U(1), PostId{1}, 10},
                                      {RepostId{2}, U(1), PostId{1}, 20},
                                      {RepostId{3}, U(2), PostId{1}, 30}};
  auto b = build_cascades(posts, reposts, g, UserSet(3));
  auto plain = build_outcomes(b.cascades, g, UserSet(3), {kAll, false});
  auto dedup = build_outcomes(b.cascades, g, UserSet(3), {kAll, true});
  CHECK(plain.size() == 2);
  REQUIRE(dedup.size() == 1);
  CHECK(dedup[0].exposure.sender_repost_id == RepostId{1});
}

TEST_CASE("random instances match the naive enumeration") {
  std::mt19937_64 rng(17);
  for (int iter = 0; iter < 60; ++iter) {
    const std::size_t users = 5 + rng() % 25;
    auto in = oracle::random_instance(rng, users, 1 + rng() % 6, rng() % 120, 0.25, 2000, iter % 2 == 0);
    UserSet official(users);
    if (iter % 3 == 0) official.insert(U(rng() % users));
    auto b = build_cascades(in.posts, in.reposts, in.graph, official);
    const TimeWindow window = iter % 4 == 0 ? TimeWindow(100, 900) : kAll;
    const auto expect = oracle::exposures(b.cascades, in.graph, official, window);
    for (std::size_t workers : {1u, 3u}) {
      auto outs = build_outcomes(b.cascades, in.graph, official, {window, false}, workers);
      CHECK(same(as_naive(outs), expect));

      // Outcome lookup from the edge list agrees with the builder.
      std::vector<ExposureRecord> recs;
      for (const auto& o : outs) recs.push_back(o.exposure);
      CHECK(resolve_repost_outcome(recs, b.cascades) == outs);
      CHECK(build_exposures(b.cascades, in.graph, official, {window, false}, workers) == recs);

      // Each viewer is credited at most once per post, and only if they reposted.
      std::map<std::pair<std::uint64_t, std::uint64_t>, int> credit;
      for (const auto& o : outs) {
        if (o.was_reposted) ++credit[{o.exposure.viewer.value, o.exposure.root_post.value}];
      }
      for (const auto& [key, n] : credit) CHECK(n == 1);

      // Canonical order.
      for (std::size_t i = 1; i < outs.size(); ++i) {
        CHECK_FALSE(exposure_before(outs[i].exposure, outs[i - 1].exposure));
      }
    }
  }
}

TEST_CASE("dedup output is a subset of the plain output") {
  std::mt19937_64 rng(5);
  for (int iter = 0; iter < 20; ++iter) {
    auto in = oracle::random_instance(rng, 12, 3, 80, 0.3, 1000);
    auto b = build_cascades(in.posts, in.reposts, in.graph, UserSet(12));
    auto plain = build_outcomes(b.cascades, in.graph, UserSet(12), {kAll, false});
    auto dedup = build_outcomes(b.cascades, in.graph, UserSet(12), {kAll, true});
    CHECK(dedup.size() <= plain.size());
    std::size_t j = 0;
    for (const auto& d : dedup) {
      while (j < plain.size() && !(plain[j] == d)) ++j;
      CHECK(j < plain.size());
    }
  }
}

TEST_CASE("outcome lookup rejects unknown posts") {
  std::vector<ExposureRecord> recs = {{U(1), U(2), PostId{99}, RepostId{1}, 0, 0}};
  CHECK_THROWS_AS(resolve_repost_outcome(recs, std::vector<Cascade>{}), ValidationError);
}

TEST_CASE("timeline stats count views and distinct posts per viewer") {
  std::vector<ExposureRecord> recs = {{U(3), U(1), PostId{1}, RepostId{1}, 0, 0},
                                      {U(3), U(2), PostId{1}, RepostId{2}, 1, 1},
                                      {U(3), U(2), PostId{2}, RepostId{3}, 2, 0},
                                      {U(1), U(2), PostId{2}, RepostId{3}, 2, 0}};
  auto s = timeline_stats(recs);
  REQUIRE(s.size() == 2);
  CHECK(s[0].viewer == U(1));
  CHECK(s[0].total_exposures == 1);
  CHECK(s[0].distinct_posts == 1);
  CHECK(s[1].viewer == U(3));
  CHECK(s[1].total_exposures == 3);
  CHECK(s[1].distinct_posts == 2);
}
