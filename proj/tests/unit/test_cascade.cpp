#include <doctest.h>

#include <random>

#include "cascadeflow/cascade.hpp"
#include "cascadeflow/errors.hpp"
#include "oracles.hpp"

using namespace cascadeflow;

namespace {

UserId U(std::uint64_t v) { return UserId{v}; }

// Parent repost id per node, nullopt for the root.
std::map<std::uint64_t, std::optional<std::uint64_t>> edges_of(const std::vector<Cascade>& cs) {
  std::map<std::uint64_t, std::optional<std::uint64_t>> out;
  for (const auto& c : cs) {
    for (const auto& n : c.nodes) {
      std::optional<std::uint64_t> p;
      if (n.parent >= 0) p = c.nodes[static_cast<std::size_t>(n.parent)].repost_id.value;
      out[n.repost_id.value] = p;
    }
  }
  return out;
}

Cascade tree(const std::vector<std::int64_t>& parents) {
  Cascade c;
  c.root_post = PostId{1};
  for (std::size_t i = 0; i < parents.size(); ++i) {
    c.nodes.push_back(CascadeNode{RepostId{i + 1}, U(i + 1), static_cast<Millis>(i + 1), parents[i], false});
  }
  return c;
}

}  // namespace

TEST_CASE("repost attaches to the latest earlier followee repost") {
  // 0 posts at t=0; 1 and 2 follow 0; 3 follows 1 and 2.
  auto g = FollowerGraph::from_edges({{U(1), U(0)}, {U(2), U(0)}, {U(3), U(1)}, {U(3), U(2)}}, 4);
  std::vector<PostEvent> posts = {{PostId{1}, U(0), 0, false}};
  std::vector<RepostEvent> reposts = {{RepostId{10}, U(1), PostId{1}, 10},
                                      {RepostId{11}, U(2), PostId{1}, 20},
                                      {RepostId{12}, U(3), PostId{1}, 30}};
  auto b = build_cascades(posts, reposts, g, UserSet(4));
  REQUIRE(b.cascades.size() == 1);
  const auto& c = b.cascades[0];
  REQUIRE(c.nodes.size() == 3);
  CHECK(c.nodes[0].parent == -1);
  CHECK(c.nodes[1].parent == -1);
  CHECK(c.nodes[2].parent == 1);
  CHECK(b.fallback_attachments == 0);
  CHECK(c.first_reposter() == U(1));
}

TEST_CASE("equal timestamps: repost beats root, larger id wins, same-time peers are invisible") {
  auto g = FollowerGraph::from_edges({{U(3), U(1)}, {U(3), U(2)}, {U(4), U(3)}}, 5);
  std::vector<PostEvent> posts = {{PostId{1}, U(0), 5, false}};
  std::vector<RepostEvent> reposts = {{RepostId{20}, U(1), PostId{1}, 5},  // same time as the root
                                      {RepostId{21}, U(2), PostId{1}, 5},
                                      {RepostId{22}, U(3), PostId{1}, 9},
                                      {RepostId{23}, U(4), PostId{1}, 9}};
  auto b = build_cascades(posts, reposts, g, UserSet(5));
  const auto e = edges_of(b.cascades);
  CHECK_FALSE(e.at(20).has_value());
  CHECK(e.at(22) == 21u);
  CHECK_FALSE(e.at(23).has_value());  // 3's repost is at the same instant
  CHECK(b.fallback_attachments == 3);  // 20, 21 and 23 do not follow the author
}

TEST_CASE("official reposters, dangling sources and early reposts are dropped") {
  auto g = FollowerGraph::from_edges({{U(1), U(0)}, {U(2), U(1)}}, 3);
  std::vector<PostEvent> posts = {{PostId{1}, U(0), 100, false}};
  std::vector<RepostEvent> reposts = {{RepostId{1}, U(1), PostId{1}, 150},
                                      {RepostId{2}, U(2), PostId{1}, 160},
                                      {RepostId{3}, U(2), PostId{9}, 160},
                                      {RepostId{4}, U(2), PostId{1}, 50}};
  UserSet official(3);
  official.insert(U(1));
  auto b = build_cascades(posts, reposts, g, official);
  CHECK(b.official_reposts_dropped == 1);
  CHECK(b.dangling_reposts == 1);
  CHECK(b.reposts_before_root == 1);
  REQUIRE(b.cascades[0].nodes.size() == 1);
  CHECK(b.cascades[0].nodes[0].parent == -1);
  CHECK(b.cascades[0].nodes[0].root_fallback);
}

TEST_CASE("build matches the naive reconstruction on random instances") {
  std::mt19937_64 rng(5);
  for (int round = 0; round < 40; ++round) {
    const std::size_t users = 5 + rng() % 40;
    auto in = oracle::random_instance(rng, users, 1 + rng() % 6, rng() % 300, 0.15, 50 + rng() % 200);
    UserSet official(users);
    if (round % 3 == 0) official.insert(U(rng() % users));
    const auto expected = oracle::parents(in.posts, in.reposts, in.graph, official);
    for (std::size_t workers : {1, 3}) {
      auto b = build_cascades(in.posts, in.reposts, in.graph, official, workers);
      for (const auto& c : b.cascades) check_tree(c);
      REQUIRE(edges_of(b.cascades) == expected);
    }
  }
}

TEST_CASE("check_tree rejects forward and time-travelling parents") {
  CHECK_NOTHROW(check_tree(tree({-1, 0, 1})));
  CHECK_THROWS_AS(check_tree(tree({-1, 2, 1})), InvariantError);
  auto c = tree({-1, 0});
  c.nodes[1].timestamp = 0;
  CHECK_THROWS_AS(check_tree(c), InvariantError);
}

TEST_CASE("structural virality fixtures") {
  CHECK_FALSE(structural_virality(tree({})).has_value());
  CHECK(*structural_virality(tree({-1, 0})) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(*structural_virality(tree({-1, -1, -1})) == 1.5);
  CHECK(*structural_virality(tree({-1})) == 1.0);
}

TEST_CASE("structural virality matches all-pairs BFS on random trees") {
  std::mt19937_64 rng(9);
  for (int round = 0; round < 300; ++round) {
    const std::size_t n = 1 + rng() % 120;
    std::vector<std::int64_t> parents;
    for (std::size_t i = 0; i < n; ++i) {
      parents.push_back(static_cast<std::int64_t>(rng() % (i + 1)) - 1);
    }
    const auto c = tree(parents);
    const auto expect = oracle::structural_virality(oracle::parent_vector(c));
    REQUIRE(expect.has_value());
    CHECK(std::abs(*structural_virality(c) - *expect) <= 1e-9);
  }
}

TEST_CASE("max depth and first reposter subtree") {
  // root -> a(0) -> b(1) -> c(2); root -> d(3); a -> e(4)
  const auto c = tree({-1, 0, 1, -1, 0});
  CHECK(max_depth(c) == 3);
  CHECK(max_depth(tree({})) == 0);
  const auto sub = first_reposter_subtree(c);
  CHECK(sub.root_author == U(1));
  REQUIRE(sub.nodes.size() == 3);
  CHECK(sub.nodes[0].parent == -1);
  CHECK(sub.nodes[1].parent == 0);
  CHECK(sub.nodes[2].parent == -1);
  CHECK(max_depth(sub) == 2);
  CHECK_NOTHROW(check_tree(sub));
  CHECK_THROWS_AS(first_reposter_subtree(tree({})), ContractViolation);

  const auto m = measure(c);
  CHECK(m.size == 6);
  CHECK(m.max_depth == 3);
}

TEST_CASE("virality table groups by first reposter category") {
  std::vector<InfluenceRow> rows;
  for (std::uint64_t u = 0; u < 10; ++u) {
    rows.push_back(InfluenceRow{U(u), 0, 0, 0.0, u == 1 ? InfluenceCategory::very_high : InfluenceCategory::low});
  }
  const InfluenceTable t(rows);
  std::vector<Cascade> cs = {tree({-1, 0}), tree({-1, 0}), tree({-1}), tree({})};
  cs[2].nodes[0].reposter = U(5);
  auto table = metrics_by_first_reposter_influence(cs, t, 2);
  const auto& vh = table.rows[category_rank(InfluenceCategory::very_high)];
  CHECK(vh.count == 2);
  CHECK(vh.sv_count == 2);
  CHECK(*vh.mean_structural_virality == 1.0);  // subtree is a single edge
  CHECK(*vh.structural_virality_half_width == 0.0);
  CHECK(*vh.mean_max_depth == 1.0);
  const auto& low = table.rows[category_rank(InfluenceCategory::low)];
  CHECK(low.count == 1);
  CHECK(low.sv_count == 0);
  CHECK_FALSE(low.mean_structural_virality.has_value());
  CHECK(*low.mean_max_depth == 0.0);
  CHECK_FALSE(low.max_depth_half_width.has_value());

  auto strict = metrics_by_first_reposter_influence(cs, t, 3);
  CHECK(strict.rows[category_rank(InfluenceCategory::very_high)].count == 2);
  CHECK(strict.rows[category_rank(InfluenceCategory::low)].count == 0);
}
