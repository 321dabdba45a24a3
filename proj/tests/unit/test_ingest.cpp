#include <doctest.h>

#include <fstream>
#include <sstream>
#include <tuple>
#include <zlib.h>

#include "cascadeflow/errors.hpp"
#include "cascadeflow/ingest.hpp"
#include "cascadeflow/io.hpp"
#include "test_util.hpp"

using namespace cascadeflow;
using testutil::scratch_dir;
using testutil::write_file;

namespace {

void write_gzip(const std::filesystem::path& p, const std::string& text) {
  gzFile f = gzopen(p.string().c_str(), "wb");
  REQUIRE(f != nullptr);
  gzwrite(f, text.data(), static_cast<unsigned>(text.size()));
  gzclose(f);
}

}  // namespace

TEST_CASE("posts load in file order with official flags") {
  const auto dir = scratch_dir("ingest_posts");
  write_file(dir / "posts.ndjson",
             "{\"post_id\":1,\"author_id\":7,\"timestamp_ms\":0}\n"
             "{\"post_id\":\"3\",\"author_id\":\"acme\",\"timestamp_ms\":5,\"profile\":\"The OFFICIAL account\"}\n"
             "\n"
             "{\"post_id\":2,\"author_id\":8,\"timestamp_ms\":2,\"name\":\"ニュース公式\"}\n");
  UserDirectory d;
  auto loaded = load_posts(dir / "posts.ndjson", d, OfficialAccountFilter::with_default_keywords());
  REQUIRE(loaded.events.size() == 3);
  CHECK(loaded.errors.empty());
  CHECK(loaded.events[0] == PostEvent{PostId{1}, *d.find("7"), 0, false});
  CHECK(loaded.events[1].post_id == PostId{3});
  CHECK(loaded.events[1].is_official);
  CHECK(loaded.events[2].is_official);
  CHECK(d.external_id(loaded.events[1].author) == "acme");
}

TEST_CASE("official filter is case-insensitive and idempotent") {
  const auto f = OfficialAccountFilter::with_default_keywords();
  CHECK(f.matches("", "", "Official news"));
  CHECK(f.matches("", "OfFiCiAl_bot", ""));
  CHECK_FALSE(f.matches("offical", "", ""));
  CHECK(f.matches("", "", "公式アカウント"));
  UserDirectory d;
  const auto u = d.intern("x");
  d.profile(u).profile = "official";
  const auto a = d.official_users(f);
  const auto b = d.official_users(f);
  CHECK(a.contains(u));
  CHECK(a.count() == b.count());
  CHECK_FALSE(OfficialAccountFilter{}.matches("official", "official", "official"));
}

TEST_CASE("truncated line is reported with its number") {
  const auto dir = scratch_dir("ingest_truncated");
  write_file(dir / "posts.ndjson",
             "{\"post_id\":1,\"author_id\":7,\"timestamp_ms\":0}\n"
             "{\"post_id\":2,\"author_id\":7,\"timest\n"
             "{\"post_id\":3,\"author_id\":7}\n");
  UserDirectory d;
  auto loaded = load_posts(dir / "posts.ndjson", d, {});
  CHECK(loaded.events.size() == 1);
  REQUIRE(loaded.errors.size() == 2);
  CHECK(loaded.errors[0].line == 2);
  CHECK(loaded.errors[1].line == 3);
  CHECK(loaded.errors[1].message.find("timestamp_ms") != std::string::npos);

  UserDirectory strict;
  try {
    (void)load_posts(dir / "posts.ndjson", strict, {}, MalformedPolicy::fail_fast);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("reposts are sorted and duplicates name both lines") {
  const auto dir = scratch_dir("ingest_reposts");
  write_file(dir / "reposts.ndjson",
             "{\"repost_id\":10,\"user_id\":3,\"source_post_id\":1,\"timestamp_ms\":100}\n"
             "{\"repost_id\":11,\"user_id\":4,\"source_post_id\":1,\"timestamp_ms\":50}\n"
             "{\"repost_id\":10,\"user_id\":5,\"source_post_id\":1,\"timestamp_ms\":70}\n");
  UserDirectory d;
  auto loaded = load_reposts(dir / "reposts.ndjson", d);
  REQUIRE(loaded.events.size() == 2);
  CHECK(loaded.events[0].repost_id == RepostId{11});
  CHECK(loaded.events[1] == RepostEvent{RepostId{10}, *d.find("3"), PostId{1}, 100});
  REQUIRE(loaded.errors.size() == 1);
  CHECK(loaded.errors[0].message.find("lines 1 and 3") != std::string::npos);

  write_file(dir / "empty.ndjson", "");
  UserDirectory e;
  CHECK(load_reposts(dir / "empty.ndjson", e).events.empty());
}

TEST_CASE("follower graph csv with and without header") {
  const auto dir = scratch_dir("ingest_graph");
  write_file(dir / "g1.csv", "follower_id,followee_id\n1,2\n1,2\n3,1\n5,5\n");
  write_file(dir / "g2.csv", "1,2\r\n3,1\r\n");
  write_file(dir / "g3.csv", "");
  write_file(dir / "bad.csv", "1;2\n1,2,3\n");
  for (const char* name : {"g1.csv", "g2.csv"}) {
    UserDirectory d;
    auto g = load_follower_graph(dir / name, d);
    const auto one = *d.find("1");
    CHECK(g.graph.followees(one).size() == 1);
    CHECK(g.graph.followees(one)[0] == *d.find("2"));
    CHECK(g.graph.followers(one)[0] == *d.find("3"));
    CHECK(g.errors.empty());
  }
  UserDirectory d1;
  CHECK(load_follower_graph(dir / "g1.csv", d1).self_edges_dropped == 1);
  UserDirectory d3;
  CHECK(load_follower_graph(dir / "g3.csv", d3).graph.edge_count() == 0);
  UserDirectory d4;
  CHECK(load_follower_graph(dir / "bad.csv", d4).errors.size() == 2);
}

TEST_CASE("gzip input is detected from the magic bytes") {
  const auto dir = scratch_dir("ingest_gzip");
  write_gzip(dir / "reposts.data", "{\"repost_id\":1,\"user_id\":3,\"source_post_id\":1,\"timestamp_ms\":9}\n");
  UserDirectory d;
  auto loaded = load_reposts(dir / "reposts.data", d);
  REQUIRE(loaded.events.size() == 1);
  CHECK(loaded.events[0].timestamp == 9);
  io::LineReader r(dir / "reposts.data");
  CHECK(r.compressed());
}

TEST_CASE("missing files raise input errors") {
  UserDirectory d;
  CHECK_THROWS_AS(load_posts("/nonexistent/posts.ndjson", d, {}), InputError);
  CHECK_THROWS_AS(load_follower_graph("/nonexistent/graph.csv", d), InputError);
}

TEST_CASE("load, write and load again round trips") {
  const auto dir = scratch_dir("ingest_roundtrip");
  write_file(dir / "users.ndjson",
             "{\"user_id\":\"alice\",\"name\":\"Alice\",\"followers_count\":3,\"topic\":\"t1\"}\n");
  write_file(dir / "posts.ndjson",
             "{\"post_id\":5,\"author_id\":\"alice\",\"timestamp_ms\":10,\"profile\":\"hi, \\\"there\\\"\"}\n"
             "{\"post_id\":6,\"author_id\":42,\"timestamp_ms\":11}\n");
  write_file(dir / "reposts.ndjson",
             "{\"repost_id\":1,\"user_id\":42,\"source_post_id\":5,\"timestamp_ms\":12}\n"
             "{\"repost_id\":2,\"user_id\":\"bob\",\"source_post_id\":5,\"timestamp_ms\":12}\n");
  write_file(dir / "graph.csv", "42,alice\nbob,42\nbob,alice\n");

  auto load_all = [](const std::filesystem::path& d, UserDirectory& dirx) {
    (void)load_users(d / "users.ndjson", dirx);
    auto p = load_posts(d / "posts.ndjson", dirx, OfficialAccountFilter::with_default_keywords());
    auto r = load_reposts(d / "reposts.ndjson", dirx);
    auto g = load_follower_graph(d / "graph.csv", dirx);
    return std::tuple{p.events, r.events, g.graph};
  };
  UserDirectory first;
  auto [p1, r1, g1] = load_all(dir, first);

  const auto out = scratch_dir("ingest_roundtrip_out");
  {
    std::ofstream u(out / "users.ndjson"), p(out / "posts.ndjson"), r(out / "reposts.ndjson"), g(out / "graph.csv");
    write_users(u, first);
    write_posts(p, p1, first);
    write_reposts(r, r1, first);
    write_follower_graph(g, g1, first);
  }
  UserDirectory second;
  auto [p2, r2, g2] = load_all(out, second);
  CHECK(first == second);
  CHECK(p1 == p2);
  CHECK(r1 == r2);
  CHECK(g1 == g2);
  CHECK(second.profile(*second.find("alice")).topic == "t1");
}

TEST_CASE("follower counts fill from the graph") {
  UserDirectory d;
  const auto a = d.intern("a");
  const auto b = d.intern("b");
  const auto c = d.intern("c");
  d.profile(c).follower_count = 99;
  auto g = FollowerGraph::from_edges({{a, b}, {c, b}}, d.size());
  CHECK_FALSE(d.follower_counts_match(g));
  d.fill_follower_counts(g);
  CHECK(d.profile(b).follower_count == 2u);
  CHECK(d.profile(a).follower_count == 0u);
  CHECK(d.profile(c).follower_count == 99u);
}

TEST_CASE("csv escaping and number formatting") {
  CHECK(io::csv_escape("plain") == "plain");
  CHECK(io::csv_escape("a,b") == "\"a,b\"");
  CHECK(io::csv_escape("say \"x\"") == "\"say \"\"x\"\"\"");
  CHECK(io::format_double(0.5) == "0.5");
  CHECK(io::format_double(2.0 / 3.0) == "0.6666666666666666");
  CHECK(io::format_optional(std::nullopt).empty());
}

TEST_CASE("atomic file leaves the target untouched until commit") {
  const auto dir = scratch_dir("ingest_atomic");
  write_file(dir / "out.csv", "old\n");
  {
    io::AtomicFile f(dir / "out.csv");
    f.stream() << "new\n";
  }
  CHECK(testutil::read_file(dir / "out.csv") == "old\n");
  {
    io::AtomicFile f(dir / "out.csv");
    f.stream() << "new\n";
    f.commit();
  }
  CHECK(testutil::read_file(dir / "out.csv") == "new\n");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  CHECK(files == 1);
}

TEST_CASE("sha256 of a known string") {
  const auto dir = scratch_dir("ingest_sha");
  write_file(dir / "abc", "abc");
  CHECK(io::sha256_file(dir / "abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
