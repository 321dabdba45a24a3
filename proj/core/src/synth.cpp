#include "cascadeflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "cascadeflow/errors.hpp"
#include "cascadeflow/influence.hpp"
#include "cascadeflow/io.hpp"

namespace cascadeflow {

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("synth config: " + msg); };
  if (n_users < 2) fail("n_users must be >= 2");
  if (!(follower_degree_exponent > 1.0)) fail("follower_degree_exponent must be > 1");
  if (!(mean_out_degree >= 1.0) || mean_out_degree >= static_cast<double>(n_users)) {
    fail("mean_out_degree must lie in [1, n_users)");
  }
  if (max_out_degree < 1) fail("max_out_degree must be >= 1");
  if (!(attractiveness_exponent >= 0.0)) fail("attractiveness_exponent must be >= 0");
  if (n_roots < 1) fail("n_roots must be >= 1");
  if (horizon_ms <= 0 || root_spread_ms <= 0) fail("horizon_ms and root_spread_ms must be > 0");
  // Every root needs its own millisecond inside the spread.
  if (static_cast<Millis>(n_roots) > root_spread_ms) fail("n_roots exceeds the distinct root timestamps available");
  if (!(base_repost_prob >= 0.0 && base_repost_prob < 1.0)) fail("base_repost_prob must lie in [0, 1)");
  if (!(prestige_beta >= 0.0)) fail("prestige_beta must be >= 0");
  if (!(content_appeal_sd >= 0.0)) fail("content_appeal_sd must be >= 0");
  if (mean_reaction_ms <= 0) fail("mean_reaction_ms must be > 0");
}

std::optional<RepostId> GroundTruth::parent_of(RepostId id) const {
  auto it = std::lower_bound(parents.begin(), parents.end(), id,
                             [](const TrueParent& p, RepostId x) { return p.repost_id < x; });
  if (it == parents.end() || it->repost_id != id) {
    throw ValidationError("ground truth has no repost " + std::to_string(id.value));
  }
  return it->parent;
}

namespace {

struct Graph {
  FollowerGraph graph;
  std::vector<double> attractiveness;
};

Graph build_graph(const SynthConfig& cfg, std::mt19937_64& rng) {
  const std::size_t n = cfg.n_users;
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), 0);
  std::shuffle(rank.begin(), rank.end(), rng);
  std::vector<double> attractiveness(n);
  for (std::size_t u = 0; u < n; ++u) {
    attractiveness[u] = std::pow(static_cast<double>(rank[u] + 1), -cfg.attractiveness_exponent);
  }
  std::discrete_distribution<std::size_t> pick(attractiveness.begin(), attractiveness.end());

  // Continuous Pareto with the requested mean when it exists, floored.
  const double a = cfg.follower_degree_exponent;
  const double x_min = a > 2.0 ? std::max(1.0, cfg.mean_out_degree * (a - 2.0) / (a - 1.0)) : 1.0;
  const auto cap = std::min(cfg.max_out_degree, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<FollowerGraph::Edge> edges;
  edges.reserve(static_cast<std::size_t>(cfg.mean_out_degree * static_cast<double>(n) * 1.1));
  std::unordered_set<std::size_t> chosen;
  for (std::size_t u = 0; u < n; ++u) {
    const double x = x_min * std::pow(1.0 - unit(rng), -1.0 / (a - 1.0));
    const auto degree = std::clamp<std::size_t>(static_cast<std::size_t>(x), 1, cap);
    chosen.clear();
    for (std::size_t attempts = 0; chosen.size() < degree && attempts < 50 * degree; ++attempts) {
      const auto v = pick(rng);
      if (v != u) chosen.insert(v);
    }
    std::vector<std::size_t> sorted(chosen.begin(), chosen.end());
    std::sort(sorted.begin(), sorted.end());
    for (auto v : sorted) edges.emplace_back(UserId{u}, UserId{v});
  }
  return {FollowerGraph::from_edges(std::move(edges), n), std::move(attractiveness)};
}

std::vector<InfluenceCategory> tiers_by_followers(const FollowerGraph& g) {
  std::vector<UserScore> scores(g.user_count());
  for (std::size_t u = 0; u < scores.size(); ++u) {
    scores[u] = UserScore{UserId{u}, 0, 0, static_cast<double>(g.followers(UserId{u}).size())};
  }
  const auto table = assign_categories(scores);
  std::vector<InfluenceCategory> tier(scores.size());
  for (const auto& row : table.rows()) tier[row.user.value] = row.category;
  return tier;
}

struct RawRepost {
  double time;
  std::size_t cascade;
  std::size_t seq;       // creation order within the cascade
  UserId user;
  std::int64_t parent;   // seq of the parent repost, -1 for the root
};

struct Pending {
  double time;
  std::uint64_t order;  // FIFO tiebreak for equal times
  UserId user;
  std::int64_t parent;
  std::uint64_t token;
  bool operator>(const Pending& o) const { return std::tie(time, order) > std::tie(o.time, o.order); }
};

}  // namespace

SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto [graph, attractiveness] = build_graph(cfg, rng);
  const auto tier = tiers_by_followers(graph);
  const std::size_t n = cfg.n_users;

  std::discrete_distribution<std::size_t> pick_author(attractiveness.begin(), attractiveness.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> reaction(1.0 / static_cast<double>(cfg.mean_reaction_ms));

  struct Root {
    double time;
    UserId author;
    double appeal;
  };
  std::vector<Root> roots(cfg.n_roots);
  for (auto& r : roots) {
    r.author = UserId{pick_author(rng)};
    r.time = unit(rng) * static_cast<double>(cfg.root_spread_ms);
    const double sd = cfg.content_appeal_sd;
    r.appeal = std::exp(sd * normal(rng) - 0.5 * sd * sd);
  }
  std::sort(roots.begin(), roots.end(), [](const Root& a, const Root& b) { return a.time < b.time; });

  std::vector<std::uint32_t> stamp(n, 0);
  std::vector<std::uint8_t> reposted(n, 0);
  std::vector<std::uint64_t> token(n, 0);
  std::vector<RawRepost> raw;

  for (std::size_t k = 0; k < roots.size(); ++k) {
    const auto& root = roots[k];
    const auto epoch = static_cast<std::uint32_t>(k + 1);
    const double stop = root.time + static_cast<double>(cfg.horizon_ms);
    std::priority_queue<Pending, std::vector<Pending>, std::greater<>> queue;
    std::uint64_t order = 0;
    std::size_t seq = 0;

    auto touch = [&](UserId u) {
      if (stamp[u.value] != epoch) {
        stamp[u.value] = epoch;
        reposted[u.value] = 0;
      }
    };
    auto expose_followers = [&](UserId sender, double t, std::int64_t parent) {
      const double boost = 1.0 + cfg.prestige_beta * static_cast<double>(category_rank(tier[sender.value])) / 5.0;
      const double p = std::min(1.0, cfg.base_repost_prob * root.appeal * boost);
      for (auto viewer : graph.followers(sender)) {
        if (viewer == root.author) continue;
        touch(viewer);
        if (reposted[viewer.value]) continue;
        const auto t_new = ++token[viewer.value];  // a newer view supersedes any pending one
        if (p > 0.0 && unit(rng) < p) {
          queue.push(Pending{t + reaction(rng), order++, viewer, parent, t_new});
        }
      }
    };

    expose_followers(root.author, root.time, -1);
    while (!queue.empty()) {
      const auto ev = queue.top();
      queue.pop();
      if (ev.time >= stop) break;
      if (ev.token != token[ev.user.value]) continue;
      touch(ev.user);
      if (reposted[ev.user.value]) continue;
      reposted[ev.user.value] = 1;
      const auto my_seq = static_cast<std::int64_t>(seq);
      raw.push_back(RawRepost{ev.time, k, seq++, ev.user, ev.parent});
      expose_followers(ev.user, ev.time, my_seq);
    }
    // Drop any tokens left pending past the horizon.
    while (!queue.empty()) {
      ++token[queue.top().user.value];
      queue.pop();
    }
  }

  // Map continuous times onto strictly increasing integer milliseconds,
  // preserving the global order of roots and reposts.
  struct Stamp {
    double time;
    std::size_t cascade;
    std::int64_t seq;  // -1 for the root
    std::size_t index;
  };
  std::vector<Stamp> all;
  all.reserve(roots.size() + raw.size());
  for (std::size_t k = 0; k < roots.size(); ++k) all.push_back({roots[k].time, k, -1, k});
  for (std::size_t i = 0; i < raw.size(); ++i) {
    all.push_back({raw[i].time, raw[i].cascade, static_cast<std::int64_t>(raw[i].seq), i});
  }
  std::sort(all.begin(), all.end(), [](const Stamp& a, const Stamp& b) {
    return std::tie(a.time, a.cascade, a.seq) < std::tie(b.time, b.cascade, b.seq);
  });

  SynthData out;
  out.posts.resize(roots.size());
  std::vector<Millis> repost_time(raw.size());
  std::vector<std::uint64_t> repost_id(raw.size());
  Millis prev = -1;
  std::uint64_t next_repost = 1;
  for (const auto& s : all) {
    const Millis t = std::max(static_cast<Millis>(std::llround(s.time)), prev + 1);
    prev = t;
    if (s.seq < 0) {
      out.posts[s.index] = PostEvent{PostId{s.index + 1}, roots[s.index].author, t, false};
    } else {
      repost_time[s.index] = t;
      repost_id[s.index] = next_repost++;
    }
  }

  // raw is grouped by cascade in seq order, so a parent seq resolves by offset.
  std::vector<std::size_t> cascade_start(roots.size() + 1, 0);
  for (const auto& r : raw) ++cascade_start[r.cascade + 1];
  for (std::size_t k = 0; k < roots.size(); ++k) cascade_start[k + 1] += cascade_start[k];

  out.reposts.reserve(raw.size());
  out.truth.parents.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    out.reposts.push_back(RepostEvent{RepostId{repost_id[i]}, r.user, PostId{r.cascade + 1}, repost_time[i]});
    std::optional<RepostId> parent;
    if (r.parent >= 0) parent = RepostId{repost_id[cascade_start[r.cascade] + static_cast<std::size_t>(r.parent)]};
    out.truth.parents.push_back(TrueParent{RepostId{repost_id[i]}, parent});
  }
  std::vector<std::size_t> order(out.reposts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.reposts[a].repost_id < out.reposts[b].repost_id;
  });
  {
    std::vector<RepostEvent> reposts(order.size());
    std::vector<TrueParent> parents(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      reposts[i] = out.reposts[order[i]];
      parents[i] = out.truth.parents[order[i]];
    }
    out.reposts = std::move(reposts);
    out.truth.parents = std::move(parents);
  }
  out.truth.tier = tier;
  out.graph = std::move(graph);
  for (std::size_t u = 0; u < n; ++u) {
    const auto id = out.directory.intern(std::to_string(u));
    out.directory.profile(id).follower_count = out.graph.followers(id).size();
  }
  return out;
}

void write_synth(const std::filesystem::path& dir, const SynthData& data) {
  std::filesystem::create_directories(dir);
  {
    io::AtomicFile f(dir / "users.ndjson");
    write_users(f.stream(), data.directory);
    f.commit();
  }
  {
    io::AtomicFile f(dir / "posts.ndjson");
    write_posts(f.stream(), data.posts, data.directory);
    f.commit();
  }
  {
    io::AtomicFile f(dir / "reposts.ndjson");
    write_reposts(f.stream(), data.reposts, data.directory);
    f.commit();
  }
  {
    io::AtomicFile f(dir / "follower_graph.csv");
    write_follower_graph(f.stream(), data.graph, data.directory);
    f.commit();
  }
  {
    io::AtomicFile f(dir / "ground_truth.csv");
    auto& out = f.stream();
    out << "repost_id,true_parent_id,tier\n";
    for (std::size_t i = 0; i < data.reposts.size(); ++i) {
      const auto& p = data.truth.parents[i];
      out << p.repost_id.value << ',';
      if (p.parent) {
        out << p.parent->value;
      } else {
        out << "ROOT";
      }
      out << ',' << to_string(data.truth.tier[data.reposts[i].reposter.value]) << '\n';
    }
    f.commit();
  }
}

std::vector<Cascade> cascades_from_truth(std::span<const PostEvent> posts,
                                         std::span<const RepostEvent> reposts,
                                         const GroundTruth& truth) {
  std::vector<std::size_t> order(posts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::pair{posts[a].timestamp, posts[a].post_id} < std::pair{posts[b].timestamp, posts[b].post_id};
  });
  std::vector<Cascade> out(posts.size());
  std::unordered_map<PostId, std::size_t> slot;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& p = posts[order[k]];
    out[k].root_post = p.post_id;
    out[k].root_author = p.author;
    out[k].root_time = p.timestamp;
    slot.emplace(p.post_id, k);
  }
  for (const auto& r : reposts) {
    out.at(slot.at(r.source_post_id)).nodes.push_back(CascadeNode{r.repost_id, r.reposter, r.timestamp, -1, false});
  }
  for (auto& c : out) {
    std::sort(c.nodes.begin(), c.nodes.end(), [](const CascadeNode& a, const CascadeNode& b) {
      return std::pair{a.timestamp, a.repost_id} < std::pair{b.timestamp, b.repost_id};
    });
    std::unordered_map<RepostId, std::int64_t> index;
    for (std::size_t i = 0; i < c.nodes.size(); ++i) index.emplace(c.nodes[i].repost_id, static_cast<std::int64_t>(i));
    for (auto& node : c.nodes) {
      if (auto parent = truth.parent_of(node.repost_id)) node.parent = index.at(*parent);
    }
  }
  return out;
}

std::array<ViewCount, kCategorySlots> oracle_crp(std::span<const PostEvent> posts,
                                                 std::span<const RepostEvent> reposts,
                                                 const FollowerGraph& graph, const GroundTruth& truth,
                                                 const std::function<std::size_t(UserId)>& slot_of,
                                                 const TimeWindow& window, std::size_t max_exposures) {
  std::size_t candidate_views = 0;
  for (const auto& r : reposts) candidate_views += graph.followers(r.reposter).size();
  if (candidate_views > max_exposures) {
    throw ValidationError("oracle_crp: " + std::to_string(candidate_views) +
                          " candidate views exceed the limit of " + std::to_string(max_exposures));
  }

  std::unordered_map<PostId, Millis> root_time;
  for (const auto& p : posts) root_time.emplace(p.post_id, p.timestamp);

  // Viewer activity and each user's earliest repost of each post.
  std::set<UserId> active;
  std::map<std::pair<PostId, UserId>, Millis> first_repost;
  for (const auto& r : reposts) {
    active.insert(r.reposter);
    auto [it, fresh] = first_repost.try_emplace({r.source_post_id, r.reposter}, r.timestamp);
    if (!fresh) it->second = std::min(it->second, r.timestamp);
  }
  // (parent repost, child reposter) pairs from the true parents.
  std::unordered_map<RepostId, UserId> reposter_of;
  for (const auto& r : reposts) reposter_of.emplace(r.repost_id, r.reposter);
  std::set<std::pair<RepostId, UserId>> credited;
  for (const auto& p : truth.parents) {
    if (p.parent) credited.emplace(*p.parent, reposter_of.at(p.repost_id));
  }

  std::array<ViewCount, kCategorySlots> counts{};
  for (const auto& r : reposts) {
    const Millis elapsed = r.timestamp - root_time.at(r.source_post_id);
    if (!window.contains(elapsed)) continue;
    for (const auto viewer : graph.followers(r.reposter)) {
      if (!active.contains(viewer)) continue;
      auto own = first_repost.find({r.source_post_id, viewer});
      if (own != first_repost.end() && r.timestamp >= own->second) continue;
      counts.at(slot_of(r.reposter)).add(credited.contains({r.repost_id, viewer}));
    }
  }
  return counts;
}

}  // namespace cascadeflow
