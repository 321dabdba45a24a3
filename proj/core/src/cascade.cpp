#include "cascadeflow/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "cascadeflow/errors.hpp"
#include "cascadeflow/parallel.hpp"

namespace cascadeflow {

namespace {

/// Per-worker dense scratch. `stamp` marks which entries belong to the
/// cascade currently being built so nothing needs clearing between cascades.
struct Scratch {
  std::vector<std::uint32_t> stamp;
  std::vector<std::int64_t> latest;  // most recent node index by user
  std::vector<UserId> participants;
  std::uint32_t epoch = 0;

  explicit Scratch(std::size_t users) : stamp(users, 0), latest(users, -1) {}

  void begin() {
    if (++epoch == 0) {
      std::fill(stamp.begin(), stamp.end(), 0);
      epoch = 1;
    }
    participants.clear();
  }
  std::int64_t latest_of(UserId u) const {
    return u.value < stamp.size() && stamp[u.value] == epoch ? latest[u.value] : -1;
  }
  void record(UserId u, std::int64_t node) {
    if (stamp[u.value] != epoch) {
      stamp[u.value] = epoch;
      participants.push_back(u);
    }
    latest[u.value] = node;
  }
};

bool node_later(const CascadeNode& a, const CascadeNode& b) {
  return std::pair{a.timestamp, a.repost_id} > std::pair{b.timestamp, b.repost_id};
}

void link_cascade(Cascade& c, const FollowerGraph& graph, Scratch& scratch) {
  scratch.begin();
  auto& nodes = c.nodes;
  for (std::size_t begin = 0; begin < nodes.size();) {
    std::size_t end = begin + 1;
    while (end < nodes.size() && nodes[end].timestamp == nodes[begin].timestamp) ++end;

    // Nodes sharing a timestamp cannot see each other: resolve the whole
    // group against the state before it, then publish the group.
    for (std::size_t i = begin; i < end; ++i) {
      auto& node = nodes[i];
      const auto followees = graph.followees(node.reposter);
      std::int64_t best = -1;
      auto consider = [&](std::int64_t cand) {
        if (cand >= 0 && (best < 0 || node_later(nodes[cand], nodes[best]))) best = cand;
      };
      if (followees.size() <= scratch.participants.size()) {
        for (auto v : followees) consider(scratch.latest_of(v));
      } else {
        for (auto v : scratch.participants) {
          if (std::binary_search(followees.begin(), followees.end(), v)) consider(scratch.latest_of(v));
        }
      }
      node.parent = best;
      node.root_fallback = best < 0 && !graph.follows(node.reposter, c.root_author);
    }
    for (std::size_t i = begin; i < end; ++i) {
      scratch.record(nodes[i].reposter, static_cast<std::int64_t>(i));
    }
    begin = end;
  }
}

}  // namespace

CascadeBuild build_cascades(std::span<const PostEvent> posts, std::span<const RepostEvent> reposts,
                            const FollowerGraph& graph, const UserSet& official,
                            std::size_t workers) {
  CascadeBuild out;
  std::vector<std::size_t> order(posts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::pair{posts[a].timestamp, posts[a].post_id} < std::pair{posts[b].timestamp, posts[b].post_id};
  });

  std::unordered_map<PostId, std::size_t> slot;
  slot.reserve(posts.size());
  out.cascades.resize(posts.size());
  std::size_t user_count = graph.user_count();
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& p = posts[order[k]];
    auto& c = out.cascades[k];
    c.root_post = p.post_id;
    c.root_author = p.author;
    c.root_time = p.timestamp;
    if (!slot.emplace(p.post_id, k).second) {
      throw ValidationError("build_cascades: duplicate post id " + std::to_string(p.post_id.value));
    }
    user_count = std::max<std::size_t>(user_count, p.author.value + 1);
  }

  constexpr std::size_t kMaxDiagnostics = 20;
  auto diagnose = [&](std::string msg) {
    if (out.diagnostics.size() < kMaxDiagnostics) out.diagnostics.push_back(std::move(msg));
  };
  for (const auto& r : reposts) {
    if (official.contains(r.reposter)) {
      ++out.official_reposts_dropped;
      continue;
    }
    auto it = slot.find(r.source_post_id);
    if (it == slot.end()) {
      ++out.dangling_reposts;
      diagnose("repost " + std::to_string(r.repost_id.value) + " references unknown post " +
               std::to_string(r.source_post_id.value));
      continue;
    }
    auto& c = out.cascades[it->second];
    if (r.timestamp < c.root_time) {
      ++out.reposts_before_root;
      diagnose("repost " + std::to_string(r.repost_id.value) + " at " + std::to_string(r.timestamp) +
               " precedes its source post at " + std::to_string(c.root_time) + "; rejected");
      continue;
    }
    user_count = std::max<std::size_t>(user_count, r.reposter.value + 1);
    c.nodes.push_back(CascadeNode{r.repost_id, r.reposter, r.timestamp, -1, false});
  }

  const auto n_workers = effective_workers(workers);
  std::vector<Scratch> scratch;
  scratch.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) scratch.emplace_back(user_count);

  std::vector<std::size_t> fallbacks(out.cascades.size(), 0);
  parallel_for(out.cascades.size(), n_workers, [&](std::size_t w, std::size_t k) {
    auto& c = out.cascades[k];
    std::sort(c.nodes.begin(), c.nodes.end(), [](const CascadeNode& a, const CascadeNode& b) {
      return std::pair{a.timestamp, a.repost_id} < std::pair{b.timestamp, b.repost_id};
    });
    link_cascade(c, graph, scratch[w]);
    for (const auto& n : c.nodes) fallbacks[k] += n.root_fallback ? 1 : 0;
  });
  for (auto f : fallbacks) out.fallback_attachments += f;
  return out;
}

void check_tree(const Cascade& c) {
  for (std::size_t i = 0; i < c.nodes.size(); ++i) {
    const auto& n = c.nodes[i];
    const Millis parent_time = n.parent < 0 ? c.root_time : c.nodes[n.parent].timestamp;
    if (n.parent >= static_cast<std::int64_t>(i) || n.parent < -1 || parent_time > n.timestamp) {
      throw InvariantError("cascade " + std::to_string(c.root_post.value) + ": node " +
                           std::to_string(n.repost_id.value) + " has an invalid parent");
    }
  }
}

std::size_t max_depth(const Cascade& c) {
  std::vector<std::size_t> depth(c.nodes.size());
  std::size_t best = 0;
  for (std::size_t i = 0; i < c.nodes.size(); ++i) {
    const auto p = c.nodes[i].parent;
    depth[i] = (p < 0 ? 0 : depth[static_cast<std::size_t>(p)]) + 1;
    best = std::max(best, depth[i]);
  }
  return best;
}

std::optional<double> structural_virality(const Cascade& c) {
  const std::size_t n = c.size();
  if (n < 2) return std::nullopt;
  // Wiener index of a tree: each edge separates s nodes from n - s, so it
  // lies on s * (n - s) shortest paths. Children follow parents in index
  // order, so a reverse sweep accumulates subtree sizes.
  std::vector<std::uint64_t> sub(c.nodes.size(), 1);
  long double wiener = 0;
  for (std::size_t i = c.nodes.size(); i-- > 0;) {
    wiener += static_cast<long double>(sub[i]) * static_cast<long double>(n - sub[i]);
    if (const auto p = c.nodes[i].parent; p >= 0) sub[static_cast<std::size_t>(p)] += sub[i];
  }
  const long double pairs = static_cast<long double>(n) * static_cast<long double>(n - 1) / 2;
  return static_cast<double>(wiener / pairs);
}

Cascade first_reposter_subtree(const Cascade& c) {
  if (c.nodes.empty()) {
    throw ContractViolation("first_reposter_subtree: cascade " + std::to_string(c.root_post.value) +
                            " has no reposts");
  }
  Cascade sub;
  sub.root_post = c.root_post;
  sub.root_author = c.nodes[0].reposter;
  sub.root_time = c.nodes[0].timestamp;

  // new_index[i]: -2 outside the subtree, -1 for the new root, else index.
  std::vector<std::int64_t> new_index(c.nodes.size(), -2);
  new_index[0] = -1;
  for (std::size_t i = 1; i < c.nodes.size(); ++i) {
    const auto p = c.nodes[i].parent;
    if (p < 0 || new_index[static_cast<std::size_t>(p)] == -2) continue;
    auto node = c.nodes[i];
    node.parent = new_index[static_cast<std::size_t>(p)];
    new_index[i] = static_cast<std::int64_t>(sub.nodes.size());
    sub.nodes.push_back(node);
  }
  return sub;
}

CascadeMetrics measure(const Cascade& c) {
  return CascadeMetrics{c.size(), max_depth(c), structural_virality(c)};
}

namespace {

// Welford running mean / variance.
struct Moments {
  std::size_t n = 0;
  double mean_ = 0;
  double m2 = 0;

  void add(double x) {
    ++n;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n);
    m2 += delta * (x - mean_);
  }
  std::optional<double> mean() const {
    if (n == 0) return std::nullopt;
    return mean_;
  }
  std::optional<double> half_width() const {
    if (n < 2) return std::nullopt;
    const double var = m2 / static_cast<double>(n - 1);
    return 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(n));
  }
};

}  // namespace

ViralityTable metrics_by_first_reposter_influence(std::span<const Cascade> cascades,
                                                  const InfluenceTable& influence,
                                                  std::size_t min_size) {
  if (min_size < 2) throw ContractViolation("metrics_by_first_reposter_influence: min_size must be >= 2");
  std::array<Moments, kCategoryCount> sv{};
  std::array<Moments, kCategoryCount> depth{};
  std::array<std::size_t, kCategoryCount> count{};
  ViralityTable table;
  for (const auto& c : cascades) {
    if (c.size() < min_size) continue;
    const auto category = influence.category_of(*c.first_reposter());
    if (!category) {
      ++table.unclassified;
      continue;
    }
    const auto k = category_rank(*category);
    const auto m = measure(first_reposter_subtree(c));
    ++count[k];
    depth[k].add(static_cast<double>(m.max_depth));
    if (m.structural_virality) sv[k].add(*m.structural_virality);
  }
  for (auto category : kAllCategories) {
    const auto k = category_rank(category);
    table.rows[k] = ViralityRow{category,          count[k],           sv[k].n,
                                sv[k].mean(),      sv[k].half_width(), depth[k].mean(),
                                depth[k].half_width()};
  }
  return table;
}

}  // namespace cascadeflow
