#include "cascadeflow/timeline.hpp"

#include <algorithm>
#include <tuple>
#include <unordered_map>

#include "cascadeflow/errors.hpp"
#include "cascadeflow/parallel.hpp"

namespace cascadeflow {

bool exposure_before(const ExposureRecord& a, const ExposureRecord& b) {
  return std::tie(a.viewer, a.exposure_time, a.root_post, a.sender_repost_id) <
         std::tie(b.viewer, b.exposure_time, b.root_post, b.sender_repost_id);
}

UserSet active_reposters(std::span<const Cascade> cascades, std::size_t user_count) {
  UserSet active(user_count);
  for (const auto& c : cascades) {
    for (const auto& n : c.nodes) active.insert(n.reposter);
  }
  return active;
}

ExposureBuilder::ExposureBuilder(const FollowerGraph& graph, const UserSet& official,
                                 const UserSet& active, ExposureOptions options)
    : graph_(graph),
      official_(official),
      active_(active),
      options_(options),
      first_stamp_(graph.user_count(), 0),
      first_time_(graph.user_count(), 0),
      child_mark_(graph.user_count(), 0) {}

void ExposureBuilder::build(const Cascade& c, std::vector<Outcome>& out) {
  const auto& nodes = c.nodes;
  if (nodes.empty()) return;
  if (++epoch_ == 0) {
    std::fill(first_stamp_.begin(), first_stamp_.end(), 0);
    epoch_ = 1;
  }
  // Viewers are followers in the graph, so graph-sized scratch covers them;
  // reposters outside the graph have no followers and never view anything.
  const auto n_users = first_stamp_.size();
  for (const auto& n : nodes) {
    if (n.reposter.value < n_users && first_stamp_[n.reposter.value] != epoch_) {
      first_stamp_[n.reposter.value] = epoch_;
      first_time_[n.reposter.value] = n.timestamp;
    }
  }

  child_offsets_.assign(nodes.size() + 1, 0);
  for (const auto& n : nodes) {
    if (n.parent >= 0) ++child_offsets_[static_cast<std::size_t>(n.parent) + 1];
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) child_offsets_[i + 1] += child_offsets_[i];
  children_.resize(child_offsets_.back());
  {
    auto cursor = child_offsets_;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].parent >= 0) children_[cursor[static_cast<std::size_t>(nodes[i].parent)]++] = i;
    }
  }
  if (options_.dedup_same_sender) seen_pairs_.clear();

  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const auto& sender = nodes[j];
    if (official_.contains(sender.reposter)) continue;
    const Millis elapsed = sender.timestamp - c.root_time;
    if (!options_.window.contains(elapsed)) continue;
    const auto followers = graph_.followers(sender.reposter);
    if (followers.empty()) continue;

    const std::uint64_t mark = ++marker_;
    for (std::size_t k = child_offsets_[j]; k < child_offsets_[j + 1]; ++k) {
      const auto child = nodes[children_[k]].reposter;
      if (child.value < n_users) child_mark_[child.value] = mark;
    }
    for (const auto viewer : followers) {
      if (!active_.contains(viewer)) continue;
      if (first_stamp_[viewer.value] == epoch_ && sender.timestamp >= first_time_[viewer.value]) {
        continue;
      }
      if (options_.dedup_same_sender) {
        if (!seen_pairs_.emplace(viewer.value, sender.reposter.value).second) continue;
      }
      out.push_back(Outcome{
          ExposureRecord{viewer, sender.reposter, c.root_post, sender.repost_id, sender.timestamp, elapsed},
          child_mark_[viewer.value] == mark});
    }
  }
}

std::vector<Outcome> build_outcomes(std::span<const Cascade> cascades, const FollowerGraph& graph,
                                    const UserSet& official, const ExposureOptions& options,
                                    std::size_t workers) {
  const auto active = active_reposters(cascades, graph.user_count());
  const auto n_workers = effective_workers(workers);
  std::vector<ExposureBuilder> builders;
  builders.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) builders.emplace_back(graph, official, active, options);

  std::vector<std::vector<Outcome>> per_cascade(cascades.size());
  parallel_for(cascades.size(), n_workers, [&](std::size_t w, std::size_t i) {
    builders[w].build(cascades[i], per_cascade[i]);
  });
  std::size_t total = 0;
  for (const auto& v : per_cascade) total += v.size();
  std::vector<Outcome> out;
  out.reserve(total);
  for (auto& v : per_cascade) {
    out.insert(out.end(), v.begin(), v.end());
    std::vector<Outcome>().swap(v);
  }
  std::sort(out.begin(), out.end(),
            [](const Outcome& a, const Outcome& b) { return exposure_before(a.exposure, b.exposure); });
  return out;
}

std::vector<ExposureRecord> build_exposures(std::span<const Cascade> cascades,
                                            const FollowerGraph& graph, const UserSet& official,
                                            const ExposureOptions& options, std::size_t workers) {
  const auto outcomes = build_outcomes(cascades, graph, official, options, workers);
  std::vector<ExposureRecord> out;
  out.reserve(outcomes.size());
  for (const auto& o : outcomes) out.push_back(o.exposure);
  return out;
}

std::vector<Outcome> resolve_repost_outcome(std::span<const ExposureRecord> exposures,
                                            std::span<const Cascade> cascades) {
  std::unordered_map<PostId, const Cascade*> by_root;
  by_root.reserve(cascades.size());
  for (const auto& c : cascades) by_root.emplace(c.root_post, &c);

  // (parent repost id, child reposter) pairs, built lazily per cascade.
  struct PairHash {
    std::size_t operator()(const std::pair<std::uint64_t, std::uint64_t>& p) const noexcept {
      return std::hash<std::uint64_t>{}(p.first * 0x9e3779b97f4a7c15ULL ^ p.second);
    }
  };
  std::unordered_map<const Cascade*, std::unordered_set<std::pair<std::uint64_t, std::uint64_t>, PairHash>>
      edges;

  std::vector<Outcome> out;
  out.reserve(exposures.size());
  for (const auto& e : exposures) {
    auto it = by_root.find(e.root_post);
    if (it == by_root.end()) {
      throw ValidationError("exposure references unknown cascade " + std::to_string(e.root_post.value));
    }
    const Cascade* c = it->second;
    auto [slot, fresh] = edges.try_emplace(c);
    if (fresh) {
      for (const auto& n : c->nodes) {
        if (n.parent >= 0) {
          slot->second.emplace(c->nodes[static_cast<std::size_t>(n.parent)].repost_id.value, n.reposter.value);
        }
      }
    }
    out.push_back(Outcome{e, slot->second.contains({e.sender_repost_id.value, e.viewer.value})});
  }
  return out;
}

std::vector<TimelineStats> timeline_stats(std::span<const ExposureRecord> exposures) {
  std::unordered_map<UserId, std::pair<std::uint64_t, std::unordered_set<PostId>>> acc;
  for (const auto& e : exposures) {
    auto& [total, posts] = acc[e.viewer];
    ++total;
    posts.insert(e.root_post);
  }
  std::vector<TimelineStats> out;
  out.reserve(acc.size());
  for (const auto& [viewer, v] : acc) out.push_back({viewer, v.first, v.second.size()});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.viewer < b.viewer; });
  return out;
}

}  // namespace cascadeflow
