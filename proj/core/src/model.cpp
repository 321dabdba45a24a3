#include "cascadeflow/model.hpp"

#include <algorithm>
#include <charconv>
#include <string>
#include <unordered_map>

#include "cascadeflow/errors.hpp"

namespace cascadeflow {

namespace {

std::vector<std::size_t> build_csr(std::vector<FollowerGraph::Edge>& edges, std::size_t n,
                                   std::vector<UserId>& targets) {
  std::sort(edges.begin(), edges.end());
  std::vector<std::size_t> offsets(n + 1, 0);
  for (const auto& [src, dst] : edges) ++offsets[src.value + 1];
  for (std::size_t i = 0; i < n; ++i) offsets[i + 1] += offsets[i];
  targets.resize(edges.size());
  for (std::size_t i = 0; i < edges.size(); ++i) targets[i] = edges[i].second;
  return offsets;
}

}  // namespace

FollowerGraph FollowerGraph::from_edges(std::vector<Edge> edges, std::size_t user_count,
                                        std::size_t* self_edges_dropped) {
  const auto before = edges.size();
  std::erase_if(edges, [](const Edge& e) { return e.first == e.second; });
  if (self_edges_dropped) *self_edges_dropped = before - edges.size();

  for (const auto& [a, b] : edges) {
    user_count = std::max<std::size_t>(user_count, std::max(a.value, b.value) + 1);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  FollowerGraph g;
  g.user_count_ = user_count;
  g.followee_offsets_ = build_csr(edges, user_count, g.followees_);

  for (auto& e : edges) std::swap(e.first, e.second);
  g.follower_offsets_ = build_csr(edges, user_count, g.followers_);
  return g;
}

std::span<const UserId> FollowerGraph::followees(UserId u) const {
  if (u.value >= user_count_) return {};
  return {followees_.data() + followee_offsets_[u.value],
          followee_offsets_[u.value + 1] - followee_offsets_[u.value]};
}

std::span<const UserId> FollowerGraph::followers(UserId u) const {
  if (u.value >= user_count_) return {};
  return {followers_.data() + follower_offsets_[u.value],
          follower_offsets_[u.value + 1] - follower_offsets_[u.value]};
}

bool FollowerGraph::follows(UserId follower, UserId followee) const {
  auto out = followees(follower);
  return std::binary_search(out.begin(), out.end(), followee);
}

std::vector<FollowerGraph::Edge> FollowerGraph::edges() const {
  std::vector<Edge> out;
  out.reserve(followees_.size());
  for (std::size_t u = 0; u < user_count_; ++u) {
    for (auto v : followees(UserId{u})) out.emplace_back(UserId{u}, v);
  }
  return out;
}

std::string_view to_string(InfluenceCategory c) {
  switch (c) {
    case InfluenceCategory::low: return "low";
    case InfluenceCategory::lower_mid: return "lower_mid";
    case InfluenceCategory::mid: return "mid";
    case InfluenceCategory::upper_mid: return "upper_mid";
    case InfluenceCategory::high: return "high";
    case InfluenceCategory::very_high: return "very_high";
  }
  return "unknown";
}

std::optional<InfluenceCategory> parse_category(std::string_view text) {
  for (auto c : kAllCategories) {
    if (to_string(c) == text) return c;
  }
  return std::nullopt;
}

TimeWindow::TimeWindow(Millis start_offset, Millis end_offset)
    : start_(start_offset), end_(end_offset) {
  if (start_offset < 0 || start_offset >= end_offset) {
    throw ValidationError("time window requires 0 <= start < end, got [" +
                          std::to_string(start_offset) + ", " + std::to_string(end_offset) + ")");
  }
}

namespace {

std::optional<Millis> parse_millis(std::string_view s) {
  Millis v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

TimeWindow TimeWindow::parse(std::string_view text) {
  static const std::pair<std::string_view, Millis> presets[] = {
      {"30m", 30 * kMinute}, {"1h", kHour}, {"3h", 3 * kHour}, {"6h", 6 * kHour}, {"24h", 24 * kHour},
  };
  for (const auto& [name, len] : presets) {
    if (text == name) return first(len);
  }
  if (auto colon = text.find(':'); colon != std::string_view::npos) {
    auto a = parse_millis(text.substr(0, colon));
    auto b = parse_millis(text.substr(colon + 1));
    if (a && b) return TimeWindow(*a, *b);
  } else if (auto len = parse_millis(text)) {
    return first(*len);
  }
  throw ValidationError("unrecognised time window '" + std::string(text) +
                        "' (expected 30m, 1h, 3h, 6h, 24h, <ms> or <start_ms>:<end_ms>)");
}

ValidationReport validate_event_stream(std::span<const PostEvent> posts,
                                       std::span<const RepostEvent> reposts) {
  ValidationReport report;
  std::unordered_map<PostId, Millis> post_time;
  post_time.reserve(posts.size());
  for (const auto& p : posts) {
    if (p.timestamp < 0) {
      report.negative_timestamps.push_back({p.post_id.value, "post timestamp < 0"});
    }
    if (!post_time.emplace(p.post_id, p.timestamp).second) {
      report.duplicate_post_ids.push_back({p.post_id.value, "post id appears more than once"});
    }
  }

  std::unordered_map<RepostId, bool> seen;
  seen.reserve(reposts.size());
  for (const auto& r : reposts) {
    if (r.timestamp < 0) {
      report.negative_timestamps.push_back({r.repost_id.value, "repost timestamp < 0"});
    }
    if (!seen.emplace(r.repost_id, true).second) {
      report.duplicate_repost_ids.push_back({r.repost_id.value, "repost id appears more than once"});
    }
    auto it = post_time.find(r.source_post_id);
    if (it == post_time.end()) {
      report.dangling_sources.push_back(
          {r.repost_id.value, "unknown source post " + std::to_string(r.source_post_id.value)});
    } else if (r.timestamp < it->second) {
      report.time_inversions.push_back(
          {r.repost_id.value, "repost at " + std::to_string(r.timestamp) + " precedes post " +
                                  std::to_string(r.source_post_id.value) + " at " +
                                  std::to_string(it->second)});
    }
  }
  return report;
}

}  // namespace cascadeflow
