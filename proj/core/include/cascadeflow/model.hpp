#pragma once

// Core domain types shared by every stage of the pipeline.
//
// User ids are dense (0..n-1) once ingest has mapped external ids through a
// UserDirectory; FollowerGraph and UserSet rely on that to index by value.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cascadeflow {

template <typename Tag>
struct StrongId {
  std::uint64_t value = 0;

  constexpr auto operator<=>(const StrongId&) const = default;
};

struct UserTag {};
struct PostTag {};
struct RepostTag {};

using UserId = StrongId<UserTag>;
using PostId = StrongId<PostTag>;
using RepostId = StrongId<RepostTag>;

/// Milliseconds since the Unix epoch, or a duration in milliseconds.
using Millis = std::int64_t;

inline constexpr Millis kMinute = 60'000;
inline constexpr Millis kHour = 60 * kMinute;

struct PostEvent {
  PostId post_id;
  UserId author;
  Millis timestamp = 0;
  bool is_official = false;

  friend bool operator==(const PostEvent&, const PostEvent&) = default;
};

struct RepostEvent {
  RepostId repost_id;
  UserId reposter;
  PostId source_post_id;
  Millis timestamp = 0;

  friend bool operator==(const RepostEvent&, const RepostEvent&) = default;
};

/// Canonical repost order: timestamp, then repost id.
inline bool repost_before(const RepostEvent& a, const RepostEvent& b) {
  return std::pair{a.timestamp, a.repost_id} < std::pair{b.timestamp, b.repost_id};
}

/// Dense membership set over user ids.
class UserSet {
 public:
  UserSet() = default;
  explicit UserSet(std::size_t user_count) : bits_(user_count, 0) {}

  void insert(UserId u) {
    if (u.value >= bits_.size()) bits_.resize(u.value + 1, 0);
    if (!bits_[u.value]) {
      bits_[u.value] = 1;
      ++count_;
    }
  }
  bool contains(UserId u) const { return u.value < bits_.size() && bits_[u.value] != 0; }
  std::size_t count() const { return count_; }

 private:
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
};

/// Directed follower -> followee adjacency in CSR form, indexed by dense
/// user id. Both directions are kept so that "who follows v" and "whom does
/// u follow" are O(1) slices. Immutable after construction.
class FollowerGraph {
 public:
  using Edge = std::pair<UserId, UserId>;  // (follower, followee)

  FollowerGraph() = default;

  /// Builds the index from an arbitrary edge list. Duplicate edges collapse;
  /// self-edges are dropped and counted in `self_edges_dropped` when given.
  /// user_count is raised to cover every id in a kept edge.
  static FollowerGraph from_edges(std::vector<Edge> edges, std::size_t user_count,
                                  std::size_t* self_edges_dropped = nullptr);

  std::size_t user_count() const { return user_count_; }
  std::size_t edge_count() const { return followees_.size(); }

  /// Accounts `u` follows, sorted ascending. Empty for unknown ids.
  std::span<const UserId> followees(UserId u) const;
  /// Accounts following `u`, sorted ascending. Empty for unknown ids.
  std::span<const UserId> followers(UserId u) const;
  bool follows(UserId follower, UserId followee) const;

  /// Every edge in (follower, followee) order.
  std::vector<Edge> edges() const;

  friend bool operator==(const FollowerGraph&, const FollowerGraph&) = default;

 private:
  std::size_t user_count_ = 0;
  std::vector<std::size_t> followee_offsets_;
  std::vector<UserId> followees_;
  std::vector<std::size_t> follower_offsets_;
  std::vector<UserId> followers_;
};

enum class InfluenceCategory : std::uint8_t {
  low = 0,
  lower_mid = 1,
  mid = 2,
  upper_mid = 3,
  high = 4,
  very_high = 5,
};

inline constexpr std::size_t kCategoryCount = 6;

inline constexpr std::array<InfluenceCategory, kCategoryCount> kAllCategories = {
    InfluenceCategory::low,       InfluenceCategory::lower_mid, InfluenceCategory::mid,
    InfluenceCategory::upper_mid, InfluenceCategory::high,      InfluenceCategory::very_high,
};

/// 0 for low through 5 for very_high.
constexpr std::size_t category_rank(InfluenceCategory c) { return static_cast<std::size_t>(c); }

std::string_view to_string(InfluenceCategory c);
std::optional<InfluenceCategory> parse_category(std::string_view text);

/// Half-open window [start_offset, end_offset) measured from the root post.
class TimeWindow {
 public:
  /// Throws ValidationError unless 0 <= start < end.
  TimeWindow(Millis start_offset, Millis end_offset);

  static TimeWindow first(Millis length) { return TimeWindow(0, length); }
  /// Accepts the presets 30m, 1h, 3h, 6h, 24h, a bare millisecond length,
  /// or an explicit "start_ms:end_ms" pair.
  static TimeWindow parse(std::string_view text);

  Millis start_offset() const { return start_; }
  Millis end_offset() const { return end_; }
  bool contains(Millis elapsed) const { return elapsed >= start_ && elapsed < end_; }

  friend bool operator==(const TimeWindow&, const TimeWindow&) = default;

 private:
  Millis start_;
  Millis end_;
};

struct ValidationReport {
  struct Entry {
    std::uint64_t id;
    std::string detail;
  };
  std::vector<Entry> duplicate_post_ids;
  std::vector<Entry> duplicate_repost_ids;
  std::vector<Entry> dangling_sources;
  std::vector<Entry> time_inversions;
  std::vector<Entry> negative_timestamps;

  bool accepted() const {
    return duplicate_post_ids.empty() && duplicate_repost_ids.empty() && dangling_sources.empty() &&
           time_inversions.empty() && negative_timestamps.empty();
  }
  std::size_t issue_count() const {
    return duplicate_post_ids.size() + duplicate_repost_ids.size() + dangling_sources.size() +
           time_inversions.size() + negative_timestamps.size();
  }
};

ValidationReport validate_event_stream(std::span<const PostEvent> posts,
                                       std::span<const RepostEvent> reposts);

}  // namespace cascadeflow

template <typename Tag>
struct std::hash<cascadeflow::StrongId<Tag>> {
  std::size_t operator()(const cascadeflow::StrongId<Tag>& id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};
