#pragma once

// Virtual timelines: every repost by a followee is a view for the follower,
// subject to three filters.
//   1. The viewer made at least one repost in the dataset.
//   2. The sender is not an official account.
//   3. Nothing is shown for a post once the viewer has reposted it: a
//      followee's repost at or after the viewer's first repost of the same
//      post is dropped.
// A view counts as reposted when the viewer's repost hangs directly off the
// sender's repost in the reconstructed cascade.

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cascadeflow/cascade.hpp"
#include "cascadeflow/model.hpp"

namespace cascadeflow {

struct ExposureRecord {
  UserId viewer;
  UserId sender;
  PostId root_post;
  RepostId sender_repost_id;
  Millis exposure_time = 0;
  Millis elapsed_since_root = 0;

  friend bool operator==(const ExposureRecord&, const ExposureRecord&) = default;
};

struct Outcome {
  ExposureRecord exposure;
  bool was_reposted = false;

  friend bool operator==(const Outcome&, const Outcome&) = default;
};

/// Canonical exposure order: viewer, exposure time, root post, sender repost.
bool exposure_before(const ExposureRecord& a, const ExposureRecord& b);

struct ExposureOptions {
  TimeWindow window = TimeWindow::first(6 * kHour);
  /// Count a sender who reposted the same post twice as one view.
  bool dedup_same_sender = false;
};

/// Users with at least one repost node in any cascade.
UserSet active_reposters(std::span<const Cascade> cascades, std::size_t user_count = 0);

/// Generates the views (with repost outcomes) of one cascade at a time.
/// Holds dense per-user scratch, so keep one per worker thread.
class ExposureBuilder {
 public:
  ExposureBuilder(const FollowerGraph& graph, const UserSet& official, const UserSet& active,
                  ExposureOptions options);

  /// Appends this cascade's outcomes to `out`, in node order then follower
  /// order (not canonical order).
  void build(const Cascade& cascade, std::vector<Outcome>& out);

  const ExposureOptions& options() const { return options_; }

 private:
  const FollowerGraph& graph_;
  const UserSet& official_;
  const UserSet& active_;
  ExposureOptions options_;

  std::vector<std::uint32_t> first_stamp_;
  std::vector<Millis> first_time_;
  std::vector<std::uint64_t> child_mark_;
  std::vector<std::size_t> child_offsets_;
  std::vector<std::size_t> children_;
  struct PairHash {
    std::size_t operator()(const std::pair<std::uint64_t, std::uint64_t>& p) const noexcept {
      return std::hash<std::uint64_t>{}(p.first * 0x9e3779b97f4a7c15ULL ^ p.second);
    }
  };
  std::unordered_set<std::pair<std::uint64_t, std::uint64_t>, PairHash> seen_pairs_;
  std::uint32_t epoch_ = 0;
  std::uint64_t marker_ = 0;
};

/// All exposures across cascades in canonical order.
std::vector<ExposureRecord> build_exposures(std::span<const Cascade> cascades,
                                            const FollowerGraph& graph, const UserSet& official,
                                            const ExposureOptions& options, std::size_t workers = 1);

/// Same generation as build_exposures with outcomes attached, canonical order.
std::vector<Outcome> build_outcomes(std::span<const Cascade> cascades, const FollowerGraph& graph,
                                    const UserSet& official, const ExposureOptions& options,
                                    std::size_t workers = 1);

/// Looks each exposure up in its cascade's parent edges. Throws
/// ValidationError for an exposure whose root post has no cascade.
std::vector<Outcome> resolve_repost_outcome(std::span<const ExposureRecord> exposures,
                                            std::span<const Cascade> cascades);

struct TimelineStats {
  UserId viewer;
  std::uint64_t total_exposures = 0;
  std::uint64_t distinct_posts = 0;
};

/// One row per viewer with at least one exposure, sorted by viewer.
std::vector<TimelineStats> timeline_stats(std::span<const ExposureRecord> exposures);

}  // namespace cascadeflow
