#pragma once

// Repost cascade reconstruction and tree metrics.
//
// A repost by user u at time t attaches to the most recent earlier event
// (strictly before t) among the root post and every repost in the same
// cascade by an account u follows. Equal times prefer a repost over the
// root and then the larger repost id. When u follows nobody who took part,
// the repost attaches to the root and the node is flagged as a fallback
// attachment if u does not follow the root author either.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cascadeflow/influence.hpp"
#include "cascadeflow/model.hpp"

namespace cascadeflow {

struct CascadeNode {
  RepostId repost_id;
  UserId reposter;
  Millis timestamp = 0;
  std::int64_t parent = -1;  // index into Cascade::nodes, -1 for the root
  bool root_fallback = false;

  friend bool operator==(const CascadeNode&, const CascadeNode&) = default;
};

struct Cascade {
  PostId root_post;
  UserId root_author;
  Millis root_time = 0;
  std::vector<CascadeNode> nodes;  // sorted by (timestamp, repost_id)

  /// Node count including the root.
  std::size_t size() const { return nodes.size() + 1; }
  std::size_t repost_count() const { return nodes.size(); }
  std::optional<UserId> first_reposter() const {
    if (nodes.empty()) return std::nullopt;
    return nodes.front().reposter;
  }

  friend bool operator==(const Cascade&, const Cascade&) = default;
};

struct CascadeBuild {
  std::vector<Cascade> cascades;  // one per post, ordered by (timestamp, post_id)
  std::vector<std::string> diagnostics;
  std::size_t official_reposts_dropped = 0;
  std::size_t dangling_reposts = 0;
  std::size_t reposts_before_root = 0;
  std::size_t fallback_attachments = 0;
};

/// Reposts need not be pre-sorted. Reposts by users in `official` are
/// dropped; root posts by official accounts are kept.
CascadeBuild build_cascades(std::span<const PostEvent> posts, std::span<const RepostEvent> reposts,
                            const FollowerGraph& graph, const UserSet& official,
                            std::size_t workers = 1);

/// Throws InvariantError unless every parent precedes its child in both
/// index and time.
void check_tree(const Cascade& c);

/// Longest root-to-leaf path, in edges.
std::size_t max_depth(const Cascade& c);

/// Mean shortest-path distance over all unordered node pairs, root
/// included. Absent for single-node cascades.
std::optional<double> structural_virality(const Cascade& c);

/// The subtree hanging off the earliest repost, re-rooted at it.
/// Throws ContractViolation when the cascade has no reposts.
Cascade first_reposter_subtree(const Cascade& c);

struct CascadeMetrics {
  std::size_t size = 1;
  std::size_t max_depth = 0;
  std::optional<double> structural_virality;
};

CascadeMetrics measure(const Cascade& c);

struct ViralityRow {
  InfluenceCategory category = InfluenceCategory::low;
  std::size_t count = 0;     // qualifying cascades
  std::size_t sv_count = 0;  // of which had a defined structural virality
  std::optional<double> mean_structural_virality;
  std::optional<double> structural_virality_half_width;
  std::optional<double> mean_max_depth;
  std::optional<double> max_depth_half_width;
};

struct ViralityTable {
  std::array<ViralityRow, kCategoryCount> rows;  // indexed by category_rank
  std::size_t unclassified = 0;  // qualifying cascades whose first reposter had no category
};

/// Aggregates first-reposter subtree metrics over cascades with
/// size() >= min_size, grouped by the first reposter's category. Half-widths
/// are 1.96 * s / sqrt(n) with the sample standard deviation; absent for n < 2.
ViralityTable metrics_by_first_reposter_influence(std::span<const Cascade> cascades,
                                                  const InfluenceTable& influence,
                                                  std::size_t min_size);

}  // namespace cascadeflow
