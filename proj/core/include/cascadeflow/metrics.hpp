#pragma once

// Aggregates over resolved exposures.
//
// CRP (cascading repost probability) of a group = reposted views / views,
// counted over the views whose sender belongs to the group. Every
// aggregation here is an integer-count monoid: accumulators built over any
// partition of the outcome stream merge to identical results.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cascadeflow/cascade.hpp"
#include "cascadeflow/influence.hpp"
#include "cascadeflow/model.hpp"
#include "cascadeflow/timeline.hpp"

namespace cascadeflow {

/// Row index for per-category tables: category_rank for classified
/// senders, kUnclassifiedSlot for users missing from the influence table.
inline constexpr std::size_t kUnclassifiedSlot = kCategoryCount;
inline constexpr std::size_t kCategorySlots = kCategoryCount + 1;

std::size_t category_slot(const InfluenceTable& influence, UserId user);
std::string slot_name(std::size_t slot);

/// Lower-bound popularity buckets. Bucket 0 holds cascades below the
/// smallest threshold; bucket i > 0 holds cascades with at least
/// thresholds[i-1] reposts. Buckets above 0 overlap.
class PopularityBuckets {
 public:
  PopularityBuckets() : PopularityBuckets({1000, 5000, 10000}) {}
  /// Throws ValidationError on an empty or non-increasing list.
  explicit PopularityBuckets(std::vector<std::uint64_t> thresholds);

  std::size_t count() const { return thresholds_.size() + 1; }
  const std::vector<std::uint64_t>& thresholds() const { return thresholds_; }
  std::string label(std::size_t bucket) const;

  /// Calls fn(bucket) for every bucket a cascade with `reposts` belongs to.
  template <typename Fn>
  void for_each_bucket(std::uint64_t reposts, Fn&& fn) const {
    if (reposts < thresholds_.front()) fn(std::size_t{0});
    for (std::size_t i = 0; i < thresholds_.size() && reposts >= thresholds_[i]; ++i) fn(i + 1);
  }

 private:
  std::vector<std::uint64_t> thresholds_;
};

struct ViewCount {
  std::uint64_t viewed = 0;
  std::uint64_t reposted = 0;

  void add(bool was_reposted) {
    ++viewed;
    reposted += was_reposted ? 1 : 0;
  }
  ViewCount& operator+=(const ViewCount& o) {
    viewed += o.viewed;
    reposted += o.reposted;
    return *this;
  }
  std::optional<double> crp() const {
    if (viewed == 0) return std::nullopt;
    return static_cast<double>(reposted) / static_cast<double>(viewed);
  }
  friend bool operator==(const ViewCount&, const ViewCount&) = default;
};

struct CrpCell {
  std::size_t slot = 0;  // category_rank or kUnclassifiedSlot
  std::size_t popularity_bucket = 0;
  std::string popularity_label;
  TimeWindow window = TimeWindow::first(6 * kHour);
  ViewCount counts;

  std::optional<InfluenceCategory> category() const {
    if (slot >= kCategoryCount) return std::nullopt;
    return static_cast<InfluenceCategory>(slot);
  }
  std::optional<double> crp() const { return counts.crp(); }
};

/// Repost count (cascade size minus the root) keyed by root post.
using CascadeSizes = std::unordered_map<PostId, std::uint64_t>;
CascadeSizes cascade_sizes(std::span<const Cascade> cascades);

class CrpAccumulator {
 public:
  CrpAccumulator(PopularityBuckets buckets, TimeWindow window);

  void add(const Outcome& o, std::size_t slot, std::uint64_t cascade_reposts);
  void merge(const CrpAccumulator& other);

  /// Six category rows per bucket, plus an unclassified row per bucket when
  /// any unclassified view was seen. Ordered by bucket, then slot.
  std::vector<CrpCell> cells() const;
  ViewCount total() const { return total_; }
  const PopularityBuckets& buckets() const { return buckets_; }

 private:
  PopularityBuckets buckets_;
  TimeWindow window_;
  std::vector<std::array<ViewCount, kCategorySlots>> counts_;  // [bucket][slot]
  ViewCount total_;  // every in-window view, counted once
};

/// Throws ValidationError when an outcome's root post is missing from `sizes`.
std::vector<CrpCell> crp(std::span<const Outcome> outcomes, const InfluenceTable& influence,
                         const CascadeSizes& sizes, const PopularityBuckets& buckets,
                         const TimeWindow& window);

/// CRP per category and elapsed-time bucket, over cascades with at least
/// `min_reposts` reposts. Bucket b covers elapsed [b*bucket_ms, (b+1)*bucket_ms).
class CrpTimeseries {
 public:
  /// Throws ValidationError unless bucket_ms > 0 divides horizon_ms.
  CrpTimeseries(std::uint64_t min_reposts, Millis bucket_ms, Millis horizon_ms);

  void add(const Outcome& o, std::size_t slot, std::uint64_t cascade_reposts);
  void merge(const CrpTimeseries& other);

  std::size_t bucket_count() const { return cells_.size(); }
  Millis bucket_ms() const { return bucket_ms_; }
  std::uint64_t min_reposts() const { return min_reposts_; }
  const ViewCount& at(std::size_t slot, std::size_t bucket) const { return cells_[bucket][slot]; }
  /// Bucket index for an elapsed time, or nullopt beyond the horizon.
  std::optional<std::size_t> bucket_of(Millis elapsed) const;

 private:
  std::uint64_t min_reposts_;
  Millis bucket_ms_;
  std::vector<std::array<ViewCount, kCategorySlots>> cells_;  // [bucket][slot]
};

CrpTimeseries crp_timeseries(std::span<const Outcome> outcomes, const InfluenceTable& influence,
                             const CascadeSizes& sizes, std::uint64_t min_reposts, Millis bucket_ms,
                             Millis horizon_ms);

struct ShareRow {
  InfluenceCategory category = InfluenceCategory::low;
  std::optional<double> user_share;
  std::optional<double> view_share;
  std::optional<double> repost_share;
  std::uint64_t users = 0;
  ViewCount counts;
};

struct ShareTable {
  std::array<ShareRow, kCategoryCount> rows;
  ViewCount unclassified;  // excluded from the share denominators
};

class ShareAccumulator {
 public:
  explicit ShareAccumulator(std::uint64_t min_reposts = 0) : min_reposts_(min_reposts) {}

  void add(const Outcome& o, std::size_t slot, std::uint64_t cascade_reposts);
  void merge(const ShareAccumulator& other);
  ShareTable table(const InfluenceTable& influence) const;

 private:
  std::uint64_t min_reposts_;
  std::array<ViewCount, kCategorySlots> counts_{};
};

ShareTable shares(std::span<const Outcome> outcomes, const InfluenceTable& influence,
                  const CascadeSizes& sizes, std::uint64_t min_reposts = 0);

struct RepostBehavior {
  std::vector<std::pair<double, double>> cumulative_share;  // (top fraction, share of reposts)
  std::vector<std::pair<std::uint64_t, double>> ccdf;       // (k, fraction of users with >= k)
  std::uint64_t users = 0;
  std::uint64_t reposts = 0;
};

/// Skew of personal repost counts over users with at least one repost.
/// The top fraction f covers the ceil(f * users) most active users.
/// Throws ValidationError for fractions outside (0, 1].
RepostBehavior repost_behavior(std::span<const RepostEvent> reposts,
                               std::span<const double> top_fractions);

}  // namespace cascadeflow
