#pragma once

// hg-index influence scoring.
//
// For each user, the repost counts of their authored posts (sorted
// descending) give
//   h  = largest h with counts[h-1] >= h
//   g  = largest g <= #posts with counts[0] + ... + counts[g-1] >= g^2
//   hg = sqrt(h * g)
// Users are then ranked by hg and split into six bands: the top 1% are
// very_high, then 1-5% high, 5-10% upper_mid, 10-30% mid, 30-50% lower_mid
// and the remainder low.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cascadeflow/model.hpp"

namespace cascadeflow {

/// Throws ContractViolation if `counts` is not sorted descending.
std::uint64_t h_index(std::span<const std::uint64_t> counts);
/// Throws ContractViolation if `counts` is not sorted descending.
std::uint64_t g_index(std::span<const std::uint64_t> counts);
double hg_index(std::uint64_t h, std::uint64_t g);

struct UserScore {
  UserId user;
  std::uint64_t h = 0;
  std::uint64_t g = 0;
  double hg = 0.0;
};

struct InfluenceRow {
  UserId user;
  std::uint64_t h = 0;
  std::uint64_t g = 0;
  double hg = 0.0;
  InfluenceCategory category = InfluenceCategory::low;
};

/// Upper rank-percent of each band above low, most exclusive first:
/// very_high, high, upper_mid, mid, lower_mid.
inline constexpr std::array<std::uint64_t, 5> kBandPercents = {1, 5, 10, 30, 50};

/// Number of top-ranked users that fall inside the top `percent` of a
/// population of `n` users: ceil(percent * n / 100).
constexpr std::uint64_t band_cutoff(std::uint64_t percent, std::uint64_t n) {
  return (percent * n + 99) / 100;
}

class InfluenceTable {
 public:
  InfluenceTable() = default;
  /// Rows are re-indexed by user id; ids must be dense.
  explicit InfluenceTable(std::vector<InfluenceRow> rows);

  std::size_t size() const { return rows_.size(); }
  const std::vector<InfluenceRow>& rows() const { return rows_; }
  const InfluenceRow* find(UserId u) const;
  std::optional<InfluenceCategory> category_of(UserId u) const;
  std::array<std::size_t, kCategoryCount> category_counts() const;

 private:
  std::vector<InfluenceRow> rows_;
  std::vector<std::int64_t> slot_;  // user id -> row index, -1 when absent
};

/// Ranks users by hg descending (user id ascending on ties) and bins them.
/// Users tied on hg across a band boundary all fall into the lower band.
/// Throws ValidationError on an empty input.
InfluenceTable assign_categories(std::span<const UserScore> scores);

/// Repost count of every post, aligned with `posts`. Reposts whose source is
/// not in `posts` are ignored.
std::vector<std::uint64_t> repost_counts(std::span<const PostEvent> posts,
                                         std::span<const RepostEvent> reposts);

/// h, g and hg for every user id in [0, user_count). Users who authored
/// nothing score zero.
std::vector<UserScore> compute_scores(std::span<const PostEvent> posts,
                                      std::span<const std::uint64_t> counts,
                                      std::size_t user_count, std::size_t workers = 1);

}  // namespace cascadeflow
