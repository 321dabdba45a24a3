#include "cascadeflow/influence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <numeric>
#include <unordered_map>

#include "cascadeflow/errors.hpp"
#include "cascadeflow/parallel.hpp"

namespace cascadeflow {

namespace {

void require_descending(std::span<const std::uint64_t> counts, const char* op) {
  if (!std::is_sorted(counts.begin(), counts.end(), std::greater<>{})) {
    throw ContractViolation(std::string(op) + ": repost counts must be sorted descending");
  }
}

}  // namespace

std::uint64_t h_index(std::span<const std::uint64_t> counts) {
  require_descending(counts, "h_index");
  // counts[i] >= i + 1 holds on a prefix because counts is non-increasing.
  std::uint64_t h = 0;
  while (h < counts.size() && counts[h] >= h + 1) ++h;
  return h;
}

std::uint64_t g_index(std::span<const std::uint64_t> counts) {
  require_descending(counts, "g_index");
  // sum >= g^2 means the mean of the top g is >= g. That mean never grows
  // with g, so the condition holds on a prefix.
  // The sum saturates instead of wrapping; k * k stays below 2^64 for any
  // list that fits in memory.
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t g = 0;
  std::uint64_t sum = 0;
  for (std::uint64_t i = 0; i < counts.size(); ++i) {
    sum = counts[i] > kMax - sum ? kMax : sum + counts[i];
    const std::uint64_t k = i + 1;
    if (sum < k * k) break;
    g = k;
  }
  return g;
}

double hg_index(std::uint64_t h, std::uint64_t g) {
  return std::sqrt(static_cast<double>(h) * static_cast<double>(g));
}

InfluenceTable::InfluenceTable(std::vector<InfluenceRow> rows) : rows_(std::move(rows)) {
  std::sort(rows_.begin(), rows_.end(),
            [](const InfluenceRow& a, const InfluenceRow& b) { return a.user < b.user; });
  std::uint64_t max_id = 0;
  for (const auto& r : rows_) max_id = std::max(max_id, r.user.value);
  slot_.assign(rows_.empty() ? 0 : max_id + 1, -1);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    slot_[rows_[i].user.value] = static_cast<std::int64_t>(i);
  }
}

const InfluenceRow* InfluenceTable::find(UserId u) const {
  if (u.value >= slot_.size() || slot_[u.value] < 0) return nullptr;
  return &rows_[static_cast<std::size_t>(slot_[u.value])];
}

std::optional<InfluenceCategory> InfluenceTable::category_of(UserId u) const {
  if (const auto* row = find(u)) return row->category;
  return std::nullopt;
}

std::array<std::size_t, kCategoryCount> InfluenceTable::category_counts() const {
  std::array<std::size_t, kCategoryCount> out{};
  for (const auto& r : rows_) ++out[category_rank(r.category)];
  return out;
}

InfluenceTable assign_categories(std::span<const UserScore> scores) {
  if (scores.empty()) throw ValidationError("assign_categories: empty score table");
  const std::uint64_t n = scores.size();

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a].hg != scores[b].hg) return scores[a].hg > scores[b].hg;
    return scores[a].user < scores[b].user;
  });

  // Rank r (1-based) lands in the first band whose cutoff covers it.
  std::array<std::uint64_t, kBandPercents.size()> cutoffs{};
  for (std::size_t i = 0; i < kBandPercents.size(); ++i) cutoffs[i] = band_cutoff(kBandPercents[i], n);
  auto by_rank = [&](std::uint64_t r) {
    for (std::size_t i = 0; i < cutoffs.size(); ++i) {
      if (r <= cutoffs[i]) return static_cast<InfluenceCategory>(kCategoryCount - 1 - i);
    }
    return InfluenceCategory::low;
  };

  std::vector<InfluenceRow> rows(scores.size());
  for (std::size_t pos = 0; pos < order.size();) {
    // Tie group [pos, end): everyone takes the band of the last member.
    std::size_t end = pos + 1;
    while (end < order.size() && scores[order[end]].hg == scores[order[pos]].hg) ++end;
    const auto category = by_rank(end);
    for (std::size_t k = pos; k < end; ++k) {
      const auto& s = scores[order[k]];
      rows[k] = InfluenceRow{s.user, s.h, s.g, s.hg, category};
    }
    pos = end;
  }
  return InfluenceTable(std::move(rows));
}

std::vector<std::uint64_t> repost_counts(std::span<const PostEvent> posts,
                                         std::span<const RepostEvent> reposts) {
  std::unordered_map<PostId, std::size_t> slot;
  slot.reserve(posts.size());
  for (std::size_t i = 0; i < posts.size(); ++i) slot.emplace(posts[i].post_id, i);
  std::vector<std::uint64_t> counts(posts.size(), 0);
  for (const auto& r : reposts) {
    if (auto it = slot.find(r.source_post_id); it != slot.end()) ++counts[it->second];
  }
  return counts;
}

std::vector<UserScore> compute_scores(std::span<const PostEvent> posts,
                                      std::span<const std::uint64_t> counts,
                                      std::size_t user_count, std::size_t workers) {
  if (counts.size() != posts.size()) {
    throw ContractViolation("compute_scores: counts must align with posts");
  }
  for (const auto& p : posts) user_count = std::max<std::size_t>(user_count, p.author.value + 1);

  // Group repost counts by author in CSR form.
  std::vector<std::size_t> offsets(user_count + 1, 0);
  for (const auto& p : posts) ++offsets[p.author.value + 1];
  for (std::size_t u = 0; u < user_count; ++u) offsets[u + 1] += offsets[u];
  std::vector<std::uint64_t> grouped(posts.size());
  {
    auto cursor = offsets;
    for (std::size_t i = 0; i < posts.size(); ++i) grouped[cursor[posts[i].author.value]++] = counts[i];
  }

  std::vector<UserScore> scores(user_count);
  parallel_for(user_count, workers, [&](std::size_t, std::size_t u) {
    std::span<std::uint64_t> mine(grouped.data() + offsets[u], offsets[u + 1] - offsets[u]);
    std::sort(mine.begin(), mine.end(), std::greater<>{});
    const auto h = h_index(mine);
    const auto g = g_index(mine);
    scores[u] = UserScore{UserId{u}, h, g, hg_index(h, g)};
  }, 256);
  return scores;
}

}  // namespace cascadeflow
