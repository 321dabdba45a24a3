#include "cascadeflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "cascadeflow/errors.hpp"

namespace cascadeflow {

std::size_t category_slot(const InfluenceTable& influence, UserId user) {
  if (auto c = influence.category_of(user)) return category_rank(*c);
  return kUnclassifiedSlot;
}

std::string slot_name(std::size_t slot) {
  if (slot < kCategoryCount) return std::string(to_string(static_cast<InfluenceCategory>(slot)));
  return "unclassified";
}

PopularityBuckets::PopularityBuckets(std::vector<std::uint64_t> thresholds)
    : thresholds_(std::move(thresholds)) {
  if (thresholds_.empty()) throw ValidationError("popularity thresholds must not be empty");
  for (std::size_t i = 1; i < thresholds_.size(); ++i) {
    if (thresholds_[i] <= thresholds_[i - 1]) {
      throw ValidationError("popularity thresholds must be strictly increasing");
    }
  }
}

std::string PopularityBuckets::label(std::size_t bucket) const {
  if (bucket == 0) return "<" + std::to_string(thresholds_.front());
  return ">=" + std::to_string(thresholds_.at(bucket - 1));
}

CascadeSizes cascade_sizes(std::span<const Cascade> cascades) {
  CascadeSizes sizes;
  sizes.reserve(cascades.size());
  for (const auto& c : cascades) sizes.emplace(c.root_post, c.repost_count());
  return sizes;
}

namespace {

std::uint64_t lookup_size(const CascadeSizes& sizes, PostId root) {
  auto it = sizes.find(root);
  if (it == sizes.end()) {
    throw ValidationError("no cascade size for root post " + std::to_string(root.value));
  }
  return it->second;
}

}  // namespace

CrpAccumulator::CrpAccumulator(PopularityBuckets buckets, TimeWindow window)
    : buckets_(std::move(buckets)), window_(window), counts_(buckets_.count()) {}

void CrpAccumulator::add(const Outcome& o, std::size_t slot, std::uint64_t cascade_reposts) {
  if (!window_.contains(o.exposure.elapsed_since_root)) return;
  total_.add(o.was_reposted);
  buckets_.for_each_bucket(cascade_reposts, [&](std::size_t b) { counts_[b][slot].add(o.was_reposted); });
}

void CrpAccumulator::merge(const CrpAccumulator& other) {
  if (other.counts_.size() != counts_.size()) throw ContractViolation("CrpAccumulator: bucket mismatch");
  total_ += other.total_;
  for (std::size_t b = 0; b < counts_.size(); ++b) {
    for (std::size_t s = 0; s < kCategorySlots; ++s) counts_[b][s] += other.counts_[b][s];
  }
}

std::vector<CrpCell> CrpAccumulator::cells() const {
  std::vector<CrpCell> out;
  for (std::size_t b = 0; b < counts_.size(); ++b) {
    for (std::size_t s = 0; s < kCategorySlots; ++s) {
      if (s == kUnclassifiedSlot && counts_[b][s].viewed == 0) continue;
      out.push_back(CrpCell{s, b, buckets_.label(b), window_, counts_[b][s]});
    }
  }
  return out;
}

std::vector<CrpCell> crp(std::span<const Outcome> outcomes, const InfluenceTable& influence,
                         const CascadeSizes& sizes, const PopularityBuckets& buckets,
                         const TimeWindow& window) {
  CrpAccumulator acc(buckets, window);
  for (const auto& o : outcomes) {
    acc.add(o, category_slot(influence, o.exposure.sender), lookup_size(sizes, o.exposure.root_post));
  }
  return acc.cells();
}

CrpTimeseries::CrpTimeseries(std::uint64_t min_reposts, Millis bucket_ms, Millis horizon_ms)
    : min_reposts_(min_reposts), bucket_ms_(bucket_ms) {
  if (bucket_ms <= 0 || horizon_ms <= 0 || horizon_ms % bucket_ms != 0) {
    throw ValidationError("timeseries bucket_ms must be positive and divide horizon_ms");
  }
  cells_.resize(static_cast<std::size_t>(horizon_ms / bucket_ms));
}

std::optional<std::size_t> CrpTimeseries::bucket_of(Millis elapsed) const {
  if (elapsed < 0) return std::nullopt;
  const auto b = static_cast<std::size_t>(elapsed / bucket_ms_);
  if (b >= cells_.size()) return std::nullopt;
  return b;
}

void CrpTimeseries::add(const Outcome& o, std::size_t slot, std::uint64_t cascade_reposts) {
  if (cascade_reposts < min_reposts_) return;
  if (auto b = bucket_of(o.exposure.elapsed_since_root)) cells_[*b][slot].add(o.was_reposted);
}

void CrpTimeseries::merge(const CrpTimeseries& other) {
  if (other.cells_.size() != cells_.size()) throw ContractViolation("CrpTimeseries: bucket mismatch");
  for (std::size_t b = 0; b < cells_.size(); ++b) {
    for (std::size_t s = 0; s < kCategorySlots; ++s) cells_[b][s] += other.cells_[b][s];
  }
}

CrpTimeseries crp_timeseries(std::span<const Outcome> outcomes, const InfluenceTable& influence,
                             const CascadeSizes& sizes, std::uint64_t min_reposts, Millis bucket_ms,
                             Millis horizon_ms) {
  CrpTimeseries ts(min_reposts, bucket_ms, horizon_ms);
  for (const auto& o : outcomes) {
    ts.add(o, category_slot(influence, o.exposure.sender), lookup_size(sizes, o.exposure.root_post));
  }
  return ts;
}

void ShareAccumulator::add(const Outcome& o, std::size_t slot, std::uint64_t cascade_reposts) {
  if (cascade_reposts < min_reposts_) return;
  counts_[slot].add(o.was_reposted);
}

void ShareAccumulator::merge(const ShareAccumulator& other) {
  for (std::size_t s = 0; s < kCategorySlots; ++s) counts_[s] += other.counts_[s];
}

ShareTable ShareAccumulator::table(const InfluenceTable& influence) const {
  ShareTable t;
  const auto population = influence.category_counts();
  std::uint64_t users = 0;
  ViewCount total;
  for (std::size_t s = 0; s < kCategoryCount; ++s) {
    users += population[s];
    total += counts_[s];
  }
  auto ratio = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  for (auto category : kAllCategories) {
    const auto s = category_rank(category);
    auto& row = t.rows[s];
    row.category = category;
    row.users = population[s];
    row.counts = counts_[s];
    row.user_share = ratio(population[s], users);
    row.view_share = ratio(counts_[s].viewed, total.viewed);
    row.repost_share = ratio(counts_[s].reposted, total.reposted);
  }
  t.unclassified = counts_[kUnclassifiedSlot];
  return t;
}

ShareTable shares(std::span<const Outcome> outcomes, const InfluenceTable& influence,
                  const CascadeSizes& sizes, std::uint64_t min_reposts) {
  ShareAccumulator acc(min_reposts);
  for (const auto& o : outcomes) {
    acc.add(o, category_slot(influence, o.exposure.sender), lookup_size(sizes, o.exposure.root_post));
  }
  return acc.table(influence);
}

RepostBehavior repost_behavior(std::span<const RepostEvent> reposts,
                               std::span<const double> top_fractions) {
  for (double f : top_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ValidationError("top fractions must lie in (0, 1]");
  }
  std::unordered_map<UserId, std::uint64_t> per_user;
  for (const auto& r : reposts) ++per_user[r.reposter];
  std::vector<std::uint64_t> counts;
  counts.reserve(per_user.size());
  for (const auto& [u, c] : per_user) counts.push_back(c);
  std::sort(counts.begin(), counts.end(), std::greater<>{});

  RepostBehavior out;
  out.users = counts.size();
  out.reposts = reposts.size();
  std::vector<std::uint64_t> prefix(counts.size() + 1, 0);
  for (std::size_t i = 0; i < counts.size(); ++i) prefix[i + 1] = prefix[i] + counts[i];

  for (double f : top_fractions) {
    double share = 0.0;
    if (out.users > 0) {
      // Tolerance keeps exact products like 0.3 * 10 from rounding up to 4.
      auto k = static_cast<std::size_t>(std::ceil(f * static_cast<double>(out.users) - 1e-9));
      k = std::clamp<std::size_t>(k, 1, counts.size());
      share = static_cast<double>(prefix[k]) / static_cast<double>(out.reposts);
    }
    out.cumulative_share.emplace_back(f, share);
  }

  // counts is descending, so users with >= k reposts form a prefix. Walk the
  // distinct values from the tail (smallest k first).
  for (std::size_t end = counts.size(); end > 0;) {
    const auto k = counts[end - 1];
    const auto with_at_least = static_cast<std::size_t>(
        std::upper_bound(counts.begin(), counts.end(), k, std::greater<>{}) - counts.begin());
    out.ccdf.emplace_back(k, static_cast<double>(with_at_least) / static_cast<double>(out.users));
    while (end > 0 && counts[end - 1] == k) --end;
  }
  return out;
}

}  // namespace cascadeflow
