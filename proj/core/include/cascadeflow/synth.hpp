#pragma once

// Synthetic prestige-bias diffusion.
//
// Users follow others preferentially by a Zipf attractiveness, with
// power-law out-degrees. Each user's generation tier is their follower
// count rank, binned with the same bands as the hg categories. Root posts
// come from attractive users and carry a lognormal appeal.
//
// Each time u sees a post or repost from sender v, u reposts with
// probability min(1, base * appeal * (1 + beta * tier(v) / 5)) after an
// exponential reaction delay. A newer view supersedes a pending decision
// (the user reacts to what is on top of the timeline), so the recorded
// parent is always the latest view before the repost and the temporal
// parent rule can recover it exactly.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cascadeflow/cascade.hpp"
#include "cascadeflow/ingest.hpp"
#include "cascadeflow/metrics.hpp"
#include "cascadeflow/model.hpp"

namespace cascadeflow {

struct SynthConfig {
  std::size_t n_users = 10'000;
  double follower_degree_exponent = 2.5;
  double mean_out_degree = 20.0;
  std::size_t max_out_degree = 2'000;
  double attractiveness_exponent = 0.8;
  std::size_t n_roots = 2'000;
  Millis horizon_ms = 24 * kHour;      // simulated span of each cascade
  Millis root_spread_ms = 24 * kHour;  // root posts are uniform over [0, root_spread_ms)
  double base_repost_prob = 0.02;
  double prestige_beta = 0.0;
  double content_appeal_sd = 1.0;
  Millis mean_reaction_ms = 20 * kMinute;
  std::uint64_t seed = 1;

  /// Throws ValidationError for out-of-range or infeasible settings.
  void validate() const;
};

struct TrueParent {
  RepostId repost_id;
  std::optional<RepostId> parent;  // nullopt: the root post
};

struct GroundTruth {
  std::vector<TrueParent> parents;       // aligned with SynthData::reposts
  std::vector<InfluenceCategory> tier;   // by user id

  std::optional<RepostId> parent_of(RepostId id) const;  // throws if unknown
};

struct SynthData {
  std::vector<PostEvent> posts;
  std::vector<RepostEvent> reposts;  // canonical (timestamp, id) order
  FollowerGraph graph;
  GroundTruth truth;
  UserDirectory directory;  // external id == decimal dense id
};

/// Pure function of the config: equal configs give identical data.
SynthData generate(const SynthConfig& config);

/// Writes posts.ndjson, reposts.ndjson, follower_graph.csv, users.ndjson and
/// ground_truth.csv (repost_id,true_parent_id,tier) into `dir`.
void write_synth(const std::filesystem::path& dir, const SynthData& data);

/// Cascades whose parent edges are the generator's true parents.
std::vector<Cascade> cascades_from_truth(std::span<const PostEvent> posts,
                                         std::span<const RepostEvent> reposts,
                                         const GroundTruth& truth);

/// Independent CRP recount straight from raw events and true parents, one
/// count per slot of `slot_of`. Applies the viewer-activity and
/// viewed-before-own-repost filters; synthetic data has no official
/// accounts. Refuses instances with more than `max_exposures` candidate
/// views (throws ValidationError).
std::array<ViewCount, kCategorySlots> oracle_crp(std::span<const PostEvent> posts,
                                                 std::span<const RepostEvent> reposts,
                                                 const FollowerGraph& graph, const GroundTruth& truth,
                                                 const std::function<std::size_t(UserId)>& slot_of,
                                                 const TimeWindow& window,
                                                 std::size_t max_exposures = 1'000'000);

}  // namespace cascadeflow
