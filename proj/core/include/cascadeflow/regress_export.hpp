#pragma once

// Case-control dataset for a mixed-effects logistic regression of
// "was this view reposted" on sender influence, time of day and follower
// counts. Fitting happens elsewhere; this module only samples and encodes.

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cascadeflow/influence.hpp"
#include "cascadeflow/ingest.hpp"
#include "cascadeflow/timeline.hpp"

namespace cascadeflow {

struct SamplingParams {
  double positive_rate = 0.0;  // required, in (0, 1]
  double negative_multiplier = 2.0;
  std::uint64_t seed = 0;

  /// Throws ValidationError for out-of-range values.
  void validate() const;
};

struct SampleResult {
  std::vector<Outcome> cases;  // canonical exposure order
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t eligible_negatives = 0;
};

/// Two-pass sampler. Every keep/drop decision is a hash of the seed and the
/// record, so results do not depend on how the stream is partitioned.
///
///   pass 1: offer_positive() for every outcome, then freeze()
///   pass 2: offer_negative() for every outcome, then finish()
class CaseSampler {
 public:
  explicit CaseSampler(SamplingParams params);

  void offer_positive(const Outcome& o);
  void merge_positives(const CaseSampler& other);
  /// Fixes the retained positive set. Throws ValidationError when nothing
  /// was retained.
  void freeze();

  void offer_negative(const Outcome& o);
  void merge_negatives(const CaseSampler& other);
  /// Throws ValidationError when fewer eligible negatives exist than needed.
  SampleResult finish();

  /// Copy of the frozen state with no negatives, for per-worker pass 2.
  CaseSampler fork_for_negatives() const;
  const SamplingParams& params() const { return params_; }

 private:
  SamplingParams params_;
  std::vector<Outcome> positives_;
  std::vector<PostId> positive_roots_;   // sorted after freeze
  std::vector<UserId> positive_viewers_; // sorted after freeze
  std::vector<std::pair<std::uint64_t, Outcome>> negatives_;  // (priority, case)
  bool frozen_ = false;
};

/// Keeps each positive with probability positive_rate, then draws
/// ceil(negative_multiplier * kept) negatives uniformly from views of
/// retained root posts by retained viewers.
SampleResult sample_cases(std::span<const Outcome> outcomes, const SamplingParams& params);

struct HourBin {
  std::string label;
  int start_hour = 0;  // local time, inclusive
  int end_hour = 0;    // local time, exclusive; may be <= start_hour to wrap midnight
};

struct HourBins {
  int utc_offset_hours = 9;
  std::vector<HourBin> bins = {
      {"morning", 6, 12}, {"noon", 12, 18}, {"night", 18, 24}, {"midnight", 0, 6}};

  /// Throws ValidationError unless every local hour maps to exactly one bin.
  void validate() const;
  int local_hour(Millis timestamp) const;
  const std::string& label_for(Millis timestamp) const;
};

struct RegressionRow {
  int is_retweeted = 0;
  InfluenceCategory sender_influence = InfluenceCategory::low;
  std::string repost_hour;
  double sender_followers_log_z = 0.0;
  double user_followers_log_z = 0.0;
  PostId source_tweet_id;
  std::string user_topic;
  UserId viewer;
  UserId sender;
};

/// Mean and population standard deviation of ln(1 + followers).
struct Standardization {
  double mean = 0.0;
  double sd = 0.0;

  double z(double log_value) const { return sd > 0.0 ? (log_value - mean) / sd : 0.0; }
};

struct FeaturizeResult {
  std::vector<RegressionRow> rows;
  Standardization sender_followers;
  Standardization user_followers;
  std::size_t dropped_missing_followers = 0;
  std::size_t dropped_unclassified = 0;
};

/// Follower features are z-scores of ln(1 + count), with moments taken
/// over the emitted rows. Rows whose viewer or sender lacks a follower count
/// or an influence category are dropped and counted.
FeaturizeResult featurize(std::span<const Outcome> cases, const InfluenceTable& influence,
                          const UserDirectory& directory, const HourBins& hour_bins);

void write_regression_csv(std::ostream& out, std::span<const RegressionRow> rows,
                          const UserDirectory& directory);

/// Sidecar JSON describing how the dataset was produced.
std::string regression_sidecar_json(const SamplingParams& params, const HourBins& bins,
                                    const SampleResult& sample, const FeaturizeResult& features);

}  // namespace cascadeflow
