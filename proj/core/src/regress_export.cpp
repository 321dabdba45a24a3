#include "cascadeflow/regress_export.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>

#include <nlohmann/json.hpp>

#include "cascadeflow/errors.hpp"
#include "cascadeflow/io.hpp"

namespace cascadeflow {

namespace {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t record_hash(std::uint64_t seed, std::uint64_t salt, const ExposureRecord& e) {
  std::uint64_t h = splitmix64(seed ^ salt);
  h = splitmix64(h ^ e.viewer.value);
  h = splitmix64(h ^ e.sender_repost_id.value);
  h = splitmix64(h ^ e.root_post.value);
  return h;
}

double unit_interval(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

constexpr std::uint64_t kPositiveSalt = 0x706f736974697665ULL;
constexpr std::uint64_t kNegativeSalt = 0x6e65676174697665ULL;

bool outcome_before(const Outcome& a, const Outcome& b) { return exposure_before(a.exposure, b.exposure); }

}  // namespace

void SamplingParams::validate() const {
  if (!(positive_rate > 0.0 && positive_rate <= 1.0)) {
    throw ValidationError("positive_rate must lie in (0, 1]");
  }
  if (!(negative_multiplier > 0.0)) throw ValidationError("negative_multiplier must be > 0");
}

CaseSampler::CaseSampler(SamplingParams params) : params_(params) { params_.validate(); }

void CaseSampler::offer_positive(const Outcome& o) {
  if (!o.was_reposted) return;
  if (unit_interval(record_hash(params_.seed, kPositiveSalt, o.exposure)) < params_.positive_rate) {
    positives_.push_back(o);
  }
}

void CaseSampler::merge_positives(const CaseSampler& other) {
  positives_.insert(positives_.end(), other.positives_.begin(), other.positives_.end());
}

void CaseSampler::freeze() {
  if (positives_.empty()) {
    throw ValidationError("no positive cases retained at positive_rate " +
                          io::format_double(params_.positive_rate) + "; use a larger rate");
  }
  std::sort(positives_.begin(), positives_.end(), outcome_before);
  positive_roots_.clear();
  positive_viewers_.clear();
  for (const auto& o : positives_) {
    positive_roots_.push_back(o.exposure.root_post);
    positive_viewers_.push_back(o.exposure.viewer);
  }
  std::sort(positive_roots_.begin(), positive_roots_.end());
  positive_roots_.erase(std::unique(positive_roots_.begin(), positive_roots_.end()), positive_roots_.end());
  std::sort(positive_viewers_.begin(), positive_viewers_.end());
  positive_viewers_.erase(std::unique(positive_viewers_.begin(), positive_viewers_.end()),
                          positive_viewers_.end());
  frozen_ = true;
}

CaseSampler CaseSampler::fork_for_negatives() const {
  if (!frozen_) throw ContractViolation("CaseSampler: freeze() before forking for negatives");
  CaseSampler copy(params_);
  copy.positive_roots_ = positive_roots_;
  copy.positive_viewers_ = positive_viewers_;
  copy.frozen_ = true;
  return copy;
}

void CaseSampler::offer_negative(const Outcome& o) {
  if (!frozen_) throw ContractViolation("CaseSampler: freeze() before offering negatives");
  if (o.was_reposted) return;
  if (!std::binary_search(positive_roots_.begin(), positive_roots_.end(), o.exposure.root_post)) return;
  if (!std::binary_search(positive_viewers_.begin(), positive_viewers_.end(), o.exposure.viewer)) return;
  negatives_.emplace_back(record_hash(params_.seed, kNegativeSalt, o.exposure), o);
}

void CaseSampler::merge_negatives(const CaseSampler& other) {
  negatives_.insert(negatives_.end(), other.negatives_.begin(), other.negatives_.end());
}

SampleResult CaseSampler::finish() {
  if (!frozen_) throw ContractViolation("CaseSampler: finish() before freeze()");
  const auto wanted = static_cast<std::size_t>(
      std::ceil(params_.negative_multiplier * static_cast<double>(positives_.size()) - 1e-9));
  if (negatives_.size() < wanted) {
    throw ValidationError("only " + std::to_string(negatives_.size()) +
                          " eligible negative cases for " + std::to_string(wanted) +
                          " requested; lower negative_multiplier or raise positive_rate");
  }
  // The `wanted` smallest priorities are a uniform sample without
  // replacement; ties fall back to canonical order for determinism.
  auto by_priority = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return outcome_before(a.second, b.second);
  };
  std::nth_element(negatives_.begin(), negatives_.begin() + static_cast<std::ptrdiff_t>(wanted),
                   negatives_.end(), by_priority);

  SampleResult out;
  out.eligible_negatives = negatives_.size();
  out.positives = positives_.size();
  out.negatives = wanted;
  out.cases = positives_;
  for (std::size_t i = 0; i < wanted; ++i) out.cases.push_back(negatives_[i].second);
  std::sort(out.cases.begin(), out.cases.end(), outcome_before);
  return out;
}

SampleResult sample_cases(std::span<const Outcome> outcomes, const SamplingParams& params) {
  CaseSampler sampler(params);
  for (const auto& o : outcomes) sampler.offer_positive(o);
  sampler.freeze();
  for (const auto& o : outcomes) sampler.offer_negative(o);
  return sampler.finish();
}

void HourBins::validate() const {
  if (utc_offset_hours < -12 || utc_offset_hours > 14) {
    throw ValidationError("utc_offset_hours must lie in [-12, 14]");
  }
  std::array<int, 24> hits{};
  for (const auto& b : bins) {
    if (b.label.empty() || b.start_hour < 0 || b.start_hour > 23 || b.end_hour < 0 || b.end_hour > 24) {
      throw ValidationError("hour bin '" + b.label + "' is out of range");
    }
    for (int h = b.start_hour;; h = (h + 1) % 24) {
      ++hits[static_cast<std::size_t>(h)];
      if ((h + 1) % 24 == b.end_hour % 24) break;
    }
  }
  for (int h = 0; h < 24; ++h) {
    if (hits[static_cast<std::size_t>(h)] != 1) {
      throw ValidationError("hour bins must cover each hour exactly once (hour " + std::to_string(h) + ")");
    }
  }
}

int HourBins::local_hour(Millis timestamp) const {
  const Millis local = timestamp + static_cast<Millis>(utc_offset_hours) * kHour;
  const Millis day = 24 * kHour;
  const Millis within = ((local % day) + day) % day;
  return static_cast<int>(within / kHour);
}

const std::string& HourBins::label_for(Millis timestamp) const {
  const int h = local_hour(timestamp);
  for (const auto& b : bins) {
    const bool inside = b.start_hour < b.end_hour ? (h >= b.start_hour && h < b.end_hour)
                                                  : (h >= b.start_hour || h < b.end_hour);
    if (inside) return b.label;
  }
  throw ValidationError("no hour bin covers local hour " + std::to_string(h));
}

namespace {

Standardization moments(const std::vector<double>& xs) {
  Standardization s;
  if (xs.empty()) return s;
  long double sum = 0;
  for (double x : xs) sum += x;
  s.mean = static_cast<double>(sum / static_cast<long double>(xs.size()));
  long double ss = 0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.sd = static_cast<double>(std::sqrt(ss / static_cast<long double>(xs.size())));
  // Identical inputs can leave rounding residue in the mean; treat a spread
  // far below the data's own precision as zero variance.
  if (s.sd <= 1e-12 * std::max(1.0, std::abs(s.mean))) s.sd = 0.0;
  return s;
}

}  // namespace

FeaturizeResult featurize(std::span<const Outcome> cases, const InfluenceTable& influence,
                          const UserDirectory& directory, const HourBins& hour_bins) {
  hour_bins.validate();
  FeaturizeResult out;
  std::vector<double> sender_log;
  std::vector<double> user_log;
  auto followers = [&](UserId u) -> std::optional<std::uint64_t> {
    if (u.value >= directory.size()) return std::nullopt;
    return directory.profile(u).follower_count;
  };
  for (const auto& c : cases) {
    const auto& e = c.exposure;
    const auto category = influence.category_of(e.sender);
    if (!category) {
      ++out.dropped_unclassified;
      continue;
    }
    const auto fs = followers(e.sender);
    const auto fu = followers(e.viewer);
    if (!fs || !fu) {
      ++out.dropped_missing_followers;
      continue;
    }
    RegressionRow row;
    row.is_retweeted = c.was_reposted ? 1 : 0;
    row.sender_influence = *category;
    row.repost_hour = hour_bins.label_for(e.exposure_time);
    row.source_tweet_id = e.root_post;
    row.user_topic = directory.profile(e.viewer).topic;
    row.viewer = e.viewer;
    row.sender = e.sender;
    out.rows.push_back(std::move(row));
    sender_log.push_back(std::log1p(static_cast<double>(*fs)));
    user_log.push_back(std::log1p(static_cast<double>(*fu)));
  }
  out.sender_followers = moments(sender_log);
  out.user_followers = moments(user_log);
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    out.rows[i].sender_followers_log_z = out.sender_followers.z(sender_log[i]);
    out.rows[i].user_followers_log_z = out.user_followers.z(user_log[i]);
  }
  return out;
}

void write_regression_csv(std::ostream& out, std::span<const RegressionRow> rows,
                          const UserDirectory& directory) {
  out << "is_retweeted,sender_influence,repost_hour,sender_followers_log_z,user_followers_log_z,"
         "source_tweet_id,user_topic,viewer,sender\n";
  for (const auto& r : rows) {
    out << r.is_retweeted << ',' << to_string(r.sender_influence) << ',' << io::csv_escape(r.repost_hour)
        << ',' << io::format_double(r.sender_followers_log_z) << ','
        << io::format_double(r.user_followers_log_z) << ',' << r.source_tweet_id.value << ','
        << io::csv_escape(r.user_topic) << ',' << io::csv_escape(directory.external_id(r.viewer)) << ','
        << io::csv_escape(directory.external_id(r.sender)) << '\n';
  }
}

std::string regression_sidecar_json(const SamplingParams& params, const HourBins& bins,
                                    const SampleResult& sample, const FeaturizeResult& features) {
  nlohmann::ordered_json j;
  j["seed"] = params.seed;
  j["positive_rate"] = params.positive_rate;
  j["negative_multiplier"] = params.negative_multiplier;
  j["positives"] = sample.positives;
  j["negatives"] = sample.negatives;
  j["eligible_negatives"] = sample.eligible_negatives;
  j["rows"] = features.rows.size();
  j["dropped_missing_followers"] = features.dropped_missing_followers;
  j["dropped_unclassified"] = features.dropped_unclassified;
  j["hour_bins"]["utc_offset_hours"] = bins.utc_offset_hours;
  for (const auto& b : bins.bins) {
    j["hour_bins"]["bins"].push_back({{"label", b.label}, {"start_hour", b.start_hour}, {"end_hour", b.end_hour}});
  }
  j["standardization"]["sender_followers_log1p"] = {{"mean", features.sender_followers.mean},
                                                     {"sd", features.sender_followers.sd}};
  j["standardization"]["user_followers_log1p"] = {{"mean", features.user_followers.mean},
                                                   {"sd", features.user_followers.sd}};
  return j.dump(2) + "\n";
}

}  // namespace cascadeflow
