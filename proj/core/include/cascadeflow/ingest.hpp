#pragma once

// Readers and writers for the on-disk event formats.
//
//   posts    NDJSON: post_id, author_id, timestamp_ms [, name, screen_name, profile, followers_count]
//   reposts  NDJSON: repost_id, user_id, source_post_id, timestamp_ms
//   users    NDJSON: user_id [, name, screen_name, profile, followers_count, topic]
//   graph    CSV:    follower_id,followee_id (header optional)
//
// Every reader accepts gzip input. External user ids (strings or integers)
// are interned into dense UserIds through a shared UserDirectory, so the
// order in which files are loaded determines the id assignment.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cascadeflow/model.hpp"

namespace cascadeflow {

/// Case-insensitive substring match of keywords against an account's
/// name, screen name and profile text.
class OfficialAccountFilter {
 public:
  OfficialAccountFilter() = default;
  explicit OfficialAccountFilter(std::vector<std::string> keywords);

  /// {"official", "公式"}.
  static OfficialAccountFilter with_default_keywords();

  bool matches(std::string_view name, std::string_view screen_name,
               std::string_view profile) const;
  const std::vector<std::string>& keywords() const { return keywords_; }

 private:
  std::vector<std::string> keywords_;
};

struct UserProfile {
  std::string external_id;
  std::string name;
  std::string screen_name;
  std::string profile;
  std::optional<std::uint64_t> follower_count;
  std::string topic;
};

/// Bijective mapping between external user ids and dense UserIds, plus the
/// per-user text and counts ingest has seen.
class UserDirectory {
 public:
  UserId intern(std::string_view external_id);
  std::optional<UserId> find(std::string_view external_id) const;

  const UserProfile& profile(UserId u) const { return profiles_.at(u.value); }
  UserProfile& profile(UserId u) { return profiles_.at(u.value); }
  const std::string& external_id(UserId u) const { return profiles_.at(u.value).external_id; }
  std::size_t size() const { return profiles_.size(); }

  bool is_official(UserId u, const OfficialAccountFilter& filter) const;
  UserSet official_users(const OfficialAccountFilter& filter) const;

  /// Fills missing follower counts from the graph's in-degree.
  void fill_follower_counts(const FollowerGraph& graph);
  /// True when every recorded follower count equals the graph in-degree.
  /// Only meaningful when the graph is known to be complete.
  bool follower_counts_match(const FollowerGraph& graph) const;

  friend bool operator==(const UserDirectory& a, const UserDirectory& b);

 private:
  std::vector<UserProfile> profiles_;
  std::unordered_map<std::string, UserId> index_;
};

enum class MalformedPolicy { skip_and_log, fail_fast };

struct LineError {
  std::size_t line = 0;
  std::string message;
};

template <typename T>
struct Loaded {
  std::vector<T> events;
  std::vector<LineError> errors;
};

struct LoadedGraph {
  FollowerGraph graph;
  std::vector<LineError> errors;
  std::size_t self_edges_dropped = 0;
};

/// Posts in file order. is_official is evaluated after the whole file has
/// been read, so profile text on any line of the author counts.
Loaded<PostEvent> load_posts(const std::filesystem::path& path, UserDirectory& directory,
                             const OfficialAccountFilter& filter,
                             MalformedPolicy policy = MalformedPolicy::skip_and_log);

/// Reposts sorted by (timestamp, repost_id). Duplicate repost ids are
/// reported with both line numbers and the later line is discarded.
Loaded<RepostEvent> load_reposts(const std::filesystem::path& path, UserDirectory& directory,
                                 MalformedPolicy policy = MalformedPolicy::skip_and_log);

LoadedGraph load_follower_graph(const std::filesystem::path& path, UserDirectory& directory,
                                MalformedPolicy policy = MalformedPolicy::skip_and_log);

/// Optional user metadata file.
std::vector<LineError> load_users(const std::filesystem::path& path, UserDirectory& directory,
                                  MalformedPolicy policy = MalformedPolicy::skip_and_log);

void write_posts(std::ostream& out, std::span<const PostEvent> posts,
                 const UserDirectory& directory);
void write_reposts(std::ostream& out, std::span<const RepostEvent> reposts,
                   const UserDirectory& directory);
void write_follower_graph(std::ostream& out, const FollowerGraph& graph,
                          const UserDirectory& directory);
void write_users(std::ostream& out, const UserDirectory& directory);

}  // namespace cascadeflow
