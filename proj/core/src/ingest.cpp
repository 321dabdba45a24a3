#include "cascadeflow/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cascadeflow/errors.hpp"
#include "cascadeflow/io.hpp"

namespace cascadeflow {

using nlohmann::json;

namespace {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

/// Numeric id given either as a JSON integer or a string of digits.
std::optional<std::uint64_t> numeric_id(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) return std::nullopt;
  if (it->is_number_unsigned()) return it->get<std::uint64_t>();
  if (it->is_number_integer()) {
    auto v = it->get<std::int64_t>();
    if (v < 0) return std::nullopt;
    return static_cast<std::uint64_t>(v);
  }
  if (it->is_string()) return parse_u64(it->get_ref<const std::string&>());
  return std::nullopt;
}

/// External user id: any non-empty string, or an integer rendered in decimal.
std::optional<std::string> external_id(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) return std::nullopt;
  if (it->is_string()) {
    const auto& s = it->get_ref<const std::string&>();
    if (s.empty()) return std::nullopt;
    return s;
  }
  if (it->is_number_unsigned()) return std::to_string(it->get<std::uint64_t>());
  if (it->is_number_integer()) return std::to_string(it->get<std::int64_t>());
  return std::nullopt;
}

std::optional<Millis> timestamp(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_integer()) return std::nullopt;
  auto v = it->get<std::int64_t>();
  if (v < 0) return std::nullopt;
  return v;
}

std::string text_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return {};
  return it->get<std::string>();
}

void merge_profile_text(UserProfile& p, const json& obj) {
  if (auto s = text_field(obj, "name"); !s.empty()) p.name = std::move(s);
  if (auto s = text_field(obj, "screen_name"); !s.empty()) p.screen_name = std::move(s);
  if (auto s = text_field(obj, "profile"); !s.empty()) p.profile = std::move(s);
  if (auto s = text_field(obj, "topic"); !s.empty()) p.topic = std::move(s);
  if (auto n = numeric_id(obj, "followers_count")) p.follower_count = *n;
}

/// Collects per-line problems according to the malformed-line policy.
class ErrorSink {
 public:
  ErrorSink(const std::filesystem::path& path, MalformedPolicy policy)
      : path_(path.string()), policy_(policy) {}

  void report(std::size_t line, std::string message) {
    if (policy_ == MalformedPolicy::fail_fast) {
      throw ValidationError(path_ + ":" + std::to_string(line) + ": " + message);
    }
    spdlog::debug("{}:{}: {}", path_, line, message);
    errors_.push_back({line, std::move(message)});
  }

  std::vector<LineError> take() {
    if (!errors_.empty()) {
      spdlog::warn("{}: skipped {} malformed line(s)", path_, errors_.size());
    }
    return std::move(errors_);
  }

 private:
  std::string path_;
  MalformedPolicy policy_;
  std::vector<LineError> errors_;
};

bool parse_object(std::string_view line, json& out) {
  out = json::parse(line, nullptr, /*allow_exceptions=*/false);
  return !out.is_discarded() && out.is_object();
}

bool blank(std::string_view line) { return trim(line).empty(); }

}  // namespace

OfficialAccountFilter::OfficialAccountFilter(std::vector<std::string> keywords) {
  for (auto& k : keywords) {
    if (!k.empty()) keywords_.push_back(ascii_lower(k));
  }
}

OfficialAccountFilter OfficialAccountFilter::with_default_keywords() {
  return OfficialAccountFilter({"official", "公式"});
}

bool OfficialAccountFilter::matches(std::string_view name, std::string_view screen_name,
                                    std::string_view profile) const {
  if (keywords_.empty()) return false;
  for (auto text : {name, screen_name, profile}) {
    if (text.empty()) continue;
    const auto lowered = ascii_lower(text);
    for (const auto& k : keywords_) {
      if (lowered.find(k) != std::string::npos) return true;
    }
  }
  return false;
}

UserId UserDirectory::intern(std::string_view external_id) {
  auto [it, inserted] = index_.try_emplace(std::string(external_id), UserId{profiles_.size()});
  if (inserted) {
    UserProfile p;
    p.external_id = std::string(external_id);
    profiles_.push_back(std::move(p));
  }
  return it->second;
}

std::optional<UserId> UserDirectory::find(std::string_view external_id) const {
  auto it = index_.find(std::string(external_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool UserDirectory::is_official(UserId u, const OfficialAccountFilter& filter) const {
  if (u.value >= profiles_.size()) return false;
  const auto& p = profiles_[u.value];
  return filter.matches(p.name, p.screen_name, p.profile);
}

UserSet UserDirectory::official_users(const OfficialAccountFilter& filter) const {
  UserSet out(profiles_.size());
  for (std::size_t i = 0; i < profiles_.size(); ++i) {
    if (is_official(UserId{i}, filter)) out.insert(UserId{i});
  }
  return out;
}

void UserDirectory::fill_follower_counts(const FollowerGraph& graph) {
  for (std::size_t i = 0; i < profiles_.size(); ++i) {
    if (!profiles_[i].follower_count) {
      profiles_[i].follower_count = graph.followers(UserId{i}).size();
    }
  }
}

bool UserDirectory::follower_counts_match(const FollowerGraph& graph) const {
  for (std::size_t i = 0; i < profiles_.size(); ++i) {
    const auto& c = profiles_[i].follower_count;
    if (c && *c != graph.followers(UserId{i}).size()) return false;
  }
  return true;
}

bool operator==(const UserDirectory& a, const UserDirectory& b) {
  if (a.profiles_.size() != b.profiles_.size()) return false;
  for (std::size_t i = 0; i < a.profiles_.size(); ++i) {
    const auto& x = a.profiles_[i];
    const auto& y = b.profiles_[i];
    if (x.external_id != y.external_id || x.name != y.name || x.screen_name != y.screen_name ||
        x.profile != y.profile || x.follower_count != y.follower_count || x.topic != y.topic) {
      return false;
    }
  }
  return true;
}

Loaded<PostEvent> load_posts(const std::filesystem::path& path, UserDirectory& directory,
                             const OfficialAccountFilter& filter, MalformedPolicy policy) {
  io::LineReader reader(path);
  ErrorSink sink(path, policy);
  Loaded<PostEvent> out;
  std::unordered_map<PostId, std::size_t> first_line;
  std::string_view line;
  json obj;
  while (reader.next(line)) {
    if (blank(line)) continue;
    const auto ln = reader.line_number();
    if (!parse_object(line, obj)) {
      sink.report(ln, "not a JSON object (truncated or malformed line)");
      continue;
    }
    auto id = numeric_id(obj, "post_id");
    auto author = external_id(obj, "author_id");
    auto ts = timestamp(obj, "timestamp_ms");
    if (!id || !author || !ts) {
      sink.report(ln, std::string("missing or invalid ") +
                          (!id ? "post_id" : !author ? "author_id" : "timestamp_ms"));
      continue;
    }
    auto [it, inserted] = first_line.try_emplace(PostId{*id}, ln);
    if (!inserted) {
      sink.report(ln, "duplicate post_id " + std::to_string(*id) + " (first seen on line " +
                          std::to_string(it->second) + ", again on line " + std::to_string(ln) + ")");
      continue;
    }
    const UserId uid = directory.intern(*author);
    merge_profile_text(directory.profile(uid), obj);
    out.events.push_back(PostEvent{PostId{*id}, uid, *ts, false});
  }
  for (auto& p : out.events) p.is_official = directory.is_official(p.author, filter);
  out.errors = sink.take();
  return out;
}

Loaded<RepostEvent> load_reposts(const std::filesystem::path& path, UserDirectory& directory,
                                 MalformedPolicy policy) {
  io::LineReader reader(path);
  ErrorSink sink(path, policy);
  Loaded<RepostEvent> out;
  std::unordered_map<RepostId, std::size_t> first_line;
  std::string_view line;
  json obj;
  while (reader.next(line)) {
    if (blank(line)) continue;
    const auto ln = reader.line_number();
    if (!parse_object(line, obj)) {
      sink.report(ln, "not a JSON object (truncated or malformed line)");
      continue;
    }
    auto id = numeric_id(obj, "repost_id");
    auto user = external_id(obj, "user_id");
    auto source = numeric_id(obj, "source_post_id");
    auto ts = timestamp(obj, "timestamp_ms");
    if (!id || !user || !source || !ts) {
      sink.report(ln, std::string("missing or invalid ") +
                          (!id     ? "repost_id"
                           : !user ? "user_id"
                           : !source ? "source_post_id"
                                     : "timestamp_ms"));
      continue;
    }
    auto [it, inserted] = first_line.try_emplace(RepostId{*id}, ln);
    if (!inserted) {
      sink.report(ln, "duplicate repost_id " + std::to_string(*id) + " on lines " +
                          std::to_string(it->second) + " and " + std::to_string(ln));
      continue;
    }
    const UserId uid = directory.intern(*user);
    merge_profile_text(directory.profile(uid), obj);
    out.events.push_back(RepostEvent{RepostId{*id}, uid, PostId{*source}, *ts});
  }
  std::stable_sort(out.events.begin(), out.events.end(), repost_before);
  out.errors = sink.take();
  return out;
}

LoadedGraph load_follower_graph(const std::filesystem::path& path, UserDirectory& directory,
                                MalformedPolicy policy) {
  io::LineReader reader(path);
  ErrorSink sink(path, policy);
  std::vector<FollowerGraph::Edge> edges;
  std::string_view line;
  bool first = true;
  while (reader.next(line)) {
    if (blank(line)) continue;
    const auto ln = reader.line_number();
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) {
      sink.report(ln, "expected 'follower_id,followee_id'");
      first = false;
      continue;
    }
    auto a = trim(line.substr(0, comma));
    auto b = trim(line.substr(comma + 1));
    if (first && a == "follower_id" && b == "followee_id") {
      first = false;
      continue;
    }
    first = false;
    if (a.empty() || b.empty() || b.find(',') != std::string_view::npos) {
      sink.report(ln, "expected exactly two non-empty fields");
      continue;
    }
    edges.emplace_back(directory.intern(a), directory.intern(b));
  }
  LoadedGraph out;
  out.graph = FollowerGraph::from_edges(std::move(edges), directory.size(), &out.self_edges_dropped);
  if (out.self_edges_dropped > 0) {
    spdlog::warn("{}: dropped {} self-edge(s)", path.string(), out.self_edges_dropped);
  }
  out.errors = sink.take();
  return out;
}

std::vector<LineError> load_users(const std::filesystem::path& path, UserDirectory& directory,
                                  MalformedPolicy policy) {
  io::LineReader reader(path);
  ErrorSink sink(path, policy);
  std::string_view line;
  json obj;
  while (reader.next(line)) {
    if (blank(line)) continue;
    const auto ln = reader.line_number();
    if (!parse_object(line, obj)) {
      sink.report(ln, "not a JSON object (truncated or malformed line)");
      continue;
    }
    auto user = external_id(obj, "user_id");
    if (!user) {
      sink.report(ln, "missing or invalid user_id");
      continue;
    }
    merge_profile_text(directory.profile(directory.intern(*user)), obj);
  }
  return sink.take();
}

namespace {

/// Reads back as a number when the external id is canonical decimal, so
/// synthetic data stays numeric on disk.
json id_value(const std::string& external) {
  if (auto v = parse_u64(external); v && std::to_string(*v) == external) return *v;
  return external;
}

void put_profile_text(json& obj, const UserProfile& p) {
  if (!p.name.empty()) obj["name"] = p.name;
  if (!p.screen_name.empty()) obj["screen_name"] = p.screen_name;
  if (!p.profile.empty()) obj["profile"] = p.profile;
  if (!p.topic.empty()) obj["topic"] = p.topic;
  if (p.follower_count) obj["followers_count"] = *p.follower_count;
}

}  // namespace

void write_posts(std::ostream& out, std::span<const PostEvent> posts,
                 const UserDirectory& directory) {
  std::vector<std::uint8_t> described(directory.size(), 0);
  for (const auto& p : posts) {
    json obj = {{"post_id", p.post_id.value},
                {"author_id", id_value(directory.external_id(p.author))},
                {"timestamp_ms", p.timestamp}};
    if (!described[p.author.value]) {
      put_profile_text(obj, directory.profile(p.author));
      described[p.author.value] = 1;
    }
    out << obj.dump() << '\n';
  }
}

void write_reposts(std::ostream& out, std::span<const RepostEvent> reposts,
                   const UserDirectory& directory) {
  for (const auto& r : reposts) {
    json obj = {{"repost_id", r.repost_id.value},
                {"user_id", id_value(directory.external_id(r.reposter))},
                {"source_post_id", r.source_post_id.value},
                {"timestamp_ms", r.timestamp}};
    out << obj.dump() << '\n';
  }
}

void write_follower_graph(std::ostream& out, const FollowerGraph& graph,
                          const UserDirectory& directory) {
  out << "follower_id,followee_id\n";
  for (const auto& [a, b] : graph.edges()) {
    out << directory.external_id(a) << ',' << directory.external_id(b) << '\n';
  }
}

void write_users(std::ostream& out, const UserDirectory& directory) {
  for (std::size_t i = 0; i < directory.size(); ++i) {
    const auto& p = directory.profile(UserId{i});
    json obj = {{"user_id", id_value(p.external_id)}};
    put_profile_text(obj, p);
    out << obj.dump() << '\n';
  }
}

}  // namespace cascadeflow
