#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>

namespace cascadeflow::io {

/// Reads a text file line by line. Gzip input is detected from the magic
/// bytes and inflated transparently. Trailing '\r' is stripped.
class LineReader {
 public:
  /// Throws InputError when the file is missing or cannot be opened.
  explicit LineReader(const std::filesystem::path& path);
  ~LineReader();
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  /// False at end of input. `line` stays valid until the next call.
  bool next(std::string_view& line);
  /// 1-based number of the line last returned.
  std::size_t line_number() const { return line_no_; }
  bool compressed() const { return compressed_; }

 private:
  bool refill();

  struct Handle;
  std::unique_ptr<Handle> handle_;
  std::string buffer_;
  std::size_t begin_ = 0;
  std::size_t end_ = 0;
  std::string carry_;
  bool eof_ = false;
  bool compressed_ = false;
  std::size_t line_no_ = 0;
};

/// Buffers output in memory and publishes it with write-to-temp + rename on
/// commit(). Destroying an uncommitted file leaves the target untouched.
class AtomicFile {
 public:
  explicit AtomicFile(std::filesystem::path target);
  ~AtomicFile();
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;

  std::ostream& stream() { return out_; }
  /// Flushes to `<target>.tmp.<pid>` and renames over the target.
  void commit();

 private:
  std::filesystem::path target_;
  std::ostringstream out_;
  bool committed_ = false;
};

/// Shortest decimal string that round-trips the double.
std::string format_double(double value);
/// Empty string for nullopt, format_double otherwise.
std::string format_optional(const std::optional<double>& value);

/// Quotes a CSV field if it contains a delimiter, quote or newline.
std::string csv_escape(std::string_view field);

/// Lower-case hex SHA-256 of a file's raw bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace cascadeflow::io
