#include "cascadeflow/io.hpp"

#include <openssl/evp.h>
#include <unistd.h>
#include <zlib.h>

#include <array>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <system_error>
#include <vector>

#include "cascadeflow/errors.hpp"

namespace cascadeflow::io {

namespace {
constexpr std::size_t kReadChunk = 1 << 20;
}

struct LineReader::Handle {
  gzFile file = nullptr;
  ~Handle() {
    if (file) gzclose(file);
  }
};

LineReader::LineReader(const std::filesystem::path& path) : handle_(std::make_unique<Handle>()) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw InputError("input file not found: " + path.string());
  }
  // gzopen sniffs the gzip magic bytes and reads plain files unchanged.
  handle_->file = gzopen(path.c_str(), "rb");
  if (!handle_->file) throw InputError("cannot open input file: " + path.string());
  gzbuffer(handle_->file, 1 << 17);
  buffer_.resize(kReadChunk);
  refill();
  compressed_ = gzdirect(handle_->file) == 0;
}

LineReader::~LineReader() = default;

bool LineReader::refill() {
  if (eof_) return false;
  const int got = gzread(handle_->file, buffer_.data(), static_cast<unsigned>(buffer_.size()));
  if (got < 0) {
    int errnum = 0;
    const char* msg = gzerror(handle_->file, &errnum);
    throw InputError(std::string("read error: ") + (msg ? msg : "unknown"));
  }
  begin_ = 0;
  end_ = static_cast<std::size_t>(got);
  if (got == 0) eof_ = true;
  return got > 0;
}

bool LineReader::next(std::string_view& line) {
  carry_.clear();
  bool have_any = false;
  for (;;) {
    if (begin_ == end_ && !refill()) {
      if (!have_any) return false;
      break;
    }
    const char* start = buffer_.data() + begin_;
    const auto* nl = static_cast<const char*>(std::memchr(start, '\n', end_ - begin_));
    if (nl) {
      const auto len = static_cast<std::size_t>(nl - start);
      begin_ += len + 1;
      ++line_no_;
      if (carry_.empty()) {
        line = std::string_view(start, len);
      } else {
        carry_.append(start, len);
        line = carry_;
      }
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      return true;
    }
    carry_.append(start, end_ - begin_);
    have_any = true;
    begin_ = end_;
  }
  ++line_no_;
  line = carry_;
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return true;
}

AtomicFile::AtomicFile(std::filesystem::path target) : target_(std::move(target)) {}

AtomicFile::~AtomicFile() = default;

void AtomicFile::commit() {
  if (committed_) return;
  if (target_.has_parent_path()) std::filesystem::create_directories(target_.parent_path());
  auto tmp = target_;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot write " + tmp.string());
    const auto data = out_.view();
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    f.flush();
    if (!f) throw InputError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, target_);
  committed_ = true;
}

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

std::string format_optional(const std::optional<double>& value) {
  return value ? format_double(*value) : std::string{};
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (f) {
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(f.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

}  // namespace cascadeflow::io
