#ifndef M3DVG_IO_COMMON_HPP_
#define M3DVG_IO_COMMON_HPP_

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "m3dvg/core/error.hpp"

namespace m3dvg::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written by byte copy on little-endian hosts");

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temporary file and renames it over the target, so
// readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(std::random_device{}());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw FormatError("write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw FormatError("cannot rename onto '" + path.string() + "': " + ec.message());
  }
}

// Little-endian primitive writer.
class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void raw(std::string_view s) { out_.append(s); }
  void str32(std::string_view s) {
    if (s.size() > UINT32_MAX) throw FormatError("string too long for u32 length prefix");
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  const std::string& bytes() const { return out_; }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

// Bounds-checked reader; every failure reports the byte offset.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string source)
      : data_(data), source_(std::move(source)) {}

  template <class T>
  T get(const char* what) {
    static_assert(std::is_arithmetic_v<T>);
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view raw(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string str32(const char* what) {
    auto n = get<std::uint32_t>(what);
    return std::string(raw(n, what));
  }

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n)
      throw FormatError(source_ + ": truncated at byte " + std::to_string(pos_) + " reading " +
                        what + " (" + std::to_string(n) + " bytes needed, " +
                        std::to_string(data_.size() - pos_) + " left)");
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(source_ + ": " + msg + " at byte " + std::to_string(pos_));
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
    i += len;
  }
  return true;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

// Splits text into lines, accepting both "\n" and "\r\n" endings.
inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

}  // namespace m3dvg::io

#endif  // M3DVG_IO_COMMON_HPP_
