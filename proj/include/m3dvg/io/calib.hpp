#ifndef M3DVG_IO_CALIB_HPP_
#define M3DVG_IO_CALIB_HPP_

// KITTI-style calibration text: one "key: numbers" row per line. Only the
// P2 row (3x4 left color camera projection, row-major) is read.

#include <array>
#include <charconv>
#include <filesystem>
#include <string>

#include "m3dvg/geometry.hpp"
#include "m3dvg/io/common.hpp"

namespace m3dvg::io {

inline double parse_double(std::string_view tok, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
    throw FormatError(where + ": non-numeric field '" + std::string(tok) + "'");
  return v;
}

inline CameraCalib parse_calib(std::string_view text, const std::string& source = "<memory>") {
  auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = lines[ln];
    std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) continue;
    std::string_view key = line.substr(0, colon);
    while (!key.empty() && key.front() == ' ') key.remove_prefix(1);
    if (key != "P2") continue;
    std::string where = source + ":" + std::to_string(ln + 1);
    std::array<double, 12> p{};
    std::size_t n = 0;
    std::string_view rest = line.substr(colon + 1);
    while (!rest.empty()) {
      std::size_t b = rest.find_first_not_of(" \t");
      if (b == std::string_view::npos) break;
      rest.remove_prefix(b);
      std::size_t e = rest.find_first_of(" \t");
      std::string_view tok = rest.substr(0, e);
      if (n == 12) throw FormatError(where + ": P2 has more than 12 values");
      p[n++] = parse_double(tok, where);
      rest = e == std::string_view::npos ? std::string_view{} : rest.substr(e);
    }
    if (n != 12)
      throw FormatError(where + ": P2 needs 12 values, found " + std::to_string(n));
    try {
      return CameraCalib::from_p2(p);
    } catch (const ValidationError& err) {
      throw FormatError(where + ": " + err.what());
    }
  }
  throw FormatError(source + ": no P2 row");
}

inline CameraCalib load_calib(const std::filesystem::path& path) {
  return parse_calib(read_file(path), path.string());
}

inline std::string format_calib(const CameraCalib& c) {
  std::string s = "P2:";
  for (double v : {c.fx, 0.0, c.cx, c.tx, 0.0, c.fy, c.cy, c.ty, 0.0, 0.0, 1.0, c.tz})
    s += " " + format_double(v);
  return s + "\n";
}

}  // namespace m3dvg::io

#endif  // M3DVG_IO_CALIB_HPP_
