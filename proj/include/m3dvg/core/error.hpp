#ifndef M3DVG_CORE_ERROR_HPP_
#define M3DVG_CORE_ERROR_HPP_

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>

namespace m3dvg {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced or consumed by a numeric routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. The message carries the location.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a domain invariant (names the field).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Warnings go through a replaceable sink so tests and the CLI can capture
// them. Default writes to stderr.
using WarningSink = std::function<void(std::string_view)>;

namespace detail {
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
inline WarningSink& warning_sink() {
  static WarningSink sink = [](std::string_view msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}
}  // namespace detail

// Installs `sink` and returns the previous one.
inline WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(detail::warning_mutex());
  WarningSink old = std::move(detail::warning_sink());
  detail::warning_sink() = std::move(sink);
  return old;
}

inline void warn(std::string_view msg) {
  std::lock_guard lock(detail::warning_mutex());
  if (detail::warning_sink()) detail::warning_sink()(msg);
}

}  // namespace m3dvg

#endif  // M3DVG_CORE_ERROR_HPP_
