#ifndef M3DVG_IO_CHECKPOINT_HPP_
#define M3DVG_IO_CHECKPOINT_HPP_

// Named parameter tensors. Layout (little-endian):
//   "M3VC" | u32 version=1 | u32 count | count entries
//   entry: u32 len + name bytes | u32 rank (1 or 2) | rank x u64 dims |
//          prod(dims) f64 values (row-major)
// Entries appear in the parameter struct's visiting order.

#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "m3dvg/io/common.hpp"
#include "m3dvg/nn/params.hpp"

namespace m3dvg::io {

inline constexpr char kCheckpointMagic[4] = {'M', '3', 'V', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline std::string serialize_checkpoint(const NamedTensors& entries) {
  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    w.str32(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    for (double v : t.data()) w.put<double>(v);
  }
  return w.take();
}

inline NamedTensors parse_checkpoint(std::string_view bytes, const std::string& source = "<memory>") {
  ByteReader r(bytes, source);
  if (r.raw(4, "magic") != std::string_view(kCheckpointMagic, 4))
    throw FormatError(source + ": bad magic, not a checkpoint");
  auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  auto count = r.get<std::uint32_t>("entry count");
  NamedTensors out;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str32("tensor name");
    if (!names.insert(name).second) r.fail("duplicate tensor '" + name + "'");
    auto rank = r.get<std::uint32_t>("rank");
    if (rank != 1 && rank != 2) r.fail("tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      auto d = r.get<std::uint64_t>("dimension");
      if (d == 0) r.fail("tensor '" + name + "' has a zero dimension");
      if (d > r.remaining() / sizeof(double) / numel) r.need(r.remaining() + 1, "tensor data");
      numel *= d;
      shape.push_back(static_cast<std::size_t>(d));
    }
    r.need(numel * sizeof(double), "tensor data");
    std::vector<double> data(numel);
    for (double& v : data) {
      v = r.get<double>("tensor data");
      if (!std::isfinite(v)) r.fail("non-finite value in '" + name + "'");
    }
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return out;
}

template <class P>
NamedTensors named_tensors(const P& params) {
  NamedTensors out;
  visit_params(params, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
  return out;
}

// Fills a parameter struct shaped like `like` from checkpoint entries. Names,
// order and shapes must all agree.
template <class P>
P restore_params(const NamedTensors& entries, P like, const std::string& source = "<memory>") {
  std::size_t i = 0;
  visit_params(like, [&](const std::string& name, Tensor& t) {
    if (i >= entries.size()) throw FormatError(source + ": checkpoint lacks '" + name + "'");
    const auto& [got, value] = entries[i++];
    if (got != name)
      throw FormatError(source + ": expected tensor '" + name + "', found '" + got + "'");
    if (value.shape() != t.shape())
      throw FormatError(source + ": tensor '" + name + "' has shape " + shape_str(value.shape()) +
                        ", model expects " + shape_str(t.shape()));
    t = value;
  });
  if (i != entries.size())
    throw FormatError(source + ": unexpected extra tensor '" + entries[i].first + "'");
  return like;
}

template <class P>
void save_checkpoint(const std::filesystem::path& path, const P& params) {
  write_file_atomic(path, serialize_checkpoint(named_tensors(params)));
}

template <class P>
P load_checkpoint(const std::filesystem::path& path, P like) {
  return restore_params(parse_checkpoint(read_file(path), path.string()), std::move(like),
                        path.string());
}

}  // namespace m3dvg::io

#endif  // M3DVG_IO_CHECKPOINT_HPP_
