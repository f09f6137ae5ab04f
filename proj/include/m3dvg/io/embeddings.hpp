#ifndef M3DVG_IO_EMBEDDINGS_HPP_
#define M3DVG_IO_EMBEDDINGS_HPP_

// Word and region embeddings for each caption. Layout (little-endian):
//   "M3VE" | u32 version=1 | u32 dim | u32 count | count records
//   record: u32 len + sample_id bytes | u32 n_words |
//           n_words x (u32 len + token bytes) |
//           n_words*dim f32 word matrix (row-major) | dim f32 region vector

#include <cmath>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "m3dvg/io/common.hpp"
#include "m3dvg/lexical.hpp"

namespace m3dvg::io {

inline constexpr char kEmbeddingMagic[4] = {'M', '3', 'V', 'E'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

class EmbeddingFile {
 public:
  EmbeddingFile() = default;
  explicit EmbeddingFile(std::uint32_t dim) : dim_(dim) {}

  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<CaptionRecord>& records() const { return records_; }

  void add(CaptionRecord rec) {
    validate_record(rec);
    if (rec.word_embeddings.cols() != dim_)
      throw ShapeError("embedding dim mismatch for '" + rec.sample_id + "': record has " +
                       std::to_string(rec.word_embeddings.cols()) + ", header says " +
                       std::to_string(dim_));
    if (index_.count(rec.sample_id))
      throw ValidationError("duplicate sample_id '" + rec.sample_id + "' in embedding file");
    for (const auto& t : rec.tokens)
      if (t.empty() || !valid_utf8(t))
        throw ValidationError("invalid token in '" + rec.sample_id + "'");
    for (double v : rec.word_embeddings.data()) check_f32(v, rec.sample_id);
    for (double v : rec.region_embedding.data()) check_f32(v, rec.sample_id);
    index_.emplace(rec.sample_id, records_.size());
    records_.push_back(std::move(rec));
  }

  const CaptionRecord* find(const std::string& sample_id) const {
    auto it = index_.find(sample_id);
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  const CaptionRecord& at(const std::string& sample_id) const {
    if (const CaptionRecord* r = find(sample_id)) return *r;
    throw ValidationError("no embeddings for sample '" + sample_id + "'");
  }

 private:
  // Values must survive the f32 round trip unchanged.
  static void check_f32(double v, const std::string& id) {
    if (static_cast<double>(static_cast<float>(v)) != v)
      throw ValidationError("embedding value for '" + id + "' is not exactly representable as f32");
  }

  std::uint32_t dim_ = 0;
  std::vector<CaptionRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::string serialize_embeddings(const EmbeddingFile& f) {
  ByteWriter w;
  w.raw(std::string_view(kEmbeddingMagic, 4));
  w.put<std::uint32_t>(kEmbeddingVersion);
  w.put<std::uint32_t>(f.dim());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.size()));
  for (const CaptionRecord& r : f.records()) {
    w.str32(r.sample_id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.tokens.size()));
    for (const auto& t : r.tokens) w.str32(t);
    for (double v : r.word_embeddings.data()) w.put<float>(static_cast<float>(v));
    for (double v : r.region_embedding.data()) w.put<float>(static_cast<float>(v));
  }
  return w.take();
}

inline EmbeddingFile parse_embeddings(std::string_view bytes, const std::string& source = "<memory>") {
  ByteReader r(bytes, source);
  if (r.raw(4, "magic") != std::string_view(kEmbeddingMagic, 4))
    throw FormatError(source + ": bad magic, not an embedding file");
  auto version = r.get<std::uint32_t>("version");
  if (version != kEmbeddingVersion)
    throw FormatError(source + ": unsupported embedding file version " + std::to_string(version));
  auto dim = r.get<std::uint32_t>("dim");
  auto count = r.get<std::uint32_t>("record count");
  if (dim == 0 && count > 0) throw FormatError(source + ": zero embedding dim");
  EmbeddingFile f(dim);
  auto read_floats = [&](std::size_t n, const char* what) {
    if (n > r.remaining() / sizeof(float)) r.need(r.remaining() + 1, what);
    std::vector<double> v(n);
    for (double& x : v) {
      float fl = r.get<float>(what);
      if (!std::isfinite(fl)) r.fail(std::string("non-finite value in ") + what);
      x = fl;
    }
    return v;
  };
  for (std::uint32_t i = 0; i < count; ++i) {
    CaptionRecord rec;
    rec.sample_id = r.str32("sample_id");
    auto n = r.get<std::uint32_t>("word count");
    if (n == 0) r.fail("record '" + rec.sample_id + "' has no words");
    r.need(static_cast<std::size_t>(n) * 4, "token lengths");
    rec.tokens.reserve(n);
    for (std::uint32_t k = 0; k < n; ++k) rec.tokens.push_back(r.str32("token"));
    if (n > r.remaining() / (std::size_t{dim} * sizeof(float))) r.need(r.remaining() + 1, "word matrix");
    rec.word_embeddings = Tensor({n, dim}, read_floats(std::size_t{n} * dim, "word matrix"));
    rec.region_embedding = Tensor({dim}, read_floats(dim, "region vector"));
    try {
      f.add(std::move(rec));
    } catch (const Error& e) {
      r.fail(e.what());
    }
  }
  if (!r.done()) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return f;
}

inline EmbeddingFile load_embeddings(const std::filesystem::path& path) {
  return parse_embeddings(read_file(path), path.string());
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& f) {
  write_file_atomic(path, serialize_embeddings(f));
}

}  // namespace m3dvg::io

#endif  // M3DVG_IO_EMBEDDINGS_HPP_
