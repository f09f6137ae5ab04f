#ifndef M3DVG_LEXICAL_HPP_
#define M3DVG_LEXICAL_HPP_

// Lexical certainty: score each caption word against the target-region
// embedding, split the scores into high/low certainty with an exact 1-D
// two-means, and mask the high-certainty words with "***" during training.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "m3dvg/core/random.hpp"
#include "m3dvg/core/tensor.hpp"

namespace m3dvg {

inline constexpr std::string_view kMaskToken = "***";

struct CaptionRecord {
  std::string sample_id;
  std::vector<std::string> tokens;
  Tensor word_embeddings;   // n_words x d_e
  Tensor region_embedding;  // d_e (rank 1) or 1 x d_e
};

struct CertaintyPartition {
  std::vector<double> scores;
  std::vector<std::size_t> high;  // ascending indices
  std::vector<std::size_t> low;   // ascending indices
  double centroid_high = 0.0;
  double centroid_low = 0.0;
  bool split = false;  // false: NoSplit, every word is low certainty
};

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ShapeError("cosine_similarity: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw ContractError("cosine_similarity: degenerate input, zero vector");
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

// Globally optimal two-cluster partition of 1-D scores by scanning every
// split point of the sorted order. Splits only fall between distinct values,
// so tied scores always share a cluster; among equal-cost splits the one
// with the larger low cluster wins.
inline CertaintyPartition kmeans_1d_k2(std::span<const double> scores) {
  if (scores.empty()) throw ContractError("kmeans_1d_k2: no scores");
  CertaintyPartition out;
  out.scores.assign(scores.begin(), scores.end());
  std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n);
  // Prefix sums of centered values keep the cost arithmetic well conditioned.
  std::vector<double> sum(n + 1, 0.0), sq(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double v = scores[order[i]] - mean;
    sum[i + 1] = sum[i] + v;
    sq[i + 1] = sq[i] + v * v;
  }
  auto cost = [&](std::size_t lo, std::size_t hi) {
    double s = sum[hi] - sum[lo], q = sq[hi] - sq[lo];
    return q - s * s / static_cast<double>(hi - lo);
  };

  std::size_t best_k = 0;
  double best = INFINITY;
  for (std::size_t k = n - 1; k >= 1; --k) {
    if (!(scores[order[k - 1]] < scores[order[k]])) continue;
    double c = cost(0, k) + cost(k, n);
    if (c < best) {
      best = c;
      best_k = k;
    }
  }

  if (best_k == 0) {
    out.low.resize(n);
    std::iota(out.low.begin(), out.low.end(), 0);
    out.centroid_low = out.centroid_high = mean;
    return out;
  }
  out.split = true;
  out.low.assign(order.begin(), order.begin() + best_k);
  out.high.assign(order.begin() + best_k, order.end());
  std::sort(out.low.begin(), out.low.end());
  std::sort(out.high.begin(), out.high.end());
  out.centroid_low = mean + sum[best_k] / static_cast<double>(best_k);
  out.centroid_high = mean + (sum[n] - sum[best_k]) / static_cast<double>(n - best_k);
  return out;
}

inline void validate_record(const CaptionRecord& rec) {
  if (rec.tokens.empty())
    throw ValidationError("caption record '" + rec.sample_id + "': tokens must be nonempty");
  if (rec.word_embeddings.rows() != rec.tokens.size())
    throw ShapeError("caption record '" + rec.sample_id + "': " +
                     std::to_string(rec.tokens.size()) + " tokens but " +
                     std::to_string(rec.word_embeddings.rows()) + " embedding rows");
  if (rec.word_embeddings.cols() != rec.region_embedding.cols())
    throw ShapeError("caption record '" + rec.sample_id + "': word dim " +
                     std::to_string(rec.word_embeddings.cols()) + " != region dim " +
                     std::to_string(rec.region_embedding.cols()));
}

inline CertaintyPartition partition_certainty(const CaptionRecord& rec) {
  validate_record(rec);
  std::vector<double> scores(rec.tokens.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    try {
      scores[i] = cosine_similarity(rec.word_embeddings.row_span(i), rec.region_embedding.data());
    } catch (const ContractError&) {
      throw ContractError("partition_certainty: zero embedding for token " + std::to_string(i) +
                          " ('" + rec.tokens[i] + "') in sample '" + rec.sample_id +
                          "' or zero region embedding");
    }
  }
  return kmeans_1d_k2(scores);
}

// Replaces high-certainty tokens with "***". At least one token always
// survives: when every token is high certainty, the lowest-scoring one is
// kept.
inline std::vector<std::string> mask_caption(const std::vector<std::string>& tokens,
                                             const CertaintyPartition& part) {
  std::vector<std::size_t> to_mask = part.high;
  for (std::size_t i : to_mask)
    if (i >= tokens.size())
      throw ContractError("mask_caption: index " + std::to_string(i) + " out of range for " +
                          std::to_string(tokens.size()) + " tokens");
  std::sort(to_mask.begin(), to_mask.end());
  to_mask.erase(std::unique(to_mask.begin(), to_mask.end()), to_mask.end());
  if (!to_mask.empty() && to_mask.size() == tokens.size()) {
    auto score = [&](std::size_t i) { return i < part.scores.size() ? part.scores[i] : 0.0; };
    auto keep = std::min_element(to_mask.begin(), to_mask.end(),
                                 [&](std::size_t a, std::size_t b) { return score(a) < score(b); });
    to_mask.erase(keep);
  }
  std::vector<std::string> out = tokens;
  for (std::size_t i : to_mask) out[i] = std::string(kMaskToken);
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

struct MaskPolicy {
  double probability = 1.0;  // chance a record is masked in a given epoch
  bool enabled = true;
};

struct MaskedCaption {
  std::string sample_id;
  std::vector<std::string> tokens;
};

struct MaskAudit {
  std::string sample_id;
  std::uint64_t epoch = 0;
  CertaintyPartition partition;
  double draw = 0.0;
  bool masked = false;
  std::vector<std::string> masked_tokens;
};

struct LcaResult {
  std::vector<MaskedCaption> captions;
  std::vector<MaskAudit> audit;
};

struct LcaOptions {
  MaskPolicy policy;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::size_t expected_dim = 0;  // 0: take the first record's dimension
};

// The masking draw for a record depends only on (seed, epoch, sample_id), so
// results do not depend on processing order.
inline double mask_draw(std::uint64_t seed, std::uint64_t epoch, std::string_view sample_id) {
  Rng rng(mix_seed(mix_seed(seed, fnv1a64(sample_id)), epoch));
  return rng.uniform();
}

inline LcaResult lca_pipeline(std::span<const CaptionRecord> records, const LcaOptions& opt) {
  if (!(opt.policy.probability >= 0.0 && opt.policy.probability <= 1.0))
    throw ContractError("lca_pipeline: mask probability must lie in [0, 1]");
  std::size_t dim = opt.expected_dim;
  if (dim == 0 && !records.empty()) dim = records.front().region_embedding.cols();
  LcaResult result;
  for (const CaptionRecord& rec : records) {
    if (rec.region_embedding.cols() != dim || rec.word_embeddings.cols() != dim)
      throw ShapeError("lca_pipeline: sample '" + rec.sample_id + "' has embedding dim " +
                       std::to_string(rec.region_embedding.cols()) + ", expected " +
                       std::to_string(dim));
    MaskAudit audit;
    audit.sample_id = rec.sample_id;
    audit.epoch = opt.epoch;
    audit.partition = partition_certainty(rec);
    audit.draw = mask_draw(opt.seed, opt.epoch, rec.sample_id);
    audit.masked = opt.policy.enabled && audit.partition.split &&
                   audit.draw < opt.policy.probability;
    std::vector<std::string> tokens =
        audit.masked ? mask_caption(rec.tokens, audit.partition) : rec.tokens;
    if (audit.masked)
      for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] != rec.tokens[i]) audit.masked_tokens.push_back(rec.tokens[i]);
    result.captions.push_back({rec.sample_id, std::move(tokens)});
    result.audit.push_back(std::move(audit));
  }
  return result;
}

inline nlohmann::json to_json(const MaskAudit& a) {
  return nlohmann::json{{"sample_id", a.sample_id},
                        {"epoch", a.epoch},
                        {"scores", a.partition.scores},
                        {"split", a.partition.split},
                        {"high", a.partition.high},
                        {"low", a.partition.low},
                        {"centroid_high", a.partition.centroid_high},
                        {"centroid_low", a.partition.centroid_low},
                        {"draw", a.draw},
                        {"masked", a.masked},
                        {"masked_tokens", a.masked_tokens}};
}

// "sample_id<TAB>masked caption" per line.
inline std::string format_masked_captions(std::span<const MaskedCaption> captions) {
  std::string out;
  for (const auto& c : captions) out += c.sample_id + '\t' + join_tokens(c.tokens) + '\n';
  return out;
}

inline std::string format_audit(std::span<const MaskAudit> audit) {
  std::string out;
  for (const auto& a : audit) out += to_json(a).dump() + '\n';
  return out;
}

}  // namespace m3dvg

#endif  // M3DVG_LEXICAL_HPP_
