#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "m3dvg/lexical.hpp"
#include "oracles.hpp"

namespace m3dvg {
namespace {

std::vector<std::size_t> idx(std::initializer_list<std::size_t> l) { return l; }

TEST(Cosine, ClosedForms) {
  std::vector<double> x{1, 0}, y{0, 1}, xy{1, 1};
  EXPECT_DOUBLE_EQ(cosine_similarity(x, x), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(x, y), 0.0);
  EXPECT_NEAR(cosine_similarity(x, xy), 0.70710678, 1e-8);
  EXPECT_THROW(cosine_similarity(x, std::vector<double>{0, 0}), ContractError);
  EXPECT_THROW(cosine_similarity(x, std::vector<double>{1, 0, 0}), ShapeError);
}

TEST(Cosine, SymmetricAndScaleInvariant) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    Tensor a = random_uniform({7}, -1, 1, rng), b = random_uniform({7}, -1, 1, rng);
    double c = cosine_similarity(a.data(), b.data());
    EXPECT_DOUBLE_EQ(c, cosine_similarity(b.data(), a.data()));
    std::vector<double> scaled(a.values());
    for (double& v : scaled) v *= 13.0;
    EXPECT_NEAR(c, cosine_similarity(scaled, b.data()), 1e-14);
  }
}

TEST(KMeans, SpecExamples) {
  auto p = kmeans_1d_k2(std::vector<double>{0.9, 0.8, 0.1, 0.2});
  EXPECT_TRUE(p.split);
  EXPECT_EQ(p.high, idx({0, 1}));
  EXPECT_EQ(p.low, idx({2, 3}));
  EXPECT_NEAR(p.centroid_high, 0.85, 1e-15);
  EXPECT_NEAR(p.centroid_low, 0.15, 1e-15);

  auto flat = kmeans_1d_k2(std::vector<double>{0.5, 0.5, 0.5});
  EXPECT_FALSE(flat.split);
  EXPECT_TRUE(flat.high.empty());
  EXPECT_EQ(flat.low, idx({0, 1, 2}));

  auto one = kmeans_1d_k2(std::vector<double>{0.3});
  EXPECT_FALSE(one.split);

  auto two = kmeans_1d_k2(std::vector<double>{0.0, 1.0});
  EXPECT_EQ(two.high, idx({1}));
  EXPECT_EQ(two.low, idx({0}));
  EXPECT_THROW(kmeans_1d_k2(std::vector<double>{}), ContractError);
}

TEST(KMeans, TiesStayInOneCluster) {
  // 0.5 is equidistant in cost terms from both groups; it must never be split.
  auto p = kmeans_1d_k2(std::vector<double>{0.0, 0.5, 0.5, 1.0});
  EXPECT_EQ(p.low, idx({0, 1, 2}));
  EXPECT_EQ(p.high, idx({3}));
}

void expect_contiguous(const CertaintyPartition& p) {
  if (p.high.empty() || p.low.empty()) return;
  double min_high = INFINITY, max_low = -INFINITY;
  for (auto i : p.high) min_high = std::min(min_high, p.scores[i]);
  for (auto i : p.low) max_low = std::max(max_low, p.scores[i]);
  EXPECT_GE(min_high, max_low);
}

double sse_of(const CertaintyPartition& p) {
  auto part = [&](const std::vector<std::size_t>& s) {
    if (s.empty()) return 0.0;
    double m = 0.0;
    for (auto i : s) m += p.scores[i];
    m /= static_cast<double>(s.size());
    double e = 0.0;
    for (auto i : s) e += (p.scores[i] - m) * (p.scores[i] - m);
    return e;
  };
  return part(p.high) + part(p.low);
}

TEST(KMeans, MatchesExhaustiveOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n = 2 + rng.index(15);
    std::vector<double> s(n);
    for (double& v : s) v = rng.uniform(-1, 1);
    auto got = kmeans_1d_k2(s);
    auto want = oracle::exhaustive_two_means(s);
    ASSERT_TRUE(got.split);
    std::uint32_t mask = 0;
    for (auto i : got.high) mask |= 1u << i;
    EXPECT_EQ(mask, want.high_mask) << "trial " << trial;
    EXPECT_NEAR(sse_of(got), want.sse, 1e-12);
    EXPECT_EQ(got.high.size() + got.low.size(), n);
    expect_contiguous(got);
  }
}

TEST(KMeans, QuantizedScoresMatchOptimalCost) {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t n = 1 + rng.index(16);
    std::vector<double> s(n);
    for (double& v : s) v = static_cast<double>(rng.index(4)) / 4.0;
    auto got = kmeans_1d_k2(s);
    bool distinct = std::any_of(s.begin(), s.end(), [&](double v) { return v != s[0]; });
    ASSERT_EQ(got.split, distinct);
    expect_contiguous(got);
    if (distinct) {
      EXPECT_NEAR(sse_of(got), oracle::exhaustive_two_means(s).sse, 1e-12);
    }
  }
}

CaptionRecord orthogonal_record(std::size_t n, std::size_t hit) {
  // Region vector e_0; word `hit` equals it, others are orthogonal basis vectors.
  std::size_t d = n + 1;
  CaptionRecord r;
  r.sample_id = "s" + std::to_string(hit);
  for (std::size_t i = 0; i < n; ++i) r.tokens.push_back("w" + std::to_string(i));
  r.word_embeddings = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i) r.word_embeddings(i, i == hit ? 0 : i + 1) = 1.0;
  r.region_embedding = Tensor::zeros({d});
  r.region_embedding[0] = 1.0;
  return r;
}

TEST(Partition, MatchingWordIsHigh) {
  auto p = partition_certainty(orthogonal_record(5, 2));
  EXPECT_EQ(p.high, idx({2}));
  EXPECT_EQ(p.low, idx({0, 1, 3, 4}));
}

TEST(Partition, AllOrthogonalIsNoSplit) {
  auto r = orthogonal_record(4, 0);
  r.word_embeddings(0, 0) = 0.0;
  r.word_embeddings(0, 1) = 1.0;  // every word now lies off e_0
  auto p = partition_certainty(r);
  EXPECT_FALSE(p.split);
  EXPECT_EQ(p.low.size(), 4u);
}

TEST(Partition, ZeroWordNamesToken) {
  auto r = orthogonal_record(3, 1);
  for (std::size_t j = 0; j < r.word_embeddings.cols(); ++j) r.word_embeddings(2, j) = 0.0;
  try {
    partition_certainty(r);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("token 2"), std::string::npos) << e.what();
  }
}

TEST(Partition, RandomRecordMatchesOracleAndIsScaleInvariant) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    CaptionRecord r{"r", {"a", "b", "c", "d", "e", "f"}, random_uniform({6, 8}, -1, 1, rng),
                    random_uniform({8}, -1, 1, rng)};
    auto p = partition_certainty(r);
    std::uint32_t mask = 0;
    for (auto i : p.high) mask |= 1u << i;
    EXPECT_EQ(mask, oracle::exhaustive_two_means(p.scores).high_mask);
    CaptionRecord scaled = r;
    for (double& v : scaled.word_embeddings.data()) v *= 4.5;
    for (double& v : scaled.region_embedding.data()) v *= 0.3;
    auto q = partition_certainty(scaled);
    EXPECT_EQ(p.high, q.high);
    EXPECT_EQ(p.low, q.low);
  }
}

TEST(Mask, SubstitutesHighTokens) {
  std::vector<std::string> t{"the", "red", "car", "on", "the", "right"};
  CertaintyPartition p;
  p.scores = {0.1, 0.9, 0.8, 0.1, 0.1, 0.2};
  p.high = {1, 2};
  p.low = {0, 3, 4, 5};
  p.split = true;
  auto m = mask_caption(t, p);
  EXPECT_EQ(m, (std::vector<std::string>{"the", "***", "***", "on", "the", "right"}));
  EXPECT_EQ(mask_caption(m, p), m);  // idempotent
}

TEST(Mask, NoSplitLeavesCaption) {
  std::vector<std::string> t{"a", "b"};
  auto p = kmeans_1d_k2(std::vector<double>{0.4, 0.4});
  EXPECT_EQ(mask_caption(t, p), t);
}

TEST(Mask, NeverMasksEverything) {
  std::vector<std::string> t{"x", "y", "z"};
  CertaintyPartition p;
  p.scores = {0.7, 0.2, 0.9};
  p.high = {0, 1, 2};
  auto m = mask_caption(t, p);
  EXPECT_EQ(m, (std::vector<std::string>{"***", "y", "***"}));
  EXPECT_EQ(mask_caption(m, p), m);
  p.high = {3};
  EXPECT_THROW(mask_caption(t, p), ContractError);
}

std::vector<CaptionRecord> corpus(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CaptionRecord> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t n = 1 + rng.index(8);
    CaptionRecord r;
    r.sample_id = "sample_" + std::to_string(i);
    for (std::size_t w = 0; w < n; ++w) r.tokens.push_back("tok" + std::to_string(w));
    r.word_embeddings = random_uniform({n, 6}, -1, 1, rng);
    r.region_embedding = random_uniform({6}, -1, 1, rng);
    out.push_back(std::move(r));
  }
  return out;
}

TEST(Pipeline, ZeroProbabilityIsIdentity) {
  auto recs = corpus(30, 1);
  LcaOptions opt;
  opt.policy.probability = 0.0;
  auto res = lca_pipeline(recs, opt);
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(res.captions[i].tokens, recs[i].tokens);
  opt.policy = {1.0, false};
  res = lca_pipeline(recs, opt);
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(res.captions[i].tokens, recs[i].tokens);
}

TEST(Pipeline, FullProbabilityMasksEveryMaskableRecord) {
  auto recs = corpus(30, 2);
  auto res = lca_pipeline(recs, {});
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& a = res.audit[i];
    EXPECT_EQ(a.masked, a.partition.split);
    if (a.partition.split) {
      EXPECT_FALSE(a.masked_tokens.empty());
    }
    EXPECT_EQ(res.captions[i].tokens, a.masked ? mask_caption(recs[i].tokens, a.partition)
                                               : recs[i].tokens);
  }
}

TEST(Pipeline, MatchingWordIsMasked) {
  std::vector<CaptionRecord> recs{orthogonal_record(5, 3)};
  auto res = lca_pipeline(recs, {});
  EXPECT_EQ(res.captions[0].tokens, (std::vector<std::string>{"w0", "w1", "w2", "***", "w4"}));
  EXPECT_EQ(res.audit[0].masked_tokens, (std::vector<std::string>{"w3"}));
}

TEST(Pipeline, SeededOutputIsByteIdenticalAndOrderFree) {
  auto recs = corpus(40, 3);
  LcaOptions opt;
  opt.policy.probability = 0.5;
  opt.seed = 99;
  auto a = lca_pipeline(recs, opt), b = lca_pipeline(recs, opt);
  EXPECT_EQ(format_masked_captions(a.captions), format_masked_captions(b.captions));
  EXPECT_EQ(format_audit(a.audit), format_audit(b.audit));
  std::size_t masked = 0;
  for (const auto& x : a.audit) masked += x.masked;
  EXPECT_GT(masked, 5u);
  EXPECT_LT(masked, 35u);

  auto reversed = recs;
  std::reverse(reversed.begin(), reversed.end());
  auto c = lca_pipeline(reversed, opt);
  for (std::size_t i = 0; i < recs.size(); ++i)
    EXPECT_EQ(c.audit[recs.size() - 1 - i].masked, a.audit[i].masked);

  // Another epoch resamples the decisions.
  opt.epoch = 1;
  auto d = lca_pipeline(recs, opt);
  EXPECT_NE(format_audit(a.audit), format_audit(d.audit));
}

TEST(Pipeline, DimensionMismatch) {
  auto recs = corpus(3, 4);
  LcaOptions opt;
  opt.expected_dim = 5;
  EXPECT_THROW(lca_pipeline(recs, opt), ShapeError);
  opt.expected_dim = 0;
  opt.policy.probability = 1.5;
  EXPECT_THROW(lca_pipeline(recs, opt), ContractError);
}

}  // namespace
}  // namespace m3dvg
