#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "m3dvg/core/gradcheck.hpp"
#include "m3dvg/nn/encoder.hpp"
#include "oracles.hpp"

namespace m3dvg {
namespace {

template <class P>
P zero_biases(P p) {
  visit_params(p, [](const std::string& name, Tensor& t) {
    if (name.size() >= 4 && name.substr(name.size() - 4) == "bias") t = Tensor::zeros(t.shape());
  });
  return p;
}

TEST(Mhca, SingleKeyDegeneracy) {
  Rng rng(1);
  auto p = zero_biases(make_attention(4, 2, rng));
  Tensor q = random_uniform({3, 4}, -1, 1, rng);
  Tensor kv = random_uniform({1, 4}, -1, 1, rng);
  Tensor out = mhca(q, kv, p);
  // softmax over one key is 1, so every query row is kv W_v W_o.
  Tensor expected = matmul(matmul(kv, p.v.weight), p.o.weight);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out(i, j), expected(0, j), 1e-14);
}

TEST(Mhca, DuplicatedKeysMatchSingleKey) {
  Rng rng(2);
  auto p = make_attention(4, 2, rng);
  Tensor q = random_uniform({2, 4}, -1, 1, rng);
  Tensor kv = random_uniform({1, 4}, -1, 1, rng);
  Tensor dup({3, 4}, [&] {
    std::vector<double> v;
    for (int r = 0; r < 3; ++r) v.insert(v.end(), kv.data().begin(), kv.data().end());
    return v;
  }());
  EXPECT_LT(max_abs_diff(mhca(q, kv, p), mhca(q, dup, p)), 1e-14);
}

TEST(Mhca, WidthMismatch) {
  Rng rng(3);
  auto p = make_attention(4, 1, rng);
  EXPECT_THROW(mhca(Tensor::zeros({2, 4}), Tensor::zeros({2, 3}), p), ShapeError);
  EXPECT_THROW(make_attention(6, 4, rng), ContractError);
}

TEST(Mhca, MatchesLoopOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto p = make_attention(4, 2, rng);
    Tensor q = random_uniform({2, 4}, -2, 2, rng);
    Tensor kv = random_uniform({3, 4}, -2, 2, rng);
    EXPECT_LT(oracle::max_diff(oracle::attention(q, kv, p), mhca(q, kv, p)), 1e-10) << seed;
  }
}

TEST(Mhca, AttentionRowsSumToOne) {
  Rng rng(4);
  auto p = make_attention(8, 4, rng);
  Tape tape;
  auto out = mhca_with_weights(tape.constant(random_uniform({5, 8}, -3, 3, rng)),
                               tape.constant(random_uniform({7, 8}, -3, 3, rng)),
                               bind(tape, p, false));
  ASSERT_EQ(out.weights.size(), 4u);
  for (const Tensor& w : out.weights)
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) s += w(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Mhsa, SingleRow) {
  Rng rng(5);
  auto p = zero_biases(make_attention(4, 2, rng));
  Tensor x = random_uniform({1, 4}, -1, 1, rng);
  EXPECT_LT(max_abs_diff(mhsa(x, p), matmul(matmul(x, p.v.weight), p.o.weight)), 1e-14);
}

TEST(Mhsa, PermutationEquivariant) {
  Rng rng(6);
  auto p = make_attention(4, 2, rng);
  Tensor x = random_uniform({4, 4}, -1, 1, rng);
  std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor px = x;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) px(i, j) = x(perm[i], j);
  Tensor y = mhsa(x, p), py = mhsa(px, p);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(py(i, j), y(perm[i], j), 1e-14);
}

TEST(Mhsa, MatchesLoopOracle) {
  for (std::uint64_t seed = 100; seed < 200; ++seed) {
    Rng rng(seed);
    auto p = make_attention(4, 2, rng);
    Tensor x = random_uniform({3, 4}, -2, 2, rng);
    EXPECT_LT(oracle::max_diff(oracle::attention(x, x, p), mhsa(x, p)), 1e-10) << seed;
  }
}

TEST(Encoder, SublayerOrderDiffers) {
  EXPECT_EQ(kVisualEncoderOrder[1], Sublayer::kCrossAttention);
  EXPECT_EQ(kVisualEncoderOrder[2], Sublayer::kFeedForward);
  EXPECT_EQ(kDepthEncoderOrder[1], Sublayer::kFeedForward);
  EXPECT_EQ(kDepthEncoderOrder[2], Sublayer::kCrossAttention);
  EXPECT_EQ(kVisualEncoderOrder[0], kDepthEncoderOrder[0]);
}

TEST(Encoder, VisualLayerMatchesOracleComposition) {
  Rng rng(7);
  auto p = make_encoder_layer(8, 2, 16, rng);
  Tensor v = random_uniform({5, 8}, -1, 1, rng);
  Tensor t = random_uniform({3, 8}, -1, 1, rng);
  auto x = oracle::to_mat(v);
  auto add_to = [](oracle::Mat& a, const oracle::Mat& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  };
  auto to_tensor = [](const oracle::Mat& m) {
    std::vector<double> flat;
    for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor({m.size(), m[0].size()}, flat);
  };
  add_to(x, oracle::attention(to_tensor(x), to_tensor(x), p.self_attn));
  add_to(x, oracle::attention(to_tensor(x), t, p.cross_attn));
  add_to(x, oracle::feed_forward(x, p.ffn));
  EXPECT_LT(oracle::max_diff(x, visual_encoder_layer(v, t, p)), 1e-12);

  auto y = oracle::to_mat(v);
  add_to(y, oracle::attention(to_tensor(y), to_tensor(y), p.self_attn));
  add_to(y, oracle::feed_forward(y, p.ffn));
  add_to(y, oracle::attention(to_tensor(y), t, p.cross_attn));
  EXPECT_LT(oracle::max_diff(y, depth_encoder_layer(v, t, p)), 1e-12);
}

TEST(Encoder, ZeroTextContributesNothing) {
  Rng rng(8);
  auto p = zero_biases(make_encoder_layer(8, 2, 16, rng));
  Tensor v = random_uniform({4, 8}, -1, 1, rng);
  Tensor zero_text = Tensor::zeros({3, 8});
  // Without the cross-attention sublayer the visual layer is self-attn + FFN.
  Tape tape;
  auto bp = bind(tape, p, false);
  Var x = tape.constant(v);
  x = add(x, mhsa(x, bp.self_attn));
  x = add(x, ffn(x, bp.ffn));
  EXPECT_LT(max_abs_diff(visual_encoder_layer(v, zero_text, p), x.value()), 1e-14);
  EXPECT_LT(max_abs_diff(depth_encoder_layer(v, zero_text, p), x.value()), 1e-14);
}

TEST(Encoder, Shapes) {
  Rng rng(9);
  auto p = make_encoder_layer(32, 4, 64, rng);
  EXPECT_EQ(visual_encoder_layer(random_uniform({10, 32}, -1, 1, rng),
                                 random_uniform({6, 32}, -1, 1, rng), p)
                .shape(),
            (Shape{10, 32}));
  EXPECT_EQ(depth_encoder_layer(random_uniform({8, 32}, -1, 1, rng),
                                random_uniform({6, 32}, -1, 1, rng), p)
                .shape(),
            (Shape{8, 32}));
  EXPECT_THROW(visual_encoder_layer(Tensor::zeros({2, 32}), Tensor::zeros({2, 16}), p),
               ShapeError);
}

// Gradient with respect to every parameter and both inputs at once.
TEST(Encoder, GradCheck) {
  Rng rng(10);
  auto p = make_encoder_layer(8, 2, 16, rng);
  Tensor v = random_uniform({4, 8}, -1, 1, rng);
  Tensor t = random_uniform({3, 8}, -1, 1, rng);
  Tensor readout = random_uniform({4, 8}, -1, 1, rng);
  for (const SublayerOrder* order : {&kVisualEncoderOrder, &kDepthEncoderOrder}) {
    auto f = [&](Tape& tape, Var flat) {
      std::size_t np = param_count(p);
      auto bp = unpack(slice_cols(flat, 0, np), p);
      Var vin = reshape(slice_cols(flat, np, v.size()), {4, 8});
      Var tin = reshape(slice_cols(flat, np + v.size(), t.size()), {3, 8});
      return sum(mul(encoder_layer(*order, vin, tin, bp), tape.constant(readout)));
    };
    std::vector<double> all(pack(p).values());
    all.insert(all.end(), v.data().begin(), v.data().end());
    all.insert(all.end(), t.data().begin(), t.data().end());
    EXPECT_LT(grad_check(f, Tensor::row(all)).max_rel_error, 1e-5);
  }
}

TEST(Params, PackUnpackRoundTrip) {
  Rng rng(12);
  auto p = make_encoder_layer(4, 2, 8, rng);
  Tape tape;
  auto restored = values_of(unpack(tape.constant(pack(p)), p));
  std::vector<Tensor> a, b;
  visit_params(p, [&](const std::string&, const Tensor& t) { a.push_back(t); });
  visit_params(restored, [&](const std::string&, const Tensor& t) { b.push_back(t); });
  EXPECT_EQ(a, b);
}

}  // namespace
}  // namespace m3dvg
