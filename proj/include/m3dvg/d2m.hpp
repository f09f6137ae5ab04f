#ifndef M3DVG_D2M_HPP_
#define M3DVG_D2M_HPP_

// Dimension-decoupled module.
//
// Coarse stage: two learnable query matrices cross-attend to the generalized
// text features T_t, each followed by a residual FFN:
//   H_2D = MHCA(L_2D, T_t)       T_C2D = FFN(H_2D) + H_2D
//   H_3D = MHCA(L_3D, T_t)       T_C3D = FFN(H_3D) + H_3D
//
// Refinement stage (reverse cross-attention, single head): each branch uses
// its own coarse features as queries and values and the other branch's as
// keys; the similarity map is inverted by subtracting from 1 before the
// softmax, so rows put their weight on the least similar keys:
//   T_2D = T_C2D + FFN(softmax(1 - S(T_C2D, T_C3D)) T_C2D)
//   T_3D = T_C3D + FFN(softmax(1 - S(T_C3D, T_C2D)) T_C3D)
// S is q k^T / sqrt(d) by default, or cosine similarity per row pair.

#include <string>
#include <utility>

#include "m3dvg/nn/attention.hpp"

namespace m3dvg {

enum class SimilarityMode { kScaledDot, kCosine };

inline const char* to_string(SimilarityMode m) {
  return m == SimilarityMode::kCosine ? "cosine" : "scaled_dot";
}

inline SimilarityMode similarity_from_string(const std::string& s) {
  if (s == "scaled_dot") return SimilarityMode::kScaledDot;
  if (s == "cosine") return SimilarityMode::kCosine;
  throw ContractError("unknown similarity mode '" + s + "' (expected scaled_dot or cosine)");
}

template <class T>
struct D2MParams {
  T query_2d;  // m x d
  T query_3d;  // m x d
  AttentionParams<T> attn_2d;
  AttentionParams<T> attn_3d;
  FFNParams<T> coarse_ffn_2d;
  FFNParams<T> coarse_ffn_3d;
  FFNParams<T> refine_ffn_2d;
  FFNParams<T> refine_ffn_3d;
  SimilarityMode similarity = SimilarityMode::kScaledDot;

  template <class F>
  auto map(F&& f) const {
    using U = std::invoke_result_t<F&, const T&>;
    return D2MParams<U>{f(query_2d),          f(query_3d),          attn_2d.map(f),
                        attn_3d.map(f),       coarse_ffn_2d.map(f), coarse_ffn_3d.map(f),
                        refine_ffn_2d.map(f), refine_ffn_3d.map(f), similarity};
  }

  template <class Self, class F>
  static void each(Self& self, F& f, const std::string& pre) {
    f(pre + "query_2d", self.query_2d);
    f(pre + "query_3d", self.query_3d);
    AttentionParams<T>::each(self.attn_2d, f, pre + "attn_2d.");
    AttentionParams<T>::each(self.attn_3d, f, pre + "attn_3d.");
    FFNParams<T>::each(self.coarse_ffn_2d, f, pre + "coarse_ffn_2d.");
    FFNParams<T>::each(self.coarse_ffn_3d, f, pre + "coarse_ffn_3d.");
    FFNParams<T>::each(self.refine_ffn_2d, f, pre + "refine_ffn_2d.");
    FFNParams<T>::each(self.refine_ffn_3d, f, pre + "refine_ffn_3d.");
  }

  std::size_t num_queries() const { return query_2d.rows(); }
  std::size_t dim() const { return query_2d.cols(); }
};

struct D2MConfig {
  std::size_t num_queries = 4;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t ffn_dim = 64;
  SimilarityMode similarity = SimilarityMode::kScaledDot;
};

inline D2MParams<Tensor> make_d2m(const D2MConfig& c, Rng& rng) {
  if (c.num_queries == 0) throw ContractError("d2m: query count must be positive");
  D2MParams<Tensor> p;
  p.query_2d = init_param({c.num_queries, c.dim}, c.dim, rng);
  p.query_3d = init_param({c.num_queries, c.dim}, c.dim, rng);
  p.attn_2d = make_attention(c.dim, c.heads, rng);
  p.attn_3d = make_attention(c.dim, c.heads, rng);
  p.coarse_ffn_2d = make_ffn(c.dim, c.ffn_dim, rng);
  p.coarse_ffn_3d = make_ffn(c.dim, c.ffn_dim, rng);
  p.refine_ffn_2d = make_ffn(c.dim, c.ffn_dim, rng);
  p.refine_ffn_3d = make_ffn(c.dim, c.ffn_dim, rng);
  p.similarity = c.similarity;
  return p;
}

// Exchanges every 2D parameter with its 3D counterpart.
template <class T>
D2MParams<T> swap_branches(D2MParams<T> p) {
  std::swap(p.query_2d, p.query_3d);
  std::swap(p.attn_2d, p.attn_3d);
  std::swap(p.coarse_ffn_2d, p.coarse_ffn_3d);
  std::swap(p.refine_ffn_2d, p.refine_ffn_3d);
  return p;
}

template <class T>
struct D2MIntermediate {
  T h_2d;
  T h_3d;
  T coarse_2d;  // T_C2D
  T coarse_3d;  // T_C3D
};

inline D2MIntermediate<Var> coarse_decouple(Var text, const D2MParams<Var>& p) {
  if (text.cols() != p.dim())
    throw ShapeError("coarse_decouple: text width " + std::to_string(text.cols()) +
                     " != query width " + std::to_string(p.dim()));
  Var h2 = mhca(p.query_2d, text, p.attn_2d);
  Var h3 = mhca(p.query_3d, text, p.attn_3d);
  return {h2, h3, add(ffn(h2, p.coarse_ffn_2d), h2), add(ffn(h3, p.coarse_ffn_3d), h3)};
}

inline Var normalize_rows(Var x) {
  return div(x, sqrt(sum_cols(mul(x, x))));
}

// softmax_rows(1 - S(q, k)); rows index q, columns index k.
inline Var inverted_attention(Var q_self, Var k_other, SimilarityMode mode) {
  if (q_self.shape() != k_other.shape())
    throw ShapeError("reverse_cross_attention: shapes differ, " + shape_str(q_self.shape()) +
                     " vs " + shape_str(k_other.shape()));
  Var sim;
  if (mode == SimilarityMode::kCosine) {
    sim = matmul(normalize_rows(q_self), transpose(normalize_rows(k_other)));
  } else {
    double s = 1.0 / std::sqrt(static_cast<double>(q_self.cols()));
    sim = scale(matmul(q_self, transpose(k_other)), s);
  }
  return softmax_rows(rsub_scalar(1.0, sim));
}

inline Var reverse_cross_attention(Var q_self, Var k_other, const FFNParams<Var>& f,
                                   SimilarityMode mode = SimilarityMode::kScaledDot) {
  Var weights = inverted_attention(q_self, k_other, mode);
  return add(q_self, ffn(matmul(weights, q_self), f));
}

struct D2MOutput {
  Var text_2d;  // T_2D
  Var text_3d;  // T_3D
  D2MIntermediate<Var> coarse;
};

inline D2MOutput d2m_forward(Var text, const D2MParams<Var>& p) {
  D2MIntermediate<Var> c = coarse_decouple(text, p);
  Var t2 = reverse_cross_attention(c.coarse_2d, c.coarse_3d, p.refine_ffn_2d, p.similarity);
  Var t3 = reverse_cross_attention(c.coarse_3d, c.coarse_2d, p.refine_ffn_3d, p.similarity);
  return {t2, t3, c};
}

inline std::pair<Tensor, Tensor> d2m_forward(const Tensor& text, const D2MParams<Tensor>& p) {
  Tape tape;
  D2MOutput out = d2m_forward(tape.constant(text), bind(tape, p, false));
  return {out.text_2d.value(), out.text_3d.value()};
}

inline D2MIntermediate<Tensor> coarse_decouple(const Tensor& text, const D2MParams<Tensor>& p) {
  Tape tape;
  D2MIntermediate<Var> c = coarse_decouple(tape.constant(text), bind(tape, p, false));
  return {c.h_2d.value(), c.h_3d.value(), c.coarse_2d.value(), c.coarse_3d.value()};
}

inline Tensor reverse_cross_attention(const Tensor& q_self, const Tensor& k_other,
                                      const FFNParams<Tensor>& f,
                                      SimilarityMode mode = SimilarityMode::kScaledDot) {
  Tape tape;
  return reverse_cross_attention(tape.constant(q_self), tape.constant(k_other),
                                 bind(tape, f, false), mode)
      .value();
}

inline Tensor inverted_attention(const Tensor& q_self, const Tensor& k_other,
                                 SimilarityMode mode = SimilarityMode::kScaledDot) {
  Tape tape;
  return inverted_attention(tape.constant(q_self), tape.constant(k_other), mode).value();
}

}  // namespace m3dvg

#endif  // M3DVG_D2M_HPP_
