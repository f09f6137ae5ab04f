#ifndef M3DVG_NN_ATTENTION_HPP_
#define M3DVG_NN_ATTENTION_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "m3dvg/nn/params.hpp"

namespace m3dvg {

// Multi-head attention: per head softmax(Q K^T / sqrt(d/h)) V, heads
// concatenated, then the output projection. The key projection has no bias:
// it would shift every logit of a row equally and never reach the output.
template <class T>
struct AttentionParams {
  Linear<T> q;
  T k;  // d x d
  Linear<T> v;
  Linear<T> o;
  std::size_t heads = 1;

  template <class F>
  auto map(F&& f) const {
    using U = std::invoke_result_t<F&, const T&>;
    return AttentionParams<U>{q.map(f), f(k), v.map(f), o.map(f), heads};
  }

  template <class Self, class F>
  static void each(Self& self, F& f, const std::string& pre) {
    Linear<T>::each(self.q, f, pre + "q.");
    f(pre + "k.weight", self.k);
    Linear<T>::each(self.v, f, pre + "v.");
    Linear<T>::each(self.o, f, pre + "o.");
  }

  std::size_t dim() const { return q.weight.rows(); }
};

inline AttentionParams<Tensor> make_attention(std::size_t d, std::size_t heads, Rng& rng) {
  if (heads == 0 || d % heads != 0)
    throw ContractError("attention: model dim " + std::to_string(d) +
                        " not divisible by head count " + std::to_string(heads));
  auto q = make_linear(d, d, rng);
  Tensor k = init_param({d, d}, d, rng);
  auto v = make_linear(d, d, rng);
  auto o = make_linear(d, d, rng);
  return {std::move(q), std::move(k), std::move(v), std::move(o), heads};
}

enum class Activation { kRelu, kLinear };

// Two affine maps around an activation: d -> d_ff -> d.
template <class T>
struct FFNParams {
  Linear<T> in;
  Linear<T> out;
  Activation activation = Activation::kRelu;

  template <class F>
  auto map(F&& f) const {
    using U = std::invoke_result_t<F&, const T&>;
    return FFNParams<U>{in.map(f), out.map(f), activation};
  }

  template <class Self, class F>
  static void each(Self& self, F& f, const std::string& pre) {
    Linear<T>::each(self.in, f, pre + "in.");
    Linear<T>::each(self.out, f, pre + "out.");
  }
};

inline FFNParams<Tensor> make_ffn(std::size_t d, std::size_t d_ff, Rng& rng) {
  return {make_linear(d, d_ff, rng), make_linear(d_ff, d, rng), Activation::kRelu};
}

inline Var ffn(Var x, const FFNParams<Var>& p) {
  Var h = apply(p.in, x);
  if (p.activation == Activation::kRelu) h = relu(h);
  return apply(p.out, h);
}

struct AttentionOutput {
  Var out;
  std::vector<Tensor> weights;  // one (m x n) row-stochastic map per head
};

inline AttentionOutput mhca_with_weights(Var q_in, Var kv_in, const AttentionParams<Var>& p) {
  std::size_t d = p.dim();
  if (q_in.cols() != d || kv_in.cols() != d)
    throw ShapeError("mhca: expected width " + std::to_string(d) + ", got queries " +
                     shape_str(q_in.shape()) + " and keys " + shape_str(kv_in.shape()));
  if (p.heads == 0 || d % p.heads != 0)
    throw ContractError("mhca: model dim not divisible by head count");
  std::size_t dh = d / p.heads;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var q = apply(p.q, q_in);
  Var k = matmul(kv_in, p.k);
  Var v = apply(p.v, kv_in);
  AttentionOutput result;
  std::vector<Var> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Var qh = p.heads == 1 ? q : slice_cols(q, h * dh, dh);
    Var kh = p.heads == 1 ? k : slice_cols(k, h * dh, dh);
    Var vh = p.heads == 1 ? v : slice_cols(v, h * dh, dh);
    Var a = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    result.weights.push_back(a.value());
    heads.push_back(matmul(a, vh));
  }
  Var cat = p.heads == 1 ? heads[0] : concat_cols(heads);
  result.out = apply(p.o, cat);
  return result;
}

inline Var mhca(Var q_in, Var kv_in, const AttentionParams<Var>& p) {
  return mhca_with_weights(q_in, kv_in, p).out;
}

inline Var mhsa(Var x, const AttentionParams<Var>& p) { return mhca(x, x, p); }

inline Tensor mhca(const Tensor& q_in, const Tensor& kv_in, const AttentionParams<Tensor>& p) {
  Tape tape;
  return mhca(tape.constant(q_in), tape.constant(kv_in), bind(tape, p, false)).value();
}

inline Tensor mhsa(const Tensor& x, const AttentionParams<Tensor>& p) { return mhca(x, x, p); }

inline Tensor ffn(const Tensor& x, const FFNParams<Tensor>& p) {
  Tape tape;
  return ffn(tape.constant(x), bind(tape, p, false)).value();
}

}  // namespace m3dvg

#endif  // M3DVG_NN_ATTENTION_HPP_
