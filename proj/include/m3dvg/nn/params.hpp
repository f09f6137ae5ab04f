#ifndef M3DVG_NN_PARAMS_HPP_
#define M3DVG_NN_PARAMS_HPP_

// Parameter structs are templates over the leaf type: `P<Tensor>` holds
// values, `P<Var>` the same parameters bound to a tape. Every struct offers
//   map(f)             -> P<U>, applying f to each leaf
//   each(self, f, pre) -> calls f(name, leaf) in a fixed order
// which is all that binding, packing, checkpointing and the optimizer need.

#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "m3dvg/core/ops.hpp"
#include "m3dvg/core/random.hpp"

namespace m3dvg {

// y = x W + b, with W: in x out and b: 1 x out.
template <class T>
struct Linear {
  T weight;
  T bias;

  template <class F>
  auto map(F&& f) const {
    using U = std::invoke_result_t<F&, const T&>;
    return Linear<U>{f(weight), f(bias)};
  }

  template <class Self, class F>
  static void each(Self& self, F& f, const std::string& pre) {
    f(pre + "weight", self.weight);
    f(pre + "bias", self.bias);
  }
};

inline Linear<Tensor> make_linear(std::size_t in, std::size_t out, Rng& rng) {
  return {init_param({in, out}, in, rng), init_param({1, out}, in, rng)};
}

inline Var apply(const Linear<Var>& l, Var x) { return add(matmul(x, l.weight), l.bias); }

template <class P, class F>
void visit_params(P& params, F&& f) {
  std::remove_cvref_t<P>::each(params, f, "");
}

// Binds every tensor of `params` to `tape` as a leaf.
template <class P>
auto bind(Tape& tape, const P& params, bool trainable = true) {
  return params.map([&](const Tensor& t) { return tape.leaf(t, trainable); });
}

template <class P>
auto values_of(const P& bound) {
  return bound.map([](const Var& v) { return v.value(); });
}

template <class P>
auto grads_of(const P& bound, const Gradients& g) {
  return bound.map([&](const Var& v) { return g[v]; });
}

template <class P>
std::size_t param_count(const P& params) {
  std::size_t n = 0;
  visit_params(params, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

// Flattens all parameters into a single 1xN row.
template <class P>
Tensor pack(const P& params) {
  std::vector<double> flat;
  visit_params(params, [&](const std::string&, const Tensor& t) {
    flat.insert(flat.end(), t.data().begin(), t.data().end());
  });
  return Tensor::row(std::move(flat));
}

// Inverse of pack on a tape: slices `flat` back into the layout of `like`.
template <class P>
auto unpack(Var flat, const P& like) {
  std::size_t offset = 0;
  return like.map([&](const Tensor& t) {
    Var part = slice_cols(flat, offset, t.size());
    offset += t.size();
    return reshape(part, {t.rows(), t.cols()});
  });
}

}  // namespace m3dvg

#endif  // M3DVG_NN_PARAMS_HPP_
