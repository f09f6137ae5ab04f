#ifndef M3DVG_GRADCHECK_SUITE_HPP_
#define M3DVG_GRADCHECK_SUITE_HPP_

// Named finite-difference checks for every differentiable op of the
// attention, D2M and loss modules and for the toy pipeline. Test points are
// drawn from the seed; points for |.|, min and max keep clear of their kinks.

#include <algorithm>
#include <initializer_list>
#include <string>
#include <vector>

#include "m3dvg/core/gradcheck.hpp"
#include "m3dvg/d2m.hpp"
#include "m3dvg/losses.hpp"
#include "m3dvg/nn/encoder.hpp"
#include "m3dvg/toy/train.hpp"

namespace m3dvg {

inline constexpr double kGradCheckTolerance = 1e-5;

struct OpCheck {
  std::string scope;
  std::string op;
  std::size_t inputs = 0;  // number of checked coordinates
  GradCheckResult result;

  bool ok() const { return result.max_rel_error < kGradCheckTolerance; }
};

inline const std::vector<std::string>& gradcheck_scopes() {
  static const std::vector<std::string> s{"attention", "d2m", "losses", "pipeline"};
  return s;
}

namespace detail {

inline Tensor row_of(std::initializer_list<const Tensor*> parts) {
  std::vector<double> all;
  for (const Tensor* t : parts) all.insert(all.end(), t->data().begin(), t->data().end());
  return Tensor::row(std::move(all));
}

// Packs a parameter struct followed by extra input tensors into one row.
template <class P>
Tensor pack_with(const P& p, std::initializer_list<const Tensor*> extra) {
  std::vector<double> all = pack(p).values();
  for (const Tensor* t : extra) all.insert(all.end(), t->data().begin(), t->data().end());
  return Tensor::row(std::move(all));
}

class Inputs {
 public:
  explicit Inputs(Var flat) : flat_(flat) {}
  template <class P>
  auto params(const P& like) {
    std::size_t n = param_count(like);
    auto out = unpack(slice_cols(flat_, off_, n), like);
    off_ += n;
    return out;
  }
  Var tensor(const Tensor& like) {
    Var v = reshape(slice_cols(flat_, off_, like.size()), like.shape());
    off_ += like.size();
    return v;
  }

 private:
  Var flat_;
  std::size_t off_ = 0;
};

inline void add_check(std::vector<OpCheck>& out, const std::string& scope, const std::string& op,
                      const TapeFunction& f, const Tensor& x) {
  out.push_back({scope, op, x.size(), grad_check(f, x)});
}

inline void attention_checks(std::vector<OpCheck>& out, Rng& rng) {
  const std::size_t d = 4;
  auto attn = make_attention(d, 2, rng);
  auto ff = make_ffn(d, 8, rng);
  Tensor x = random_uniform({4, d}, -1, 1, rng), kv = random_uniform({3, d}, -1, 1, rng);
  Tensor r4 = random_uniform({4, d}, -1, 1, rng);
  add_check(out, "attention", "mhsa",
            [&](Tape& t, Var flat) {
              Inputs in(flat);
              auto p = in.params(attn);
              return sum(mul(mhsa(in.tensor(x), p), t.constant(r4)));
            },
            pack_with(attn, {&x}));
  add_check(out, "attention", "mhca",
            [&](Tape& t, Var flat) {
              Inputs in(flat);
              auto p = in.params(attn);
              Var q = in.tensor(x);
              return sum(mul(mhca(q, in.tensor(kv), p), t.constant(r4)));
            },
            pack_with(attn, {&x, &kv}));
  add_check(out, "attention", "ffn",
            [&](Tape& t, Var flat) {
              Inputs in(flat);
              auto p = in.params(ff);
              return sum(mul(ffn(in.tensor(x), p), t.constant(r4)));
            },
            pack_with(ff, {&x}));
  auto layer = make_encoder_layer(d, 2, 8, rng);
  for (auto [name, order] : {std::pair{"visual_encoder_layer", &kVisualEncoderOrder},
                             std::pair{"depth_encoder_layer", &kDepthEncoderOrder}}) {
    const SublayerOrder* ord = order;
    add_check(out, "attention", name,
              [&, ord](Tape& t, Var flat) {
                Inputs in(flat);
                auto p = in.params(layer);
                Var v = in.tensor(x);
                return sum(mul(encoder_layer(*ord, v, in.tensor(kv), p), t.constant(r4)));
              },
              pack_with(layer, {&x, &kv}));
  }
}

inline void d2m_checks(std::vector<OpCheck>& out, Rng& rng) {
  const std::size_t d = 4, m = 3;
  Tensor q = random_uniform({m, d}, -1, 1, rng), k = random_uniform({m, d}, -1, 1, rng);
  Tensor rq = random_uniform({m, d}, -1, 1, rng), rm = random_uniform({m, m}, -1, 1, rng);
  auto ff = make_ffn(d, 8, rng);
  for (SimilarityMode mode : {SimilarityMode::kScaledDot, SimilarityMode::kCosine}) {
    const std::string tag = std::string("[") + to_string(mode) + "]";
    add_check(out, "d2m", "inverted_attention" + tag,
              [&](Tape& t, Var flat) {
                Inputs in(flat);
                Var a = in.tensor(q);
                return sum(mul(inverted_attention(a, in.tensor(k), mode), t.constant(rm)));
              },
              row_of({&q, &k}));
    add_check(out, "d2m", "reverse_cross_attention" + tag,
              [&](Tape& t, Var flat) {
                Inputs in(flat);
                auto p = in.params(ff);
                Var a = in.tensor(q);
                return sum(mul(reverse_cross_attention(a, in.tensor(k), p, mode), t.constant(rq)));
              },
              pack_with(ff, {&q, &k}));
    D2MConfig c;
    c.num_queries = m;
    c.dim = d;
    c.heads = 2;
    c.ffn_dim = 8;
    c.similarity = mode;
    auto p = make_d2m(c, rng);
    Tensor text = random_uniform({5, d}, -3, 3, rng);
    Tensor r3 = random_uniform({m, d}, -1, 1, rng);
    add_check(out, "d2m", "d2m_forward" + tag,
              [&](Tape& t, Var flat) {
                Inputs in(flat);
                auto bp = in.params(p);
                D2MOutput o = d2m_forward(in.tensor(text), bp);
                return add(sum(mul(o.text_2d, t.constant(rq))), sum(mul(o.text_3d, t.constant(r3))));
              },
              pack_with(p, {&text}));
  }
}

inline void loss_checks(std::vector<OpCheck>& out, Rng& rng) {
  const std::vector<std::size_t> cls{3, 0, 8};
  add_check(out, "losses", "focal_loss",
            [&](Tape&, Var x) { return focal_loss(softmax_rows(x), cls); },
            random_uniform({3, kNumClasses}, -2, 2, rng));
  add_check(out, "losses", "cross_entropy",
            [&](Tape&, Var x) { return cross_entropy(softmax_rows(x), cls); },
            random_uniform({3, kNumClasses}, -2, 2, rng));

  Tensor target = random_uniform({3, 4}, -2, 2, rng);
  Tensor near = target;
  for (double& v : near.data()) v += rng.uniform(0.1, 0.5) * (rng.uniform() < 0.5 ? -1 : 1);
  add_check(out, "losses", "l1_loss",
            [&](Tape& t, Var x) { return l1_loss(x, t.constant(target)); }, near);

  Tensor gt_box = Tensor::matrix({{0, 0, 2, 1}, {1, 1, 3, 4}});
  add_check(out, "losses", "giou_loss",
            [&](Tape& t, Var x) { return giou_loss(x, t.constant(gt_box)); },
            Tensor::matrix({{0.3, -0.2, 2.6, 1.4}, {4, 0.5, 5, 1.5}}));

  Tensor lrtb_gt = Tensor::matrix({{12, 7, 15, 9}});
  add_check(out, "losses", "box_from_lrtb",
            [&](Tape& t, Var x) {
              Var gt = box_from_lrtb(t.constant(Tensor::row({100, 50})), t.constant(lrtb_gt));
              return giou_loss(box_from_lrtb(slice_cols(x, 0, 2), slice_cols(x, 2, 4)), gt);
            },
            Tensor::row({103, 48, 10, 8, 14, 12.5}));

  const std::vector<double> angles{0.4, -2.9, 3.0};
  add_check(out, "losses", "multibin_loss",
            [&](Tape&, Var x) {
              return multibin_loss(slice_cols(x, 0, 12), slice_cols(x, 12, 12), angles);
            },
            random_uniform({3, 24}, 0.3, 0.5, rng));

  add_check(out, "losses", "laplacian_depth_loss",
            [&](Tape& t, Var x) {
              return laplacian_depth_loss(slice_cols(x, 0, 1), slice_cols(x, 1, 1),
                                          t.constant(Tensor::scalar(20.0)));
            },
            Tensor::row({23.5, 1.7}));

  Tensor dims_gt = Tensor::matrix({{3.9, 1.6, 1.5}, {0.8, 0.6, 1.7}});
  add_check(out, "losses", "size3d_iou_loss",
            [&](Tape& t, Var x) { return size3d_iou_loss(x, t.constant(dims_gt)); },
            Tensor::matrix({{3.5, 1.8, 1.45}, {1.0, 0.5, 1.6}}));

  const std::vector<std::size_t> bins{10, 41};
  add_check(out, "losses", "depth_map_focal_loss",
            [&](Tape&, Var x) { return depth_map_focal_loss(softmax_rows(x), bins); },
            random_uniform({2, DepthBins{}.count}, -1, 1, rng));

  add_check(out, "losses", "aggregate",
            [&](Tape&, Var x) {
              auto s = [&](std::size_t i) { return pow_scalar(slice_cols(x, i, 1), 2.0); };
              return aggregate(LossTerms<Var>{s(0), s(1), s(2), s(3), s(4), s(5), s(6), s(7)});
            },
            random_uniform({1, 8}, 0.5, 1.5, rng));
}

}  // namespace detail

// The tiny pipeline configuration: d = 8, m = 2.
inline toy::ToyConfig gradcheck_toy_config() {
  toy::ToyConfig c;
  c.synth.k2 = 2;
  c.synth.k3 = 2;
  c.synth.dim = 8;
  c.synth.visual_rows = 2;
  c.synth.filler_tokens = 1;
  c.model.dim = 8;
  c.model.heads = 2;
  c.model.ffn_dim = 16;
  c.model.num_queries = 2;
  c.model.head_hidden = 8;
  c.train.train_samples = 2;
  c.train.probe_samples = 4;
  return c;
}

namespace detail {

// Overall loss of a two-sample batch, checked with respect to every
// parameter coordinate, and along random directions through all of them.
inline void pipeline_checks(std::vector<OpCheck>& out, std::uint64_t seed) {
  const toy::ToyConfig c = gradcheck_toy_config();
  const auto p = toy::init_toy_model(c, seed);
  const auto data = toy::make_toy_data(c, seed);
  std::span<const toy::SyntheticSample> batch(data.train);
  auto loss = [&](Tape& tape, const toy::ToyModelParams<Var>& bp) {
    return aggregate(toy::toy_loss_terms(toy::toy_forward(tape, batch, bp, c.wiring), batch),
                     c.weights);
  };
  std::vector<const Tensor*> features;
  for (const auto& s : batch)
    for (const Tensor* t : {&s.text, &s.visual_2d, &s.visual_3d}) features.push_back(t);
  std::vector<double> flat_inputs;
  for (const Tensor* t : features)
    flat_inputs.insert(flat_inputs.end(), t->data().begin(), t->data().end());
  add_check(out, "pipeline", "toy_loss[every input feature]",
            [&](Tape& t, Var flat) {
              Inputs in(flat);
              std::vector<toy::SampleVars> vars;
              for (std::size_t i = 0; i < features.size(); i += 3) {
                Var text = in.tensor(*features[i]);
                Var v2 = in.tensor(*features[i + 1]);
                vars.push_back({text, v2, in.tensor(*features[i + 2])});
              }
              auto bp = bind(t, p, false);
              return aggregate(toy::toy_loss_terms(toy::toy_forward(vars, bp, c.wiring), batch),
                               c.weights);
            },
            Tensor::row(std::move(flat_inputs)));
  add_check(out, "pipeline", "toy_loss[every parameter]",
            [&](Tape& t, Var flat) { return loss(t, unpack(flat, p)); }, pack(p));

  const std::size_t k = 8;
  Rng rng(mix_seed(seed, 0x6c));
  Tensor dirs = random_normal({k, param_count(p)}, 1.0, rng);
  Tensor base = pack(p);
  add_check(out, "pipeline", "toy_loss[random directions]",
            [&](Tape& t, Var coef) {
              return loss(t, unpack(add(t.constant(base), matmul(coef, t.constant(dirs))), p));
            },
            Tensor::zeros({1, k}));
}

}  // namespace detail

// Runs one scope, or all of them for "all". Throws ContractError otherwise.
inline std::vector<OpCheck> run_gradcheck_suite(const std::string& scope, std::uint64_t seed) {
  bool all = scope == "all";
  if (!all && std::find(gradcheck_scopes().begin(), gradcheck_scopes().end(), scope) ==
                  gradcheck_scopes().end())
    throw ContractError("unknown gradcheck scope '" + scope + "'");
  std::vector<OpCheck> out;
  if (all || scope == "attention") {
    Rng rng(mix_seed(seed, 0xa1));
    detail::attention_checks(out, rng);
  }
  if (all || scope == "d2m") {
    Rng rng(mix_seed(seed, 0xd2));
    detail::d2m_checks(out, rng);
  }
  if (all || scope == "losses") {
    Rng rng(mix_seed(seed, 0x1055));
    detail::loss_checks(out, rng);
  }
  if (all || scope == "pipeline") detail::pipeline_checks(out, seed);
  return out;
}

}  // namespace m3dvg

#endif  // M3DVG_GRADCHECK_SUITE_HPP_
