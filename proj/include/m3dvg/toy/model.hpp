#ifndef M3DVG_TOY_MODEL_HPP_
#define M3DVG_TOY_MODEL_HPP_

// The toy grounding model. Per sample:
//   T_t --D2M--> (T_2D, T_3D)
//   V_2D = visual_encoder(V*_2D, T_2D)     V_3D = depth_encoder(V*_3D, T_3D)
//   adapter: V_2D += MHCA(V_2D, T_2D)      V_3D += MHCA(V_3D, T_3D)
//   decoder query q: q += MHCA(q, V_3D); q += MHCA(q, T_t); q += MHCA(q, V_2D);
//                    q += FFN(q)
// and the heads read the mean of the decoder query rows.
//
// Head outputs (B = batch size, R = visual rows):
//   class     B x 9 logits          lrtb     B x 4 (positive)
//   xy3d      B x 2                 size3d   B x 3 (positive, meters)
//   orient    B x 12 logits + B x 12 residuals
//   depth     B x 1 depth + B x 1 sigma (both positive)
//   dmap      B*R x 80 depth-bin logits, one row per V_3D row

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m3dvg/d2m.hpp"
#include "m3dvg/lexical.hpp"
#include "m3dvg/losses.hpp"
#include "m3dvg/nn/encoder.hpp"
#include "m3dvg/toy/synth.hpp"

namespace m3dvg::toy {

// Linear -> ReLU -> Linear.
template <class T>
struct MlpParams {
  Linear<T> in;
  Linear<T> out;

  template <class F>
  auto map(F&& f) const {
    using U = std::invoke_result_t<F&, const T&>;
    return MlpParams<U>{in.map(f), out.map(f)};
  }

  template <class Self, class F>
  static void each(Self& self, F& f, const std::string& pre) {
    Linear<T>::each(self.in, f, pre + "in.");
    Linear<T>::each(self.out, f, pre + "out.");
  }
};

inline MlpParams<Tensor> make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  return {make_linear(in, hidden, rng), make_linear(hidden, out, rng)};
}

inline Var apply(const MlpParams<Var>& p, Var x) { return apply(p.out, relu(apply(p.in, x))); }

struct ToyModelConfig {
  std::size_t dim = 16;
  std::size_t heads = 2;
  std::size_t ffn_dim = 32;
  std::size_t num_queries = 4;      // D2M queries per branch
  std::size_t decoder_queries = 1;
  std::size_t head_hidden = 32;
  SimilarityMode similarity = SimilarityMode::kScaledDot;
};

template <class T>
struct ToyModelParams {
  D2MParams<T> d2m;
  EncoderLayerParams<T> visual_encoder;
  EncoderLayerParams<T> depth_encoder;
  AttentionParams<T> adapter_2d;
  AttentionParams<T> adapter_3d;
  T decoder_query;
  AttentionParams<T> decoder_v3d;
  AttentionParams<T> decoder_text;
  AttentionParams<T> decoder_v2d;
  FFNParams<T> decoder_ffn;
  MlpParams<T> head_class;
  MlpParams<T> head_lrtb;
  MlpParams<T> head_xy3d;
  MlpParams<T> head_size3d;
  MlpParams<T> head_orient;  // 12 logits then 12 residuals
  MlpParams<T> head_depth;   // depth then log sigma
  MlpParams<T> head_dmap;

  template <class F>
  auto map(F&& f) const {
    using U = std::invoke_result_t<F&, const T&>;
    return ToyModelParams<U>{d2m.map(f),          visual_encoder.map(f), depth_encoder.map(f),
                             adapter_2d.map(f),   adapter_3d.map(f),     f(decoder_query),
                             decoder_v3d.map(f),  decoder_text.map(f),   decoder_v2d.map(f),
                             decoder_ffn.map(f),  head_class.map(f),     head_lrtb.map(f),
                             head_xy3d.map(f),    head_size3d.map(f),    head_orient.map(f),
                             head_depth.map(f),   head_dmap.map(f)};
  }

  template <class Self, class F>
  static void each(Self& self, F& f, const std::string& pre) {
    D2MParams<T>::each(self.d2m, f, pre + "d2m.");
    EncoderLayerParams<T>::each(self.visual_encoder, f, pre + "visual_encoder.");
    EncoderLayerParams<T>::each(self.depth_encoder, f, pre + "depth_encoder.");
    AttentionParams<T>::each(self.adapter_2d, f, pre + "adapter_2d.");
    AttentionParams<T>::each(self.adapter_3d, f, pre + "adapter_3d.");
    f(pre + "decoder.query", self.decoder_query);
    AttentionParams<T>::each(self.decoder_v3d, f, pre + "decoder.v3d.");
    AttentionParams<T>::each(self.decoder_text, f, pre + "decoder.text.");
    AttentionParams<T>::each(self.decoder_v2d, f, pre + "decoder.v2d.");
    FFNParams<T>::each(self.decoder_ffn, f, pre + "decoder.ffn.");
    MlpParams<T>::each(self.head_class, f, pre + "head.class.");
    MlpParams<T>::each(self.head_lrtb, f, pre + "head.lrtb.");
    MlpParams<T>::each(self.head_xy3d, f, pre + "head.xy3d.");
    MlpParams<T>::each(self.head_size3d, f, pre + "head.size3d.");
    MlpParams<T>::each(self.head_orient, f, pre + "head.orient.");
    MlpParams<T>::each(self.head_depth, f, pre + "head.depth.");
    MlpParams<T>::each(self.head_dmap, f, pre + "head.dmap.");
  }
};

inline constexpr std::size_t kOrientBins = 12;

inline ToyModelParams<Tensor> make_toy_model(const ToyModelConfig& c, Rng& rng) {
  if (c.decoder_queries == 0) throw ContractError("toy model: decoder_queries must be positive");
  const std::size_t d = c.dim, hh = c.head_hidden;
  ToyModelParams<Tensor> p;
  p.d2m = make_d2m({c.num_queries, d, c.heads, c.ffn_dim, c.similarity}, rng);
  p.visual_encoder = make_encoder_layer(d, c.heads, c.ffn_dim, rng);
  p.depth_encoder = make_encoder_layer(d, c.heads, c.ffn_dim, rng);
  p.adapter_2d = make_attention(d, c.heads, rng);
  p.adapter_3d = make_attention(d, c.heads, rng);
  p.decoder_query = init_param({c.decoder_queries, d}, d, rng);
  p.decoder_v3d = make_attention(d, c.heads, rng);
  p.decoder_text = make_attention(d, c.heads, rng);
  p.decoder_v2d = make_attention(d, c.heads, rng);
  p.decoder_ffn = make_ffn(d, c.ffn_dim, rng);
  p.head_class = make_mlp(d, hh, kNumClasses, rng);
  p.head_lrtb = make_mlp(d, hh, 4, rng);
  p.head_xy3d = make_mlp(d, hh, 2, rng);
  p.head_size3d = make_mlp(d, hh, 3, rng);
  p.head_orient = make_mlp(d, hh, 2 * kOrientBins, rng);
  p.head_depth = make_mlp(d, hh, 2, rng);
  p.head_dmap = make_mlp(d, hh, DepthBins{}.count, rng);
  return p;
}

// Structural ablation switches.
struct ToyWiring {
  bool d2m = true;          // off: T_t feeds both encoders directly
  bool misroute = false;    // exchange T_2D and T_3D before the encoders
};

template <class T>
struct ToyOutputs {
  T cls_logits, lrtb, xy3d, size3d, orient_logits, orient_residuals, depth, sigma, dmap_logits;
};

// Per-sample text streams, useful for probing.
struct TextStreams {
  Var text_2d;
  Var text_3d;
};

inline TextStreams text_streams(Var text, const ToyModelParams<Var>& p, const ToyWiring& w) {
  if (!w.d2m) return {text, text};
  D2MOutput o = d2m_forward(text, p.d2m);
  if (w.misroute) return {o.text_3d, o.text_2d};
  return {o.text_2d, o.text_3d};
}

struct SampleVars {
  Var text, visual_2d, visual_3d;
};

// Decoder query (pooled) and V_3D for one sample.
inline std::pair<Var, Var> toy_trunk(const SampleVars& s, const ToyModelParams<Var>& p,
                                     const ToyWiring& w) {
  TextStreams t = text_streams(s.text, p, w);
  Var v2 = visual_encoder_layer(s.visual_2d, t.text_2d, p.visual_encoder);
  Var v3 = depth_encoder_layer(s.visual_3d, t.text_3d, p.depth_encoder);
  v2 = add(v2, mhca(v2, t.text_2d, p.adapter_2d));
  v3 = add(v3, mhca(v3, t.text_3d, p.adapter_3d));
  Var q = p.decoder_query;
  q = add(q, mhca(q, v3, p.decoder_v3d));
  q = add(q, mhca(q, s.text, p.decoder_text));
  q = add(q, mhca(q, v2, p.decoder_v2d));
  q = add(q, ffn(q, p.decoder_ffn));
  if (q.rows() > 1) q = mean_rows(q);
  return {q, v3};
}

inline ToyOutputs<Var> toy_heads(Var q, Var v3, const ToyModelParams<Var>& p) {
  ToyOutputs<Var> o;
  Tape& tape = *q.tape;
  auto shift = [&](Var x, const std::vector<double>& offsets) {
    return add(x, tape.constant(Tensor({1, offsets.size()}, offsets)));
  };
  const double le = std::log(kMeanExtent);
  o.cls_logits = apply(p.head_class, q);
  o.lrtb = exp(shift(apply(p.head_lrtb, q), {le, le, le, le}));
  o.xy3d = shift(apply(p.head_xy3d, q), {0.5, 0.5});
  o.size3d = exp(shift(apply(p.head_size3d, q),
                       {std::log(kMeanDims[0]), std::log(kMeanDims[1]), std::log(kMeanDims[2])}));
  Var orient = apply(p.head_orient, q);
  o.orient_logits = slice_cols(orient, 0, kOrientBins);
  o.orient_residuals = slice_cols(orient, kOrientBins, kOrientBins);
  Var dep = apply(p.head_depth, q);
  o.depth = exp(add_scalar(slice_cols(dep, 0, 1), std::log(kMeanDepth)));
  o.sigma = exp(slice_cols(dep, 1, 1));
  o.dmap_logits = apply(p.head_dmap, v3);
  return o;
}

inline SampleVars sample_vars(Tape& tape, const SyntheticSample& s) {
  return {tape.constant(s.text), tape.constant(s.visual_2d), tape.constant(s.visual_3d)};
}

// Forward pass over a batch: heads run once on the stacked decoder queries.
inline ToyOutputs<Var> toy_forward(std::span<const SampleVars> batch, const ToyModelParams<Var>& p,
                                   const ToyWiring& w = {}) {
  if (batch.empty()) throw ContractError("toy_forward: empty batch");
  std::vector<Var> qs, v3s;
  for (const SampleVars& s : batch) {
    if (s.text.cols() != p.d2m.dim() || s.visual_2d.cols() != p.d2m.dim() ||
        s.visual_3d.cols() != p.d2m.dim())
      throw ShapeError("toy_forward: sample width does not match model dim " +
                       std::to_string(p.d2m.dim()));
    auto [q, v3] = toy_trunk(s, p, w);
    qs.push_back(q);
    v3s.push_back(v3);
  }
  return toy_heads(concat_rows(qs), concat_rows(v3s), p);
}

inline ToyOutputs<Var> toy_forward(Tape& tape, std::span<const SyntheticSample> batch,
                                   const ToyModelParams<Var>& p, const ToyWiring& w = {}) {
  std::vector<SampleVars> vars;
  for (const auto& s : batch) vars.push_back(sample_vars(tape, s));
  return toy_forward(vars, p, w);
}

// All loss terms of a batch against its synthetic targets.
inline LossTerms<Var> toy_loss_terms(const ToyOutputs<Var>& o,
                                     std::span<const SyntheticSample> batch) {
  Tape& tape = *o.cls_logits.tape;
  const std::size_t n = batch.size();
  const std::size_t rows = o.dmap_logits.rows() / n;
  std::vector<std::size_t> cls, dbins;
  std::vector<double> uv, box, depth, dims, yaw;
  DepthBins bins;
  for (const auto& s : batch) {
    const Targets& t = s.target;
    cls.push_back(t.class_id);
    uv.insert(uv.end(), t.center_uv.begin(), t.center_uv.end());
    box.insert(box.end(), t.box2d.begin(), t.box2d.end());
    depth.push_back(t.depth);
    dims.insert(dims.end(), t.dims.begin(), t.dims.end());
    yaw.push_back(t.yaw);
    dbins.insert(dbins.end(), rows, bins.bin_of(t.depth));
  }
  Var gt_uv = tape.constant(Tensor({n, 2}, uv));
  Var pred_box = box_from_lrtb(gt_uv, o.lrtb);
  Var gt_box = tape.constant(Tensor({n, 4}, box));
  LossTerms<Var> t;
  t.cls = focal_loss(softmax_rows(o.cls_logits), cls);
  t.lrtb = l1_loss(pred_box, gt_box);
  t.giou = giou_loss(pred_box, gt_box);
  t.xy3d = l1_loss(o.xy3d, gt_uv);
  t.size3d = size3d_iou_loss(o.size3d, tape.constant(Tensor({n, 3}, dims)));
  t.orien = multibin_loss(o.orient_logits, o.orient_residuals, yaw, OrientationBins{kOrientBins});
  t.depth = laplacian_depth_loss(o.depth, o.sigma, tape.constant(Tensor({n, 1}, depth)));
  t.dmap = depth_map_focal_loss(softmax_rows(o.dmap_logits), dbins);
  return t;
}

// Replaces the highest-certainty text tokens with zero rows, scoring each
// token against the mean visual 2D row.
inline Tensor lca_mask_tokens(const SyntheticSample& s, const MaskPolicy& policy,
                              std::uint64_t seed, std::uint64_t epoch, std::size_t index) {
  if (!policy.enabled || policy.probability <= 0) return s.text;
  const std::size_t n = s.text.rows(), d = s.text.cols();
  std::vector<double> region(d, 0.0);
  for (std::size_t r = 0; r < s.visual_2d.rows(); ++r)
    for (std::size_t i = 0; i < d; ++i) region[i] += s.visual_2d(r, i) / s.visual_2d.rows();
  std::vector<double> scores(n);
  for (std::size_t j = 0; j < n; ++j) scores[j] = cosine_similarity(s.text.row_span(j), region);
  CertaintyPartition part = kmeans_1d_k2(scores);
  if (!part.split || mask_draw(seed, epoch, std::to_string(index)) >= policy.probability)
    return s.text;
  // A split leaves at least one low-certainty token, so some text survives.
  Tensor out = s.text;
  for (std::size_t j : part.high)
    for (std::size_t i = 0; i < d; ++i) out(j, i) = 0.0;
  return out;
}

}  // namespace m3dvg::toy

#endif  // M3DVG_TOY_MODEL_HPP_
