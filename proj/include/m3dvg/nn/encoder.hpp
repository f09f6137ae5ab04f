#ifndef M3DVG_NN_ENCODER_HPP_
#define M3DVG_NN_ENCODER_HPP_

// Visual (2D) and depth (3D) encoder layers. Both are the same three
// sublayers with a residual connection around each; they differ only in
// where the feed-forward block sits:
//
//   visual: self-attention -> cross-attention(text) -> FFN
//   depth:  self-attention -> FFN -> cross-attention(text)
//
// The visual layer uses plain self-attention where the original design
// has multi-scale deformable attention.

#include <array>
#include <span>
#include <string>

#include "m3dvg/nn/attention.hpp"

namespace m3dvg {

enum class Sublayer { kSelfAttention, kCrossAttention, kFeedForward };

using SublayerOrder = std::array<Sublayer, 3>;

inline constexpr SublayerOrder kVisualEncoderOrder{
    Sublayer::kSelfAttention, Sublayer::kCrossAttention, Sublayer::kFeedForward};
inline constexpr SublayerOrder kDepthEncoderOrder{
    Sublayer::kSelfAttention, Sublayer::kFeedForward, Sublayer::kCrossAttention};

template <class T>
struct EncoderLayerParams {
  AttentionParams<T> self_attn;
  AttentionParams<T> cross_attn;
  FFNParams<T> ffn;

  template <class F>
  auto map(F&& f) const {
    using U = std::invoke_result_t<F&, const T&>;
    return EncoderLayerParams<U>{self_attn.map(f), cross_attn.map(f), ffn.map(f)};
  }

  template <class Self, class F>
  static void each(Self& self, F& f, const std::string& pre) {
    AttentionParams<T>::each(self.self_attn, f, pre + "self_attn.");
    AttentionParams<T>::each(self.cross_attn, f, pre + "cross_attn.");
    FFNParams<T>::each(self.ffn, f, pre + "ffn.");
  }
};

inline EncoderLayerParams<Tensor> make_encoder_layer(std::size_t d, std::size_t heads,
                                                     std::size_t d_ff, Rng& rng) {
  auto self_attn = make_attention(d, heads, rng);
  auto cross_attn = make_attention(d, heads, rng);
  auto f = make_ffn(d, d_ff, rng);
  return {std::move(self_attn), std::move(cross_attn), std::move(f)};
}

inline Var encoder_layer(const SublayerOrder& order, Var x, Var text,
                         const EncoderLayerParams<Var>& p) {
  for (Sublayer s : order) {
    switch (s) {
      case Sublayer::kSelfAttention: x = add(x, mhsa(x, p.self_attn)); break;
      case Sublayer::kCrossAttention: x = add(x, mhca(x, text, p.cross_attn)); break;
      case Sublayer::kFeedForward: x = add(x, ffn(x, p.ffn)); break;
    }
  }
  return x;
}

inline Var visual_encoder_layer(Var v2d, Var t2d, const EncoderLayerParams<Var>& p) {
  return encoder_layer(kVisualEncoderOrder, v2d, t2d, p);
}

inline Var depth_encoder_layer(Var v3d, Var t3d, const EncoderLayerParams<Var>& p) {
  return encoder_layer(kDepthEncoderOrder, v3d, t3d, p);
}

inline Tensor visual_encoder_layer(const Tensor& v2d, const Tensor& t2d,
                                   const EncoderLayerParams<Tensor>& p) {
  Tape tape;
  return visual_encoder_layer(tape.constant(v2d), tape.constant(t2d), bind(tape, p, false))
      .value();
}

inline Tensor depth_encoder_layer(const Tensor& v3d, const Tensor& t3d,
                                  const EncoderLayerParams<Tensor>& p) {
  Tape tape;
  return depth_encoder_layer(tape.constant(v3d), tape.constant(t3d), bind(tape, p, false))
      .value();
}

}  // namespace m3dvg

#endif  // M3DVG_NN_ENCODER_HPP_
