#ifndef M3DVG_LOSSES_HPP_
#define M3DVG_LOSSES_HPP_

// Training losses, all recorded on the tape so they can be differentiated.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "m3dvg/core/ops.hpp"
#include "m3dvg/geometry.hpp"

namespace m3dvg {

inline constexpr std::size_t kNumClasses = 9;

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

inline constexpr double kProbFloor = 1e-12;

namespace detail {

inline void check_distributions(const Tensor& p, std::span<const std::size_t> target,
                                const char* op) {
  if (target.size() != p.rows())
    throw ShapeError(std::string(op) + ": " + std::to_string(target.size()) + " targets for " +
                     shape_str(p.shape()));
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row_span(i)) {
      if (v < 0.0) throw ContractError(std::string(op) + ": negative probability in row " +
                                       std::to_string(i));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw ContractError(std::string(op) + ": row " + std::to_string(i) + " sums to " +
                          std::to_string(s));
    if (target[i] >= p.cols())
      throw ContractError(std::string(op) + ": target " + std::to_string(target[i]) +
                          " out of range for " + std::to_string(p.cols()) + " classes");
  }
}

}  // namespace detail

// Mean over rows of -alpha (1 - p_t)^gamma log p_t.
inline Var focal_loss(Var probs, std::span<const std::size_t> target, FocalParams fp = {}) {
  detail::check_distributions(probs.value(), target, "focal_loss");
  Var pt = gather_cols(probs, target);
  for (double v : pt.value().data())
    if (v < kProbFloor) {
      warn("focal_loss: p_t below 1e-12, clamped");
      pt = clamp_min(pt, kProbFloor);
      break;
    }
  Var nll = scale(log(pt), -fp.alpha);
  if (fp.gamma == 0.0) return mean(nll);
  return mean(mul(pow_scalar(rsub_scalar(1.0, pt), fp.gamma), nll));
}

// Plain cross-entropy on probabilities.
inline Var cross_entropy(Var probs, std::span<const std::size_t> target) {
  detail::check_distributions(probs.value(), target, "cross_entropy");
  return scale(mean(log(clamp_min(gather_cols(probs, target), kProbFloor))), -1.0);
}

inline Var l1_loss(Var pred, Var target) {
  if (pred.shape() != target.shape())
    throw ShapeError("l1_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  return mean(abs(sub(pred, target)));
}

// Boxes as n x 4 rows (left, top, right, bottom).
inline Var giou_loss(Var pred, Var target) {
  if (pred.shape() != target.shape() || pred.cols() != 4)
    throw ShapeError("giou_loss: need matching n x 4 boxes, got " + shape_str(pred.shape()) +
                     " and " + shape_str(target.shape()));
  for (const Var* v : {&pred, &target})
    for (std::size_t i = 0; i < v->rows(); ++i) {
      auto r = v->value().row_span(i);
      if (!(r[2] > r[0] && r[3] > r[1]))
        throw ValidationError("giou_loss: invalid box in row " + std::to_string(i));
    }
  auto col = [](Var v, std::size_t j) { return slice_cols(v, j, 1); };
  Var pl = col(pred, 0), pt = col(pred, 1), pr = col(pred, 2), pb = col(pred, 3);
  Var tl = col(target, 0), tt = col(target, 1), tr = col(target, 2), tb = col(target, 3);
  Var area_p = mul(sub(pr, pl), sub(pb, pt));
  Var area_t = mul(sub(tr, tl), sub(tb, tt));
  Var iw = relu(sub(minimum(pr, tr), maximum(pl, tl)));
  Var ih = relu(sub(minimum(pb, tb), maximum(pt, tt)));
  Var inter = mul(iw, ih);
  Var uni = sub(add(area_p, area_t), inter);
  Var hull = mul(sub(maximum(pr, tr), minimum(pl, tl)), sub(maximum(pb, tb), minimum(pt, tt)));
  Var giou = sub(div(inter, uni), div(sub(hull, uni), hull));
  return mean(rsub_scalar(1.0, giou));
}

// 2D box from the projected 3D center (u, v) and edge offsets (l, t, r, b):
// (u - l, v - t, u + r, v + b).
inline Var box_from_lrtb(Var center_uv, Var lrtb) {
  if (center_uv.cols() != 2 || lrtb.cols() != 4 || center_uv.rows() != lrtb.rows())
    throw ShapeError("box_from_lrtb: need n x 2 centers and n x 4 offsets");
  Var u = slice_cols(center_uv, 0, 1), v = slice_cols(center_uv, 1, 1);
  std::vector<Var> parts{sub(u, slice_cols(lrtb, 0, 1)), sub(v, slice_cols(lrtb, 1, 1)),
                         add(u, slice_cols(lrtb, 2, 1)), add(v, slice_cols(lrtb, 3, 1))};
  return concat_cols(parts);
}

// Orientation bins with centers -pi + k * 2pi / B. An angle belongs to the
// bin whose residual lies in (-pi/B, pi/B]; angle 0 lands in bin B/2.
struct OrientationBins {
  std::size_t count = 12;

  double width() const { return 2.0 * std::numbers::pi / static_cast<double>(count); }
  double center(std::size_t k) const {
    return -std::numbers::pi + static_cast<double>(k) * width();
  }

  struct Assignment {
    std::size_t bin;
    double residual;
  };

  Assignment assign(double angle) const {
    if (count == 0) throw ContractError("OrientationBins: count must be positive");
    double a = normalize_angle(angle);
    double t = (a + std::numbers::pi) / width();
    auto k = static_cast<long long>(std::ceil(t - 0.5));
    auto n = static_cast<long long>(count);
    std::size_t bin = static_cast<std::size_t>(((k % n) + n) % n);
    return {bin, normalize_angle(a - center(bin))};
  }

  double decode(std::size_t bin, double residual) const {
    return normalize_angle(center(bin) + residual);
  }
};

// Cross-entropy over bins plus L1 on the target bin's residual, averaged
// over rows.
inline Var multibin_loss(Var logits, Var residuals, std::span<const double> angles,
                         const OrientationBins& bins = {}) {
  if (logits.cols() != bins.count || residuals.shape() != logits.shape() ||
      angles.size() != logits.rows())
    throw ShapeError("multibin_loss: need n x " + std::to_string(bins.count) +
                     " logits and residuals and n angles, got " + shape_str(logits.shape()) +
                     ", " + shape_str(residuals.shape()) + ", " + std::to_string(angles.size()));
  std::vector<std::size_t> idx(angles.size());
  std::vector<double> res(angles.size());
  for (std::size_t i = 0; i < angles.size(); ++i) {
    auto a = bins.assign(angles[i]);
    idx[i] = a.bin;
    res[i] = a.residual;
  }
  Tape& tape = *logits.tape;
  Var ce = scale(gather_cols(log_softmax_rows(logits), idx), -1.0);
  Var l1 = abs(sub(gather_cols(residuals, idx), tape.constant(Tensor({res.size(), 1}, res))));
  return mean(add(ce, l1));
}

// Laplace negative log-likelihood up to a constant: sqrt(2)/sigma |d - d*| + log sigma.
inline Var laplacian_depth_loss(Var depth, Var sigma, Var target) {
  if (depth.shape() != sigma.shape() || depth.shape() != target.shape())
    throw ShapeError("laplacian_depth_loss: mismatched shapes");
  for (double s : sigma.value().data())
    if (!(s > 0.0)) throw ContractError("laplacian_depth_loss: sigma must be positive");
  Var err = abs(sub(depth, target));
  return mean(add(scale(div(err, sigma), std::numbers::sqrt2), log(sigma)));
}

// 1 - IoU of two boxes sharing center and yaw, so only the dims matter.
inline Var size3d_iou_loss(Var pred_dims, Var target_dims) {
  if (pred_dims.shape() != target_dims.shape() || pred_dims.cols() != 3)
    throw ShapeError("size3d_iou_loss: need matching n x 3 dims");
  for (const Var* v : {&pred_dims, &target_dims})
    for (double d : v->value().data())
      if (!(d > 0.0)) throw ValidationError("size3d_iou_loss: dims must be positive");
  auto vol = [](Var d) {
    return mul(mul(slice_cols(d, 0, 1), slice_cols(d, 1, 1)), slice_cols(d, 2, 1));
  };
  Var inter = vol(minimum(pred_dims, target_dims));
  Var uni = sub(add(vol(pred_dims), vol(target_dims)), inter);
  return mean(rsub_scalar(1.0, div(inter, uni)));
}

// Linear-increasing depth discretization: bin widths grow linearly so that
// bin i spans a width proportional to i + 1.
struct DepthBins {
  std::size_t count = 80;
  double min_depth = 1e-3;
  double max_depth = 60.0;

  std::size_t bin_of(double depth) const {
    if (!(depth > 0)) throw ContractError("DepthBins: depth must be positive");
    double d = static_cast<double>(count);
    double size = 2.0 * (max_depth - min_depth) / (d * (1.0 + d));
    double idx = -0.5 + 0.5 * std::sqrt(1.0 + 8.0 * (depth - min_depth) / size);
    if (!(idx > 0)) return 0;
    return std::min(count - 1, static_cast<std::size_t>(std::floor(idx)));
  }

  double lower_edge(std::size_t i) const {
    double d = static_cast<double>(count), k = static_cast<double>(i);
    double size = 2.0 * (max_depth - min_depth) / (d * (1.0 + d));
    return min_depth + size * k * (k + 1) / 2.0;
  }
};

// Focal loss over depth bins per pixel, averaged over pixels.
inline Var depth_map_focal_loss(Var bin_probs, std::span<const std::size_t> target_bins,
                                FocalParams fp = {}) {
  return focal_loss(bin_probs, target_bins, fp);
}

struct LossWeights {
  double lambda1 = 2, lambda2 = 5, lambda3 = 2, lambda4 = 10;
};

template <class T>
struct LossTerms {
  T cls, lrtb, giou, xy3d;  // 2D head
  T size3d, orien, depth;   // 3D head
  T dmap;

  template <class F>
  static void each(const LossTerms& t, F&& f) {
    f("class", t.cls);
    f("lrtb", t.lrtb);
    f("giou", t.giou);
    f("xy3d", t.xy3d);
    f("size3d", t.size3d);
    f("orien", t.orien);
    f("depth", t.depth);
    f("dmap", t.dmap);
  }
};

struct LossBreakdown {
  LossTerms<double> terms;
  double l2d = 0, l3d = 0, overall = 0;
};

// Sums in the fixed order l2d = ((l1*cls + l2*lrtb) + l3*giou) + l4*xy3d,
// l3d = (size3d + orien) + depth, overall = (l2d + l3d) + dmap.
inline LossBreakdown aggregate(const LossTerms<double>& t, const LossWeights& w = {}) {
  LossTerms<double>::each(t, [](const char* name, double v) {
    if (!std::isfinite(v))
      throw NumericError(std::string("aggregate: non-finite loss component '") + name + "'");
  });
  LossBreakdown b;
  b.terms = t;
  b.l2d = w.lambda1 * t.cls + w.lambda2 * t.lrtb + w.lambda3 * t.giou + w.lambda4 * t.xy3d;
  b.l3d = t.size3d + t.orien + t.depth;
  b.overall = b.l2d + b.l3d + t.dmap;
  return b;
}

// The same sum on the tape; component values are checked the same way.
inline Var aggregate(const LossTerms<Var>& t, const LossWeights& w = {}) {
  LossTerms<Var>::each(t, [](const char* name, Var v) {
    if (v.rows() != 1 || v.cols() != 1)
      throw ShapeError(std::string("aggregate: component '") + name + "' is not scalar");
  });
  Var l2d = add(add(add(scale(t.cls, w.lambda1), scale(t.lrtb, w.lambda2)),
                    scale(t.giou, w.lambda3)),
                scale(t.xy3d, w.lambda4));
  Var l3d = add(add(t.size3d, t.orien), t.depth);
  return add(add(l2d, l3d), t.dmap);
}

}  // namespace m3dvg

#endif  // M3DVG_LOSSES_HPP_
