#ifndef M3DVG_GEOMETRY_HPP_
#define M3DVG_GEOMETRY_HPP_

// Camera-frame geometry. Axes follow KITTI: x right, y down, z forward.
// A box's yaw rotates about the y axis; at yaw 0 its length runs along x.
// Box centers are geometric centers (not bottom-face centers).

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "m3dvg/core/error.hpp"
#include "m3dvg/core/random.hpp"

namespace m3dvg {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

struct Vec2 {
  double x = 0, y = 0;
};

// Maps any finite angle into (-pi, pi].
inline double normalize_angle(double a) {
  if (!std::isfinite(a)) throw NumericError("normalize_angle: non-finite angle");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  if (r > std::numbers::pi) r -= two_pi;
  return r;
}

struct Box3D {
  Vec3 center;
  double l = 1, w = 1, h = 1;  // extents along local x, z and y
  double yaw = 0;

  Box3D() = default;
  Box3D(Vec3 c, double length, double width, double height, double yaw_rad)
      : center(c), l(length), w(width), h(height), yaw(normalize_angle(yaw_rad)) {
    validate();
  }

  void validate() const {
    for (double v : {center.x, center.y, center.z, l, w, h, yaw})
      if (!std::isfinite(v)) throw ValidationError("Box3D: non-finite field");
    if (!(l > 0 && w > 0 && h > 0))
      throw ValidationError("Box3D: dims must be positive, got (" + std::to_string(l) + ", " +
                            std::to_string(w) + ", " + std::to_string(h) + ")");
  }

  double volume() const { return l * w * h; }
};

struct Box2D {
  double left = 0, top = 0, right = 1, bottom = 1;

  Box2D() = default;
  Box2D(double l, double t, double r, double b) : left(l), top(t), right(r), bottom(b) {
    validate();
  }

  void validate() const {
    for (double v : {left, top, right, bottom})
      if (!std::isfinite(v)) throw ValidationError("Box2D: non-finite coordinate");
    if (!(right > left && bottom > top))
      throw ValidationError("Box2D: need right > left and bottom > top");
  }

  double area() const { return (right - left) * (bottom - top); }
};

// Pinhole intrinsics plus the translation column of a KITTI P2 matrix:
//   u = (fx*x + cx*z + tx) / (z + tz),  v = (fy*y + cy*z + ty) / (z + tz).
struct CameraCalib {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  double tx = 0, ty = 0, tz = 0;

  void validate() const {
    for (double v : {fx, fy, cx, cy, tx, ty, tz})
      if (!std::isfinite(v)) throw ValidationError("CameraCalib: non-finite entry");
    if (!(fx > 0 && fy > 0)) throw ValidationError("CameraCalib: fx and fy must be positive");
  }

  static CameraCalib from_p2(const std::array<double, 12>& p) {
    CameraCalib c{p[0], p[5], p[2], p[6], p[3], p[7], p[11]};
    c.validate();
    return c;
  }
};

inline Vec2 project_center(const Vec3& p, const CameraCalib& c) {
  if (!(p.z > 0)) throw ContractError("project_center: point behind camera (z <= 0)");
  double denom = p.z + c.tz;
  if (!(denom > 0)) throw ContractError("project_center: point behind camera after offset");
  return {(c.fx * p.x + c.cx * p.z + c.tx) / denom, (c.fy * p.y + c.cy * p.z + c.ty) / denom};
}

inline Vec3 backproject_center(double u, double v, double depth, const CameraCalib& c) {
  if (!(depth > 0)) throw ContractError("backproject_center: depth must be positive");
  double denom = depth + c.tz;
  return {(u * denom - c.cx * depth - c.tx) / c.fx, (v * denom - c.cy * depth - c.ty) / c.fy,
          depth};
}

inline double iou_2d(const Box2D& a, const Box2D& b) {
  double iw = std::max(0.0, std::min(a.right, b.right) - std::max(a.left, b.left));
  double ih = std::max(0.0, std::min(a.bottom, b.bottom) - std::max(a.top, b.top));
  double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

inline double giou_2d(const Box2D& a, const Box2D& b) {
  double iw = std::max(0.0, std::min(a.right, b.right) - std::max(a.left, b.left));
  double ih = std::max(0.0, std::min(a.bottom, b.bottom) - std::max(a.top, b.top));
  double inter = iw * ih;
  double uni = a.area() + b.area() - inter;
  double hull = (std::max(a.right, b.right) - std::min(a.left, b.left)) *
                (std::max(a.bottom, b.bottom) - std::min(a.top, b.top));
  return inter / uni - (hull - uni) / hull;
}

// Ground-plane footprint as (x, z) points, counter-clockwise in that plane.
inline std::array<Vec2, 4> bev_corners(const Box3D& b) {
  double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double lx[4] = {0.5, -0.5, -0.5, 0.5};
  const double lz[4] = {0.5, 0.5, -0.5, -0.5};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) {
    double x = lx[i] * b.l, z = lz[i] * b.w;
    out[i] = {b.center.x + c * x + s * z, b.center.z - s * x + c * z};
  }
  return out;
}

// Eight corners: bottom face (larger y) first, then top face, each in
// bev_corners order.
inline std::array<Vec3, 8> corners_3d(const Box3D& b) {
  auto f = bev_corners(b);
  std::array<Vec3, 8> out;
  for (int i = 0; i < 4; ++i) {
    out[i] = {f[i].x, b.center.y + b.h / 2, f[i].y};
    out[i + 4] = {f[i].x, b.center.y - b.h / 2, f[i].y};
  }
  return out;
}

inline double polygon_area(const std::vector<Vec2>& p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % p.size()];
    a += u.x * v.y - v.x * u.y;
  }
  return 0.5 * a;
}

namespace detail {

inline double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace detail

// Sutherland-Hodgman: clips `subject` by the convex counter-clockwise
// polygon `clip`.
inline std::vector<Vec2> clip_convex(std::vector<Vec2> subject, const std::vector<Vec2>& clip) {
  constexpr double eps = 1e-12;
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % clip.size()];
    std::vector<Vec2> input;
    input.swap(subject);
    for (std::size_t i = 0; i < input.size(); ++i) {
      const Vec2& p = input[i];
      const Vec2& q = input[(i + 1) % input.size()];
      double dp = detail::cross(a, b, p), dq = detail::cross(a, b, q);
      bool pin = dp >= -eps, qin = dq >= -eps;
      if (pin) subject.push_back(p);
      if (pin != qin) {
        double t = dp / (dp - dq);
        subject.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
  }
  return subject;
}

struct Iou3dResult {
  double iou = 0.0;
  bool degenerate = false;  // clipping produced an inconsistent polygon
};

inline Iou3dResult iou_3d_checked(const Box3D& a, const Box3D& b) {
  a.validate();
  b.validate();
  double y_overlap = std::min(a.center.y + a.h / 2, b.center.y + b.h / 2) -
                     std::max(a.center.y - a.h / 2, b.center.y - b.h / 2);
  if (y_overlap <= 0) return {};
  auto ca = bev_corners(a), cb = bev_corners(b);
  std::vector<Vec2> pa(ca.begin(), ca.end()), pb(cb.begin(), cb.end());
  double area = polygon_area(clip_convex(pa, pb));
  double limit = std::min(a.l * a.w, b.l * b.w);
  if (!std::isfinite(area) || area < -1e-9 * limit || area > limit * (1 + 1e-9))
    return {0.0, true};
  double inter = std::max(area, 0.0) * y_overlap;
  double iou = inter / (a.volume() + b.volume() - inter);
  return {std::clamp(iou, 0.0, 1.0), false};
}

inline double iou_3d(const Box3D& a, const Box3D& b) {
  Iou3dResult r = iou_3d_checked(a, b);
  if (r.degenerate) warn("iou_3d: degenerate intersection polygon, returning 0");
  return r.iou;
}

inline bool contains(const Box3D& b, const Vec3& p) {
  double dx = p.x - b.center.x, dz = p.z - b.center.z;
  double c = std::cos(b.yaw), s = std::sin(b.yaw);
  double lx = c * dx - s * dz, lz = s * dx + c * dz;
  return std::abs(lx) <= b.l / 2 && std::abs(lz) <= b.w / 2 &&
         std::abs(p.y - b.center.y) <= b.h / 2;
}

struct MonteCarloEstimate {
  double iou = 0.0;
  double std_error = 0.0;
  std::size_t in_union = 0;
  std::size_t in_both = 0;
};

inline constexpr std::size_t kMonteCarloShard = 1u << 16;

// Uniform samples over the bounding box of both boxes. Samples come in
// fixed-size shards, each with its own seeded stream, so the estimate does
// not depend on how many threads process them.
inline MonteCarloEstimate iou3d_monte_carlo(const Box3D& a, const Box3D& b,
                                            std::size_t n_samples, std::uint64_t seed,
                                            unsigned threads = 1) {
  if (n_samples < 1000) throw ContractError("iou3d_monte_carlo: need at least 1000 samples");
  a.validate();
  b.validate();
  Vec3 lo{INFINITY, INFINITY, INFINITY}, hi{-INFINITY, -INFINITY, -INFINITY};
  for (const Box3D* box : {&a, &b})
    for (const Vec3& c : corners_3d(*box)) {
      lo = {std::min(lo.x, c.x), std::min(lo.y, c.y), std::min(lo.z, c.z)};
      hi = {std::max(hi.x, c.x), std::max(hi.y, c.y), std::max(hi.z, c.z)};
    }
  std::size_t shards = (n_samples + kMonteCarloShard - 1) / kMonteCarloShard;
  std::vector<std::size_t> both(shards, 0), either(shards, 0);
  auto run = [&](std::size_t s) {
    Rng rng(mix_seed(seed, s));
    std::size_t count = std::min(kMonteCarloShard, n_samples - s * kMonteCarloShard);
    for (std::size_t i = 0; i < count; ++i) {
      Vec3 p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
      bool ia = contains(a, p), ib = contains(b, p);
      both[s] += ia && ib;
      either[s] += ia || ib;
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(shards)));
  if (threads == 1) {
    for (std::size_t s = 0; s < shards; ++s) run(s);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t s = t; s < shards; s += threads) run(s);
      });
  }
  MonteCarloEstimate est;
  for (std::size_t s = 0; s < shards; ++s) {
    est.in_both += both[s];
    est.in_union += either[s];
  }
  if (est.in_union == 0) return est;
  double p = static_cast<double>(est.in_both) / static_cast<double>(est.in_union);
  est.iou = p;
  est.std_error = std::sqrt(p * (1 - p) / static_cast<double>(est.in_union));
  return est;
}

}  // namespace m3dvg

#endif  // M3DVG_GEOMETRY_HPP_
