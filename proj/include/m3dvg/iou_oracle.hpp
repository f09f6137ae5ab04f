#ifndef M3DVG_IOU_ORACLE_HPP_
#define M3DVG_IOU_ORACLE_HPP_

// Compares the closed-form 3D IoU against Monte-Carlo estimates on random
// box pairs, and checks symmetry, identity and rigid-motion invariance.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "m3dvg/core/random.hpp"
#include "m3dvg/geometry.hpp"

namespace m3dvg {

// Pairs are drawn close together so that most of them overlap.
inline Box3D random_oracle_box(Rng& rng) {
  constexpr double kPi = std::numbers::pi;
  return Box3D({rng.uniform(-1, 1), rng.uniform(-0.5, 0.5), rng.uniform(-1, 1)},
               rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(0.5, 2),
               rng.uniform(-kPi, kPi));
}

// Rotation about the vertical axis by phi, then translation by t, using the
// same convention as the box yaw.
inline Box3D rigid_motion(const Box3D& b, double phi, const Vec3& t) {
  double c = std::cos(phi), s = std::sin(phi);
  Vec3 p{c * b.center.x + s * b.center.z + t.x, b.center.y + t.y,
         -s * b.center.x + c * b.center.z + t.z};
  return Box3D(p, b.l, b.w, b.h, normalize_angle(b.yaw + phi));
}

struct OraclePair {
  Box3D a, b;
  double iou = 0.0;
  MonteCarloEstimate mc;
  double deviation = 0.0;  // |iou - mc|
  double allowed = 0.0;    // max(abs floor, k * stderr)
  double symmetry = 0.0;   // |iou(a,b) - iou(b,a)|
  double rigid = 0.0;      // |iou(a,b) - iou(Ta,Tb)|
};

struct OracleReport {
  std::vector<OraclePair> pairs;
  double identity = 0.0;  // worst |iou(a,a) - 1|
  std::size_t outside = 0;

  double max_deviation() const {
    double m = 0;
    for (const auto& p : pairs) m = std::max(m, p.deviation);
    return m;
  }
  double max_symmetry() const {
    double m = 0;
    for (const auto& p : pairs) m = std::max(m, p.symmetry);
    return m;
  }
  double max_rigid() const {
    double m = 0;
    for (const auto& p : pairs) m = std::max(m, p.rigid);
    return m;
  }
};

struct OracleOptions {
  std::size_t pairs = 200;
  std::size_t samples = 1'000'000;
  double abs_tolerance = 0.005;
  double stderr_multiple = 4.0;
  unsigned threads = 1;
};

inline OracleReport run_iou_oracle(const OracleOptions& o, std::uint64_t seed) {
  if (o.pairs == 0) throw ContractError("iou oracle: need at least one pair");
  Rng rng(seed);
  OracleReport r;
  for (std::size_t i = 0; i < o.pairs; ++i) {
    OraclePair p;
    p.a = random_oracle_box(rng);
    p.b = random_oracle_box(rng);
    double phi = rng.uniform(-std::numbers::pi, std::numbers::pi);
    Vec3 t{rng.uniform(-20, 20), rng.uniform(-2, 2), rng.uniform(-20, 20)};
    p.iou = iou_3d(p.a, p.b);
    p.mc = iou3d_monte_carlo(p.a, p.b, o.samples, mix_seed(seed, i), o.threads);
    p.deviation = std::abs(p.iou - p.mc.iou);
    p.allowed = std::max(o.abs_tolerance, o.stderr_multiple * p.mc.std_error);
    p.symmetry = std::abs(p.iou - iou_3d(p.b, p.a));
    p.rigid = std::abs(p.iou - iou_3d(rigid_motion(p.a, phi, t), rigid_motion(p.b, phi, t)));
    r.identity = std::max({r.identity, std::abs(iou_3d(p.a, p.a) - 1.0),
                           std::abs(iou_3d(p.b, p.b) - 1.0)});
    r.outside += p.deviation > p.allowed;
    r.pairs.push_back(p);
  }
  return r;
}

}  // namespace m3dvg

#endif  // M3DVG_IOU_ORACLE_HPP_
