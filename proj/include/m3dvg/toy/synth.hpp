#ifndef M3DVG_TOY_SYNTH_HPP_
#define M3DVG_TOY_SYNTH_HPP_

// Synthetic grounding data with known factors.
//
// Each sample draws independent latents z2d (k2) and z3d (k3). The text
// features hold one pair of tokens per latent factor j:
//   type+_j + z_j w_j + noise      type-_j - z_j w_j + noise
// so a factor is readable only by attending to its own tokens; a plain
// average over tokens cancels it. Visual features V*_2D see only z2d and
// V*_3D only z3d, through fixed per-row mixing plus noise. All targets are
// fixed functions of the latents: the class and 2D extents follow z2d, the
// projected center, depth, size and yaw follow z3d.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "m3dvg/core/random.hpp"
#include "m3dvg/core/tensor.hpp"
#include "m3dvg/geometry.hpp"
#include "m3dvg/losses.hpp"

namespace m3dvg::toy {

struct SynthConfig {
  std::size_t k2 = 3;
  std::size_t k3 = 3;
  std::size_t dim = 16;
  std::size_t visual_rows = 4;
  std::size_t filler_tokens = 2;
  double text_noise = 0.1;
  double visual_noise = 0.5;
};

struct Targets {
  std::size_t class_id = 0;
  std::array<double, 2> center_uv{};  // normalized image coordinates
  std::array<double, 4> lrtb{};
  std::array<double, 4> box2d{};      // left, top, right, bottom
  double depth = 0.0;                 // meters
  std::array<double, 3> dims{};       // l, w, h in meters
  double yaw = 0.0;
};

struct SyntheticSample {
  std::vector<double> z2d;
  std::vector<double> z3d;
  Tensor text;       // tokens x d
  Tensor visual_2d;  // visual_rows x d
  Tensor visual_3d;  // visual_rows x d
  Targets target;
};

inline constexpr std::array<double, 3> kMeanDims{3.9, 1.6, 1.5};
inline constexpr double kMeanDepth = 20.0;
inline constexpr double kMeanExtent = 0.1;

// Fixed random structure shared by every sample of one dataset.
class SynthWorld {
 public:
  SynthWorld(const SynthConfig& c, std::uint64_t seed) : c_(c) {
    if (c.dim == 0 || c.visual_rows == 0) throw ContractError("synth: dim and visual_rows must be positive");
    if (c.k2 + c.k3 == 0) throw ContractError("synth: need at least one latent factor");
    if (!(c.text_noise >= 0) || !(c.visual_noise >= 0)) throw ContractError("synth: noise must be non-negative");
    Rng rng(mix_seed(seed, 0x5157));
    const std::size_t k = c.k2 + c.k3, d = c.dim;
    auto unit = [&](std::size_t n) {
      std::vector<double> v(n);
      double s = 0;
      for (double& x : v) {
        x = rng.normal();
        s += x * x;
      }
      for (double& x : v) x /= std::sqrt(s);
      return v;
    };
    for (std::size_t j = 0; j < 2 * k + c.filler_tokens; ++j) type_.push_back(unit(d));
    for (std::size_t j = 0; j < k; ++j) dir_.push_back(unit(d));
    auto mixing = [&](std::size_t kk) {
      std::vector<std::vector<double>> rows;
      for (std::size_t r = 0; r < c.visual_rows; ++r) {
        std::vector<double> m(d * kk);
        for (double& x : m) x = rng.normal() / std::sqrt(static_cast<double>(d));
        rows.push_back(std::move(m));
      }
      return rows;
    };
    mix2_ = mixing(c.k2);
    mix3_ = mixing(c.k3);
    for (std::size_t r = 0; r < c.visual_rows; ++r) {
      base2_.push_back(unit(d));
      base3_.push_back(unit(d));
    }
    auto readout = [&](std::size_t outs, std::size_t kk) {
      std::vector<std::vector<double>> w(outs, std::vector<double>(kk));
      for (auto& row : w)
        for (double& x : row) x = kk ? rng.normal() / std::sqrt(static_cast<double>(kk)) : 0.0;
      return w;
    };
    class_w_ = readout(kNumClasses, c.k2);
    extent_w_ = readout(4, c.k2);
    center_w_ = readout(2, c.k3);
    depth_w_ = readout(1, c.k3);
    dims_w_ = readout(3, c.k3);
    yaw_w_ = readout(1, c.k3);
  }

  const SynthConfig& config() const { return c_; }
  std::size_t token_count() const { return type_.size(); }

  Targets targets(const std::vector<double>& z2d, const std::vector<double>& z3d) const {
    auto dot = [](const std::vector<double>& w, const std::vector<double>& z) {
      double s = 0;
      for (std::size_t i = 0; i < z.size(); ++i) s += w[i] * z[i];
      return s;
    };
    Targets t;
    double best = -INFINITY;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      double s = dot(class_w_[k], z2d);
      if (s > best) best = s, t.class_id = k;
    }
    for (std::size_t i = 0; i < 4; ++i) t.lrtb[i] = kMeanExtent * std::exp(0.3 * dot(extent_w_[i], z2d));
    t.center_uv = {0.5 + 0.1 * dot(center_w_[0], z3d), 0.5 + 0.05 * dot(center_w_[1], z3d)};
    t.box2d = {t.center_uv[0] - t.lrtb[0], t.center_uv[1] - t.lrtb[1],
               t.center_uv[0] + t.lrtb[2], t.center_uv[1] + t.lrtb[3]};
    t.depth = kMeanDepth * std::exp(0.3 * dot(depth_w_[0], z3d));
    for (std::size_t i = 0; i < 3; ++i) t.dims[i] = kMeanDims[i] * std::exp(0.15 * dot(dims_w_[i], z3d));
    t.yaw = normalize_angle(1.2 * dot(yaw_w_[0], z3d));
    return t;
  }

  SyntheticSample sample(Rng& rng) const {
    const std::size_t d = c_.dim, k = c_.k2 + c_.k3;
    SyntheticSample s;
    s.z2d.resize(c_.k2);
    s.z3d.resize(c_.k3);
    for (double& x : s.z2d) x = rng.normal();
    for (double& x : s.z3d) x = rng.normal();
    std::vector<double> z = s.z2d;
    z.insert(z.end(), s.z3d.begin(), s.z3d.end());

    std::vector<double> text;
    text.reserve(token_count() * d);
    for (std::size_t j = 0; j < token_count(); ++j) {
      double sign = j < k ? 1.0 : -1.0;
      for (std::size_t i = 0; i < d; ++i) {
        double v = type_[j][i] + c_.text_noise * rng.normal();
        if (j < 2 * k) v += sign * z[j % k] * dir_[j % k][i];
        text.push_back(v);
      }
    }
    s.text = Tensor({token_count(), d}, std::move(text));

    auto visual = [&](const std::vector<std::vector<double>>& mix,
                      const std::vector<std::vector<double>>& base, const std::vector<double>& zz) {
      std::vector<double> v;
      v.reserve(c_.visual_rows * d);
      for (std::size_t r = 0; r < c_.visual_rows; ++r)
        for (std::size_t i = 0; i < d; ++i) {
          double x = base[r][i] + c_.visual_noise * rng.normal();
          for (std::size_t q = 0; q < zz.size(); ++q) x += mix[r][i * zz.size() + q] * zz[q];
          v.push_back(x);
        }
      return Tensor({c_.visual_rows, d}, std::move(v));
    };
    s.visual_2d = visual(mix2_, base2_, s.z2d);
    s.visual_3d = visual(mix3_, base3_, s.z3d);
    s.target = targets(s.z2d, s.z3d);
    return s;
  }

  std::vector<SyntheticSample> generate(std::size_t n, std::uint64_t seed) const {
    if (n == 0) throw ContractError("synth_generate: n must be at least 1");
    Rng rng(seed);
    std::vector<SyntheticSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample(rng));
    return out;
  }

 private:
  SynthConfig c_;
  std::vector<std::vector<double>> type_, dir_, base2_, base3_, mix2_, mix3_;
  std::vector<std::vector<double>> class_w_, extent_w_, center_w_, depth_w_, dims_w_, yaw_w_;
};

inline std::vector<SyntheticSample> synth_generate(std::size_t n, std::size_t k2, std::size_t k3,
                                                   std::size_t d, std::uint64_t seed) {
  SynthConfig c;
  c.k2 = k2;
  c.k3 = k3;
  c.dim = d;
  return SynthWorld(c, seed).generate(n, mix_seed(seed, 1));
}

}  // namespace m3dvg::toy

#endif  // M3DVG_TOY_SYNTH_HPP_
