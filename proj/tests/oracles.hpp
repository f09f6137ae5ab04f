#ifndef M3DVG_TESTS_ORACLES_HPP_
#define M3DVG_TESTS_ORACLES_HPP_

// Reference implementations used only by tests. They are written with plain
// loops over doubles and never touch the tape, so they stay independent of
// the code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "m3dvg/nn/attention.hpp"

namespace m3dvg::oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline Mat affine(const Mat& x, const Linear<Tensor>& l) {
  std::size_t out = l.weight.cols();
  Mat y(x.size(), std::vector<double>(out));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double s = l.bias(0, o);
      for (std::size_t p = 0; p < x[i].size(); ++p) s += x[i][p] * l.weight(p, o);
      y[i][o] = s;
    }
  return y;
}

// Multi-head attention evaluated head by head, query by query.
inline Mat attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams<Tensor>& p) {
  Mat q = affine(to_mat(q_in), p.q);
  Mat k = affine(to_mat(kv_in), Linear<Tensor>{p.k, Tensor::zeros({1, p.k.cols()})});
  Mat v = affine(to_mat(kv_in), p.v);
  std::size_t d = p.dim(), dh = d / p.heads;
  Mat cat(q.size(), std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < p.heads; ++h) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> logits(k.size());
      for (std::size_t j = 0; j < k.size(); ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
        logits[j] = s / std::sqrt(static_cast<double>(dh));
      }
      double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t j = 0; j < k.size(); ++j)
        for (std::size_t c = 0; c < dh; ++c)
          cat[i][h * dh + c] += logits[j] / z * v[j][h * dh + c];
    }
  }
  return affine(cat, p.o);
}

inline Mat feed_forward(const Mat& x, const FFNParams<Tensor>& p) {
  Mat h = affine(x, p.in);
  if (p.activation == Activation::kRelu)
    for (auto& row : h)
      for (double& v : row) v = std::max(v, 0.0);
  return affine(h, p.out);
}

inline double max_diff(const Mat& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b(i, j)));
  return m;
}

// Best 2-partition of `scores` by enumerating every subset (Gray code
// order); returns the mask of the cluster with the larger mean.
struct ExhaustivePartition {
  std::uint32_t high_mask = 0;
  double sse = 0.0;
};

inline ExhaustivePartition exhaustive_two_means(const std::vector<double>& s) {
  std::size_t n = s.size();
  double total = 0.0, total_sq = 0.0;
  for (double v : s) {
    total += v;
    total_sq += v * v;
  }
  ExhaustivePartition best{0, INFINITY};
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  std::uint32_t mask = 0;
  std::uint32_t limit = 1u << n;
  for (std::uint32_t g = 1; g < limit; ++g) {
    std::uint32_t gray = g ^ (g >> 1);
    std::uint32_t flipped = gray ^ mask;
    std::size_t bit = static_cast<std::size_t>(__builtin_ctz(flipped));
    if (gray & flipped) {
      sum += s[bit];
      sq += s[bit] * s[bit];
      ++count;
    } else {
      sum -= s[bit];
      sq -= s[bit] * s[bit];
      --count;
    }
    mask = gray;
    if (count == 0 || count == n) continue;
    double rest = total - sum, rest_sq = total_sq - sq;
    double sse = (sq - sum * sum / count) + (rest_sq - rest * rest / (n - count));
    if (sse < best.sse) {
      bool mask_is_high = sum / count > rest / (n - count);
      best.sse = sse;
      best.high_mask = mask_is_high ? mask : (~mask & (limit - 1));
    }
  }
  // Running sums drift over 2^n updates; report the winner's cost two-pass.
  double m[2] = {0, 0}, c[2] = {0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    int h = (best.high_mask >> i) & 1u;
    m[h] += s[i];
    c[h] += 1;
  }
  best.sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    int h = (best.high_mask >> i) & 1u;
    double e = s[i] - m[h] / c[h];
    best.sse += e * e;
  }
  return best;
}

}  // namespace m3dvg::oracle

#endif  // M3DVG_TESTS_ORACLES_HPP_
