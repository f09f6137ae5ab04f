#ifndef M3DVG_CORE_OPS_HPP_
#define M3DVG_CORE_OPS_HPP_

// Differentiable operations on tape variables. Binary elementwise ops accept
// a right operand of the same shape, a 1xN row, an Mx1 column or a 1x1
// scalar; nothing else broadcasts.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "m3dvg/core/tape.hpp"

namespace m3dvg {

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(av.shape()) +
                     " x " + shape_str(bv.shape()));
  std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double x = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
    }
  Tape* tape = a.tape;
  std::size_t ia = a.id, ib = b.id;
  return tape->record(
      detail::make_value({m, n}, std::move(out), "matmul"),
      [tape, ia, ib, m, k, n](const Tensor& g, GradAccumulator& acc) {
        const Tensor& av = tape->value(ia);
        const Tensor& bv = tape->value(ib);
        Tensor& ga = acc.slot(ia);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
            ga[i * k + p] += s;
          }
        Tensor& gb = acc.slot(ib);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double x = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * g[i * n + j];
          }
      },
      "matmul");
}

inline Var transpose(Var a) {
  const Tensor& av = a.value();
  std::size_t m = av.rows(), n = av.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  Tape* tape = a.tape;
  std::size_t ia = a.id;
  return tape->record(
      detail::make_value({n, m}, std::move(out), "transpose"),
      [ia, m, n](const Tensor& g, GradAccumulator& acc) {
        Tensor& ga = acc.slot(ia);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
      },
      "transpose");
}

inline Var add(Var a, Var b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Var div(Var a, Var b) {
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

// Elementwise min/max; ties route the gradient to the left operand.
inline Var minimum(Var a, Var b) {
  return detail::binary(
      a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

inline Var maximum(Var a, Var b) {
  return detail::binary(
      a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

inline Var scale(Var a, double c) {
  return detail::unary(
      a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var a, double c) {
  return detail::unary(
      a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// c - a
inline Var rsub_scalar(double c, Var a) {
  return detail::unary(
      a, "rsub_scalar", [c](double x) { return c - x; },
      [](double, double) { return -1.0; });
}

inline Var relu(Var a) {
  return detail::unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(Var a) {
  return detail::unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  return detail::unary(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Var sqrt(Var a) {
  return detail::unary(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

// Subgradient 0 at the kink.
inline Var abs(Var a) {
  return detail::unary(
      a, "abs", [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var pow_scalar(Var a, double p) {
  return detail::unary(
      a, "pow",
      [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

// max(a, lo); gradient is zero where the clamp is active.
inline Var clamp_min(Var a, double lo) {
  return detail::unary(
      a, "clamp_min", [lo](double x) { return x < lo ? lo : x; },
      [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

namespace detail {

template <bool kLog>
Var softmax_impl(Var a, const char* op) {
  const Tensor& av = a.value();
  std::size_t m = av.rows(), n = av.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = av[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av[i * n + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(av[i * n + j] - mx);
    double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) {
      double l = av[i * n + j] - lse;
      out[i * n + j] = kLog ? l : std::exp(l);
    }
  }
  Tape* tape = a.tape;
  std::size_t ia = a.id;
  std::size_t iy = tape->size();
  return tape->record(
      make_value(av.shape(), std::move(out), op),
      [tape, ia, iy, m, n](const Tensor& g, GradAccumulator& acc) {
        const Tensor& y = tape->value(iy);
        Tensor& ga = acc.slot(ia);
        for (std::size_t i = 0; i < m; ++i) {
          if constexpr (kLog) {
            double gs = 0.0;
            for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
              ga[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
          } else {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
              ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
          }
        }
      },
      op);
}

}  // namespace detail

inline Var softmax_rows(Var a) { return detail::softmax_impl<false>(a, "softmax_rows"); }
inline Var log_softmax_rows(Var a) {
  return detail::softmax_impl<true>(a, "log_softmax_rows");
}

// Sum of all elements as 1x1.
inline Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  std::size_t ia = a.id;
  return a.tape->record(
      detail::make_value({1, 1}, {s}, "sum"),
      [ia](const Tensor& g, GradAccumulator& acc) {
        Tensor& ga = acc.slot(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
      },
      "sum");
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// Column means over rows: MxN -> 1xN.
inline Var mean_rows(Var a) {
  const Tensor& av = a.value();
  std::size_t m = av.rows(), n = av.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  std::size_t ia = a.id;
  return a.tape->record(
      detail::make_value({1, n}, std::move(out), "mean_rows"),
      [ia, m, n](const Tensor& g, GradAccumulator& acc) {
        Tensor& ga = acc.slot(ia);
        double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
      },
      "mean_rows");
}

// Row sums: MxN -> Mx1.
inline Var sum_cols(Var a) {
  const Tensor& av = a.value();
  std::size_t m = av.rows(), n = av.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += av[i * n + j];
  std::size_t ia = a.id;
  return a.tape->record(
      detail::make_value({m, 1}, std::move(out), "sum_cols"),
      [ia, m, n](const Tensor& g, GradAccumulator& acc) {
        Tensor& ga = acc.slot(ia);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
      },
      "sum_cols");
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  std::size_t m = av.rows(), n = av.cols();
  if (count == 0 || begin + count > n)
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + shape_str(av.shape()));
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = av[i * n + begin + j];
  std::size_t ia = a.id;
  return a.tape->record(
      detail::make_value({m, count}, std::move(out), "slice_cols"),
      [ia, m, n, begin, count](const Tensor& g, GradAccumulator& acc) {
        Tensor& ga = acc.slot(ia);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += g[i * count + j];
      },
      "slice_cols");
}

inline Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  std::size_t m = av.rows(), n = av.cols();
  if (count == 0 || begin + count > m)
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + shape_str(av.shape()));
  std::vector<double> out(av.data().begin() + begin * n,
                          av.data().begin() + (begin + count) * n);
  std::size_t ia = a.id;
  return a.tape->record(
      detail::make_value({count, n}, std::move(out), "slice_rows"),
      [ia, n, begin](const Tensor& g, GradAccumulator& acc) {
        Tensor& ga = acc.slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
      },
      "slice_rows");
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  std::size_t m = parts[0].rows(), n = 0;
  for (const Var& p : parts) {
    detail::require_same_tape(parts[0], p, "concat_cols");
    if (p.rows() != m)
      throw ShapeError("concat_cols: row counts differ, " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out[i * n + off + j] = pv(i, j);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += pv.cols();
  }
  Tape* tape = parts[0].tape;
  return tape->record(
      detail::make_value({m, n}, std::move(out), "concat_cols"),
      [tape, ids, offsets, m, n](const Tensor& g, GradAccumulator& acc) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          Tensor& gp = acc.slot(ids[k]);
          std::size_t w = tape->value(ids[k]).cols();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + offsets[k] + j];
        }
      },
      "concat_cols");
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  std::size_t n = parts[0].cols(), m = 0;
  for (const Var& p : parts) {
    detail::require_same_tape(parts[0], p, "concat_rows");
    if (p.cols() != n)
      throw ShapeError("concat_rows: widths differ, " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    offsets.push_back(out.size());
    ids.push_back(p.id);
    out.insert(out.end(), p.value().data().begin(), p.value().data().end());
  }
  Tape* tape = parts[0].tape;
  return tape->record(
      detail::make_value({m, n}, std::move(out), "concat_rows"),
      [tape, ids, offsets](const Tensor& g, GradAccumulator& acc) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          Tensor& gp = acc.slot(ids[k]);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
        }
      },
      "concat_rows");
}

inline Var reshape(Var a, Shape shape) {
  const Tensor& av = a.value();
  if (shape.size() != 2 || shape_numel(shape) != av.size())
    throw ShapeError("reshape: " + shape_str(av.shape()) + " to " + shape_str(shape));
  std::size_t ia = a.id;
  return a.tape->record(
      Tensor(std::move(shape), av.values()),
      [ia](const Tensor& g, GradAccumulator& acc) {
        Tensor& ga = acc.slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      },
      "reshape");
}

// out[i] = a[i, index[i]] as an Mx1 column.
inline Var gather_cols(Var a, std::span<const std::size_t> index) {
  const Tensor& av = a.value();
  std::size_t m = av.rows(), n = av.cols();
  if (index.size() != m)
    throw ShapeError("gather_cols: " + std::to_string(index.size()) + " indices for " +
                     shape_str(av.shape()));
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (index[i] >= n)
      throw ContractError("gather_cols: index " + std::to_string(index[i]) +
                          " out of range for width " + std::to_string(n));
    out[i] = av[i * n + index[i]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::size_t ia = a.id;
  return a.tape->record(
      detail::make_value({m, 1}, std::move(out), "gather_cols"),
      [ia, idx, n](const Tensor& g, GradAccumulator& acc) {
        Tensor& ga = acc.slot(ia);
        for (std::size_t i = 0; i < idx.size(); ++i) ga[i * n + idx[i]] += g[i];
      },
      "gather_cols");
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// Forward-only helpers on plain tensors, evaluated through a scratch tape.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape t;
  return matmul(t.constant(a), t.constant(b)).value();
}

inline Tensor softmax_rows(const Tensor& x) {
  Tape t;
  return softmax_rows(t.constant(x)).value();
}

}  // namespace m3dvg

#endif  // M3DVG_CORE_OPS_HPP_
