#ifndef M3DVG_CORE_GRADCHECK_HPP_
#define M3DVG_CORE_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "m3dvg/core/ops.hpp"

namespace m3dvg {

// A scalar function recorded on a tape with `x` as its only trainable input.
using TapeFunction = std::function<Var(Tape&, Var x)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double max_abs_error = 0.0;  // largest |analytic - numeric| over all coordinates
};

// Compares the tape gradient of f at x against central differences
// (f(x+h) - f(x-h)) / 2h, elementwise. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult grad_check(const TapeFunction& f, const Tensor& x, double h = 1e-6) {
  if (!(h > 0.0) || !std::isfinite(h))
    throw ContractError("grad_check: step h must be positive and finite, got " +
                        std::to_string(h));
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x);
    Var y = f(tape, xv);
    analytic = backward(y)[xv];
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    double v = f(tape, tape.leaf(at)).value().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: f is non-finite near x");
    return v;
  };
  GradCheckResult res;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + h;
    double fp = eval(probe);
    probe[i] = orig - h;
    double fm = eval(probe);
    probe[i] = orig;
    double numeric = (fp - fm) / (2.0 * h);
    double a = analytic[i];
    double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    double rel = std::abs(a - numeric) / denom;
    double worst_abs = std::max(res.max_abs_error, std::abs(a - numeric));
    if (i == 0 || rel > res.max_rel_error) res = GradCheckResult{rel, i, a, numeric, 0.0};
    res.max_abs_error = worst_abs;
  }
  return res;
}

}  // namespace m3dvg

#endif  // M3DVG_CORE_GRADCHECK_HPP_
