#ifndef M3DVG_TOY_PROBE_HPP_
#define M3DVG_TOY_PROBE_HPP_

// Linear probes: how much of each latent group is linearly readable from
// the mean-pooled D2M text streams. Fit on the first half of the samples,
// scored by R^2 on the second half.

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "m3dvg/toy/model.hpp"

namespace m3dvg::toy {

struct ProbeFit {
  double r2 = 0.0;              // mean over target columns
  bool ridge_fallback = false;  // normal equations were singular
};

inline constexpr double kProbeRidge = 1e-6;

// Least squares with intercept; falls back to ridge when X^T X is singular.
inline ProbeFit linear_probe(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows() || x.rows() < 4)
    throw ContractError("linear_probe: need matching row counts and at least 4 rows");
  if (y.cols() == 0) throw ContractError("linear_probe: no target columns");
  const Eigen::Index n = x.rows(), fit_n = n / 2, test_n = n - fit_n;
  Eigen::MatrixXd xf = x.topRows(fit_n), yf = y.topRows(fit_n);
  Eigen::RowVectorXd xm = xf.colwise().mean(), ym = yf.colwise().mean();
  xf.rowwise() -= xm;
  yf.rowwise() -= ym;
  Eigen::MatrixXd gram = xf.transpose() * xf;
  Eigen::MatrixXd rhs = xf.transpose() * yf;
  ProbeFit fit;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
  Eigen::MatrixXd beta;
  if (lu.rank() == gram.rows()) {
    beta = lu.solve(rhs);
  } else {
    fit.ridge_fallback = true;
    gram.diagonal().array() += kProbeRidge;
    beta = gram.ldlt().solve(rhs);
  }
  Eigen::MatrixXd xt = x.bottomRows(test_n), yt = y.bottomRows(test_n);
  xt.rowwise() -= xm;
  Eigen::MatrixXd pred = (xt * beta).rowwise() + ym;
  double total = 0.0;
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    double sse = (yt.col(c) - pred.col(c)).squaredNorm();
    double sst = (yt.col(c).array() - yt.col(c).mean()).square().sum();
    if (!(sst > 0)) throw NumericError("linear_probe: constant target column");
    total += 1.0 - sse / sst;
  }
  fit.r2 = total / static_cast<double>(y.cols());
  return fit;
}

struct ProbeReport {
  std::optional<double> r2_2d_from_2d, r2_3d_from_3d;  // matched
  std::optional<double> r2_2d_from_3d, r2_3d_from_2d;  // crossed
  double matched = 0.0;
  double crossed = 0.0;
  bool ridge_fallback = false;

  double gap() const { return matched - crossed; }
};

struct PooledStreams {
  Eigen::MatrixXd text_2d, text_3d, z2d, z3d;
};

inline PooledStreams pool_streams(const ToyModelParams<Tensor>& params,
                                  std::span<const SyntheticSample> samples,
                                  const ToyWiring& wiring = {}) {
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  const Eigen::Index d = static_cast<Eigen::Index>(params.d2m.dim());
  PooledStreams p{Eigen::MatrixXd(n, d), Eigen::MatrixXd(n, d),
                  Eigen::MatrixXd(n, static_cast<Eigen::Index>(samples[0].z2d.size())),
                  Eigen::MatrixXd(n, static_cast<Eigen::Index>(samples[0].z3d.size()))};
  for (Eigen::Index i = 0; i < n; ++i) {
    const SyntheticSample& s = samples[static_cast<std::size_t>(i)];
    Tape tape;
    TextStreams t = text_streams(tape.constant(s.text), bind(tape, params, false), wiring);
    Tensor a = mean_rows(t.text_2d).value(), b = mean_rows(t.text_3d).value();
    for (Eigen::Index j = 0; j < d; ++j) {
      p.text_2d(i, j) = a[static_cast<std::size_t>(j)];
      p.text_3d(i, j) = b[static_cast<std::size_t>(j)];
    }
    for (std::size_t j = 0; j < s.z2d.size(); ++j) p.z2d(i, static_cast<Eigen::Index>(j)) = s.z2d[j];
    for (std::size_t j = 0; j < s.z3d.size(); ++j) p.z3d(i, static_cast<Eigen::Index>(j)) = s.z3d[j];
  }
  return p;
}

// Matched probes read z2d from T_2D and z3d from T_3D; crossed probes swap
// the streams. With k2 = 0 only the z3d probes exist.
inline ProbeReport probe_decoupling(const ToyModelParams<Tensor>& params,
                                    std::span<const SyntheticSample> samples,
                                    const ToyWiring& wiring = {}) {
  if (samples.size() < 4) throw ContractError("probe_decoupling: need at least 4 samples");
  PooledStreams p = pool_streams(params, samples, wiring);
  ProbeReport r;
  auto run = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) -> std::optional<double> {
    if (y.cols() == 0) return std::nullopt;
    ProbeFit f = linear_probe(x, y);
    r.ridge_fallback = r.ridge_fallback || f.ridge_fallback;
    return f.r2;
  };
  r.r2_2d_from_2d = run(p.text_2d, p.z2d);
  r.r2_3d_from_3d = run(p.text_3d, p.z3d);
  r.r2_2d_from_3d = run(p.text_3d, p.z2d);
  r.r2_3d_from_2d = run(p.text_2d, p.z3d);
  auto avg = [](std::optional<double> a, std::optional<double> b) {
    if (a && b) return (*a + *b) / 2.0;
    return a ? *a : *b;
  };
  r.matched = avg(r.r2_2d_from_2d, r.r2_3d_from_3d);
  r.crossed = avg(r.r2_2d_from_3d, r.r2_3d_from_2d);
  return r;
}

}  // namespace m3dvg::toy

#endif  // M3DVG_TOY_PROBE_HPP_
