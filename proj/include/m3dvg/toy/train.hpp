#ifndef M3DVG_TOY_TRAIN_HPP_
#define M3DVG_TOY_TRAIN_HPP_

// AdamW training of the toy model on synthetic data, plus the decoupling
// experiment that probes the text streams before and after training.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "m3dvg/toy/model.hpp"
#include "m3dvg/toy/probe.hpp"

namespace m3dvg::toy {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  std::size_t train_samples = 256;
  std::size_t probe_samples = 2048;
  double lr = 5e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ToyConfig {
  SynthConfig synth;
  ToyModelConfig model;
  TrainConfig train;
  ToyWiring wiring;
  LossWeights weights;
  MaskPolicy lca{1.0, false};

  void validate() const {
    if (synth.dim != model.dim)
      throw ContractError("toy config: synthetic dim " + std::to_string(synth.dim) +
                          " != model dim " + std::to_string(model.dim));
    if (train.batch_size == 0 || train.train_samples == 0)
      throw ContractError("toy config: batch_size and train_samples must be positive");
    if (!(train.lr > 0) || !(train.weight_decay >= 0))
      throw ContractError("toy config: lr must be positive and weight_decay non-negative");
    if (!(lca.probability >= 0 && lca.probability <= 1))
      throw ContractError("toy config: lca probability must lie in [0, 1]");
  }
};

// Decoupled weight decay: the decay term is applied to the weights directly,
// outside the adaptive moment scaling.
class AdamW {
 public:
  AdamW(std::size_t n, const TrainConfig& c) : c_(c), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> w, std::span<const double> g) {
    ++t_;
    const double bc1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[i] = c_.beta1 * m_[i] + (1.0 - c_.beta1) * g[i];
      v_[i] = c_.beta2 * v_[i] + (1.0 - c_.beta2) * g[i] * g[i];
      double mh = m_[i] / bc1, vh = v_[i] / bc2;
      w[i] -= c_.lr * (mh / (std::sqrt(vh) + c_.eps) + c_.weight_decay * w[i]);
    }
  }

 private:
  TrainConfig c_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

template <class P>
std::vector<double> flatten(const P& params) {
  std::vector<double> out;
  visit_params(params, [&](const std::string&, const Tensor& t) {
    out.insert(out.end(), t.data().begin(), t.data().end());
  });
  return out;
}

template <class P>
void assign_flat(P& params, std::span<const double> flat) {
  std::size_t off = 0;
  visit_params(params, [&](const std::string&, Tensor& t) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data().begin());
    off += t.size();
  });
}

struct TraceEntry {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps taken so far
  LossBreakdown loss;
};

struct TrainResult {
  ToyModelParams<Tensor> params;
  std::vector<TraceEntry> trace;  // entry 0 is the untrained model

  double initial_loss() const { return trace.front().loss.overall; }
  double final_loss() const { return trace.back().loss.overall; }
};

inline std::vector<SyntheticSample> masked_copy(std::span<const SyntheticSample> s,
                                                std::span<const std::size_t> idx,
                                                const MaskPolicy& lca, std::uint64_t seed,
                                                std::uint64_t epoch) {
  std::vector<SyntheticSample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    out.push_back(s[i]);
    if (lca.enabled) out.back().text = lca_mask_tokens(s[i], lca, seed, epoch, i);
  }
  return out;
}

// Mean loss over `samples` with no masking, in fixed chunks.
inline LossBreakdown dataset_loss(const ToyModelParams<Tensor>& params,
                                  std::span<const SyntheticSample> samples, const ToyConfig& c) {
  LossTerms<double> sum{};
  const std::size_t chunk = 64;
  for (std::size_t b = 0; b < samples.size(); b += chunk) {
    auto part = samples.subspan(b, std::min(chunk, samples.size() - b));
    Tape tape;
    auto terms = toy_loss_terms(toy_forward(tape, part, bind(tape, params, false), c.wiring), part);
    double w = static_cast<double>(part.size());
    sum.cls += w * terms.cls.value().item();
    sum.lrtb += w * terms.lrtb.value().item();
    sum.giou += w * terms.giou.value().item();
    sum.xy3d += w * terms.xy3d.value().item();
    sum.size3d += w * terms.size3d.value().item();
    sum.orien += w * terms.orien.value().item();
    sum.depth += w * terms.depth.value().item();
    sum.dmap += w * terms.dmap.value().item();
  }
  double n = static_cast<double>(samples.size());
  LossTerms<double> mean{sum.cls / n,    sum.lrtb / n,   sum.giou / n,  sum.xy3d / n,
                         sum.size3d / n, sum.orien / n,  sum.depth / n, sum.dmap / n};
  return aggregate(mean, c.weights);
}

// One optimizer step on a batch; returns the batch loss before the update.
inline double train_step(ToyModelParams<Tensor>& params, AdamW& opt,
                         std::span<const SyntheticSample> batch, const ToyConfig& c) {
  Tape tape;
  auto bound = bind(tape, params);
  Var loss = aggregate(toy_loss_terms(toy_forward(tape, batch, bound, c.wiring), batch), c.weights);
  double value = loss.value().item();
  Gradients g = backward(loss);
  std::vector<double> grad = flatten(grads_of(bound, g));
  std::vector<double> w = flatten(params);
  opt.step(w, grad);
  assign_flat(params, w);
  return value;
}

inline TrainResult train_toy(ToyModelParams<Tensor> params, std::span<const SyntheticSample> data,
                             const ToyConfig& c, std::uint64_t seed) {
  c.validate();
  TrainResult r;
  r.trace.push_back({0, 0, dataset_loss(params, data, c)});
  AdamW opt(param_count(params), c.train);
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= c.train.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, 0x7000 + epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t b = 0; b < order.size(); b += c.train.batch_size) {
      std::span<const std::size_t> idx(order.data() + b, std::min(c.train.batch_size, order.size() - b));
      auto batch = masked_copy(data, idx, c.lca, seed, epoch);
      ++step;
      try {
        double loss = train_step(params, opt, batch, c);
        if (!std::isfinite(loss)) throw NumericError("loss is " + std::to_string(loss));
      } catch (const Error& e) {
        throw NumericError("training diverged at step " + std::to_string(step) + " (epoch " +
                           std::to_string(epoch) + "): " + e.what());
      }
    }
    try {
      r.trace.push_back({epoch, step, dataset_loss(params, data, c)});
    } catch (const Error& e) {
      throw NumericError("training diverged by step " + std::to_string(step) + " (epoch " +
                         std::to_string(epoch) + "): " + e.what());
    }
  }
  r.params = std::move(params);
  return r;
}

struct ToyData {
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> probe;
};

inline ToyData make_toy_data(const ToyConfig& c, std::uint64_t seed) {
  SynthWorld world(c.synth, seed);
  return {world.generate(c.train.train_samples, mix_seed(seed, 1)),
          world.generate(std::max<std::size_t>(c.train.probe_samples, 4), mix_seed(seed, 2))};
}

inline ToyModelParams<Tensor> init_toy_model(const ToyConfig& c, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 3));
  return make_toy_model(c.model, rng);
}

struct ToyRun {
  std::uint64_t seed = 0;
  TrainResult training;
  ProbeReport untrained;
  ProbeReport trained;
};

// The full experiment for one seed: probe at init, train, probe again.
inline ToyRun run_toy(const ToyConfig& c, std::uint64_t seed) {
  c.validate();
  ToyData data = make_toy_data(c, seed);
  ToyModelParams<Tensor> init = init_toy_model(c, seed);
  ToyRun run;
  run.seed = seed;
  run.untrained = probe_decoupling(init, data.probe, c.wiring);
  run.training = train_toy(std::move(init), data.train, c, seed);
  run.trained = probe_decoupling(run.training.params, data.probe, c.wiring);
  return run;
}

}  // namespace m3dvg::toy

#endif  // M3DVG_TOY_TRAIN_HPP_
