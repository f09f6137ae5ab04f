#ifndef M3DVG_TOY_EXPERIMENT_HPP_
#define M3DVG_TOY_EXPERIMENT_HPP_

// The decoupling experiment over several seeds, with its pass thresholds.

#include <string>
#include <vector>

#include <json.hpp>

#include "m3dvg/toy/train.hpp"

namespace m3dvg::toy {

inline constexpr double kMinTrainedGap = 0.2;
inline constexpr double kMaxUntrainedGap = 0.1;
inline constexpr double kMaxLossRatio = 0.5;

struct ToyExperiment {
  std::vector<ToyRun> runs;

  double mean_of(double (*f)(const ToyRun&)) const {
    double s = 0;
    for (const ToyRun& r : runs) s += f(r);
    return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
  }
  static double trained_gap(const ToyRun& r) { return r.trained.gap(); }
  static double untrained_gap(const ToyRun& r) { return r.untrained.gap(); }
  static double loss_ratio(const ToyRun& r) {
    return r.training.final_loss() / r.training.initial_loss();
  }

  double mean_trained_gap() const { return mean_of(trained_gap); }
  double mean_untrained_gap() const { return mean_of(untrained_gap); }
  double mean_loss_ratio() const { return mean_of(loss_ratio); }

  // Thresholds apply to the means over seeds; single seeds are noisy.
  bool gap_ok() const { return mean_trained_gap() >= kMinTrainedGap; }
  bool untrained_ok() const { return std::abs(mean_untrained_gap()) < kMaxUntrainedGap; }
  bool loss_ok() const { return mean_loss_ratio() < kMaxLossRatio; }
  bool ok() const { return gap_ok() && untrained_ok() && loss_ok(); }
};

template <class OnRun>
ToyExperiment run_experiment(const ToyConfig& c, const std::vector<std::uint64_t>& seeds,
                             OnRun&& on_run) {
  if (seeds.empty()) throw ContractError("toy experiment: no seeds");
  ToyExperiment e;
  for (std::uint64_t s : seeds) {
    e.runs.push_back(run_toy(c, s));
    on_run(e.runs.back());
  }
  return e;
}

inline ToyExperiment run_experiment(const ToyConfig& c, const std::vector<std::uint64_t>& seeds) {
  return run_experiment(c, seeds, [](const ToyRun&) {});
}

inline nlohmann::ordered_json to_json(const ProbeReport& p) {
  auto opt = [](std::optional<double> v) -> nlohmann::ordered_json {
    if (!v) return nullptr;
    return *v;
  };
  return {{"r2_2d_from_2d", opt(p.r2_2d_from_2d)}, {"r2_3d_from_3d", opt(p.r2_3d_from_3d)},
          {"r2_2d_from_3d", opt(p.r2_2d_from_3d)}, {"r2_3d_from_2d", opt(p.r2_3d_from_2d)},
          {"matched", p.matched},                  {"crossed", p.crossed},
          {"gap", p.gap()},                        {"ridge_fallback", p.ridge_fallback}};
}

inline nlohmann::ordered_json to_json(const ToyExperiment& e) {
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const ToyRun& r : e.runs) {
    nlohmann::ordered_json trace = nlohmann::ordered_json::array();
    for (const TraceEntry& t : r.training.trace)
      trace.push_back({{"epoch", t.epoch},
                       {"step", t.step},
                       {"l2d", t.loss.l2d},
                       {"l3d", t.loss.l3d},
                       {"overall", t.loss.overall}});
    runs.push_back({{"seed", r.seed},
                    {"untrained", to_json(r.untrained)},
                    {"trained", to_json(r.trained)},
                    {"initial_loss", r.training.initial_loss()},
                    {"final_loss", r.training.final_loss()},
                    {"trace", trace}});
  }
  return {{"runs", runs},
          {"mean_trained_gap", e.mean_trained_gap()},
          {"mean_untrained_gap", e.mean_untrained_gap()},
          {"mean_loss_ratio", e.mean_loss_ratio()},
          {"thresholds",
           {{"min_trained_gap", kMinTrainedGap},
            {"max_untrained_gap", kMaxUntrainedGap},
            {"max_loss_ratio", kMaxLossRatio}}},
          {"ok", e.ok()}};
}

}  // namespace m3dvg::toy

#endif  // M3DVG_TOY_EXPERIMENT_HPP_
