// m3dvg command-line tool. Exit codes: 0 success, 1 check or validation
// failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "m3dvg/eval.hpp"
#include "m3dvg/gradcheck_suite.hpp"
#include "m3dvg/io/annotations.hpp"
#include "m3dvg/io/calib.hpp"
#include "m3dvg/io/checkpoint.hpp"
#include "m3dvg/io/config.hpp"
#include "m3dvg/io/embeddings.hpp"
#include "m3dvg/iou_oracle.hpp"
#include "m3dvg/lexical.hpp"
#include "m3dvg/render.hpp"
#include "m3dvg/toy/experiment.hpp"

namespace fs = std::filesystem;
using m3dvg::Error;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kOk = 0, kFailed = 1, kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommandResult {
  int code = kOk;
  std::string report;  // human readable
  Json machine;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Human report to PREFIX.txt and machine report to PREFIX.json.
void write_reports(const std::optional<std::string>& prefix, const CommandResult& r) {
  if (!prefix) return;
  m3dvg::io::write_file_atomic(*prefix + ".txt", r.report);
  m3dvg::io::write_file_atomic(*prefix + ".json", r.machine.dump(2) + "\n");
}

// --config, else the environment variable, else built-in defaults.
m3dvg::io::RunConfig load_config(const std::optional<std::string>& flag) {
  std::optional<fs::path> path;
  if (flag) path = *flag;
  else path = m3dvg::io::config_path_from_env();
  if (!path) return {};
  return m3dvg::io::load_run_config(*path);
}

// ---- gradcheck ----

CommandResult cmd_gradcheck(const std::string& scope, std::uint64_t seed) {
  auto checks = m3dvg::run_gradcheck_suite(scope, seed);
  CommandResult r;
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-40s %7s %12s %12s  %s\n", "scope", "op", "coords",
                "max_rel_err", "max_abs_err", "verdict");
  out << line;
  Json rows = Json::array();
  std::size_t failed = 0;
  const m3dvg::OpCheck* worst = nullptr;
  for (const auto& c : checks) {
    std::snprintf(line, sizeof line, "%-10s %-40s %7zu %12.3e %12.3e  %s\n", c.scope.c_str(),
                  c.op.c_str(), c.inputs, c.result.max_rel_error, c.result.max_abs_error,
                  c.ok() ? "ok" : "FAIL");
    out << line;
    failed += !c.ok();
    if (!worst || c.result.max_rel_error > worst->result.max_rel_error) worst = &c;
    rows.push_back({{"scope", c.scope},
                    {"op", c.op},
                    {"coords", c.inputs},
                    {"max_rel_error", c.result.max_rel_error},
                    {"max_abs_error", c.result.max_abs_error},
                    {"worst_index", c.result.worst_index},
                    {"analytic", c.result.analytic},
                    {"numeric", c.result.numeric},
                    {"ok", c.ok()}});
  }
  out << "worst: " << fmt("%.3e", worst->result.max_rel_error) << " (" << worst->scope << " "
      << worst->op << "); " << failed << " of " << checks.size() << " checks at or above "
      << fmt("%.0e", m3dvg::kGradCheckTolerance) << "\n";
  r.code = failed ? kFailed : kOk;
  r.report = out.str();
  r.machine = {{"command", "gradcheck"},
               {"scope", scope},
               {"seed", seed},
               {"tolerance", m3dvg::kGradCheckTolerance},
               {"checks", rows},
               {"failed", failed},
               {"ok", failed == 0}};
  return r;
}

// ---- mask ----

struct MaskArgs {
  fs::path embeddings, annotations, out;
  double p = 1.0;
  std::uint64_t seed = 0, epoch = 0;
  std::size_t dim = 0;
};

CommandResult cmd_mask(const MaskArgs& a) {
  m3dvg::io::EmbeddingFile emb = m3dvg::io::load_embeddings(a.embeddings);
  if (a.dim && emb.dim() != a.dim)
    throw m3dvg::FormatError(a.embeddings.string() + ": embedding dim " +
                             std::to_string(emb.dim()) + ", expected " + std::to_string(a.dim));
  auto ann = m3dvg::io::load_annotations(a.annotations);

  std::vector<std::string> missing, unused, mismatched;
  std::set<std::string> annotated;
  std::vector<m3dvg::CaptionRecord> records;
  for (const auto& r : ann) {
    annotated.insert(r.sample_id);
    const m3dvg::CaptionRecord* c = emb.find(r.sample_id);
    if (!c) {
      missing.push_back(r.sample_id);
      continue;
    }
    if (m3dvg::join_tokens(c->tokens) != r.caption) mismatched.push_back(r.sample_id);
    records.push_back(*c);
  }
  for (const auto& c : emb.records())
    if (!annotated.count(c.sample_id)) unused.push_back(c.sample_id);

  CommandResult r;
  if (!missing.empty() || !unused.empty() || !mismatched.empty()) {
    std::ostringstream out;
    auto list = [&](const char* what, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      out << what << ":";
      for (const auto& id : ids) out << " " << id;
      out << "\n";
    };
    list("annotations without embeddings", missing);
    list("embeddings without annotations", unused);
    list("caption differs from embedded tokens", mismatched);
    r.code = kFailed;
    r.report = out.str();
    r.machine = {{"command", "mask"},
                 {"ok", false},
                 {"missing_embeddings", missing},
                 {"missing_annotations", unused},
                 {"caption_mismatch", mismatched}};
    return r;
  }

  m3dvg::LcaOptions opt;
  opt.policy = {a.p, true};
  opt.seed = a.seed;
  opt.epoch = a.epoch;
  opt.expected_dim = emb.dim();
  m3dvg::LcaResult res = m3dvg::lca_pipeline(records, opt);

  fs::create_directories(a.out);
  m3dvg::io::write_file_atomic(a.out / "captions.tsv", m3dvg::format_masked_captions(res.captions));
  m3dvg::io::write_file_atomic(a.out / "audit.jsonl", m3dvg::format_audit(res.audit));
  std::size_t masked = 0, words = 0;
  for (const auto& x : res.audit) {
    masked += x.masked;
    words += x.masked_tokens.size();
  }
  std::ostringstream out;
  out << "records: " << res.audit.size() << "\nmasked records: " << masked
      << "\nmasked words: " << words << "\np: " << a.p << "  seed: " << a.seed
      << "  epoch: " << a.epoch << "\n";
  r.report = out.str();
  r.machine = {{"command", "mask"},   {"ok", true},        {"records", res.audit.size()},
               {"masked", masked},    {"masked_words", words}, {"p", a.p},
               {"seed", a.seed},      {"epoch", a.epoch}};
  return r;
}

// ---- eval ----

CommandResult cmd_eval(const fs::path& pred, const fs::path& gt,
                       const std::optional<fs::path>& calib_dir) {
  auto ann = m3dvg::io::load_annotations(gt);
  auto preds = m3dvg::io::load_predictions(pred);
  m3dvg::io::EvalInputs in = m3dvg::io::join_for_eval(ann, preds, calib_dir);
  m3dvg::AccuracyTable t = m3dvg::evaluate(in.samples, in.index);
  CommandResult r;
  r.report = m3dvg::format_tables(t);
  r.machine = m3dvg::to_json(t);
  return r;
}

// ---- toy ----

// Line-delimited traces and probe reports plus one checkpoint per seed.
void write_toy_outputs(const fs::path& dir, const m3dvg::toy::ToyExperiment& e) {
  fs::create_directories(dir);
  std::string trace, probes;
  for (const auto& run : e.runs) {
    for (const auto& t : run.training.trace)
      trace += Json{{"seed", run.seed},
                    {"epoch", t.epoch},
                    {"step", t.step},
                    {"l2d", t.loss.l2d},
                    {"l3d", t.loss.l3d},
                    {"overall", t.loss.overall}}
                   .dump() +
               "\n";
    for (auto [stage, rep] : {std::pair{"untrained", &run.untrained}, {"trained", &run.trained}}) {
      Json j{{"seed", run.seed}, {"stage", stage}};
      j.update(m3dvg::toy::to_json(*rep));
      probes += j.dump() + "\n";
    }
    m3dvg::io::save_checkpoint(dir / ("seed" + std::to_string(run.seed) + ".m3vc"),
                               run.training.params);
  }
  m3dvg::io::write_file_atomic(dir / "trace.jsonl", trace);
  m3dvg::io::write_file_atomic(dir / "probes.jsonl", probes);
}

CommandResult cmd_toy(const m3dvg::io::RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                      const std::optional<std::string>& out_dir) {
  std::ostringstream out;
  out << "seed  untrained_gap  trained_gap  matched  crossed  loss_ratio\n";
  auto e = m3dvg::toy::run_experiment(cfg.toy, seeds, [](const m3dvg::toy::ToyRun& run) {
    std::cerr << "seed " << run.seed << " done: gap " << fmt("%.3f", run.trained.gap()) << "\n";
  });
  char line[160];
  for (const auto& run : e.runs) {
    std::snprintf(line, sizeof line, "%4llu  %13.3f  %11.3f  %7.3f  %7.3f  %10.3f\n",
                  static_cast<unsigned long long>(run.seed), run.untrained.gap(),
                  run.trained.gap(), run.trained.matched, run.trained.crossed,
                  m3dvg::toy::ToyExperiment::loss_ratio(run));
    out << line;
  }
  std::snprintf(line, sizeof line, "mean  %13.3f  %11.3f  %7s  %7s  %10.3f\n",
                e.mean_untrained_gap(), e.mean_trained_gap(), "", "", e.mean_loss_ratio());
  out << line;
  out << "trained gap >= " << m3dvg::toy::kMinTrainedGap << ": "
      << (e.gap_ok() ? "yes" : "no") << "\n";
  out << "|untrained gap| < " << m3dvg::toy::kMaxUntrainedGap << ": "
      << (e.untrained_ok() ? "yes" : "no") << "\n";
  out << "final/initial loss < " << m3dvg::toy::kMaxLossRatio << ": "
      << (e.loss_ok() ? "yes" : "no") << "\n";
  if (out_dir) write_toy_outputs(*out_dir, e);
  CommandResult r;
  r.code = e.ok() ? kOk : kFailed;
  r.report = out.str();
  r.machine = {{"command", "toy"}, {"config", m3dvg::io::to_json(cfg)}};
  r.machine.update(m3dvg::toy::to_json(e));
  return r;
}

// ---- iou-oracle ----

CommandResult cmd_iou_oracle(const m3dvg::OracleOptions& o, std::uint64_t seed) {
  m3dvg::OracleReport rep = m3dvg::run_iou_oracle(o, seed);
  constexpr double kInvariance = 1e-9;
  bool inv_ok = rep.identity <= kInvariance && rep.max_symmetry() <= kInvariance &&
                rep.max_rigid() <= kInvariance;
  std::ostringstream out;
  out << "pairs: " << rep.pairs.size() << "  samples per pair: " << o.samples << "\n";
  out << "max |iou - mc|: " << fmt("%.5f", rep.max_deviation()) << "\n";
  out << "pairs outside max(" << o.abs_tolerance << ", " << o.stderr_multiple
      << " stderr): " << rep.outside << "\n";
  out << "max symmetry error: " << fmt("%.3e", rep.max_symmetry()) << "\n";
  out << "max identity error: " << fmt("%.3e", rep.identity) << "\n";
  out << "max rigid-motion error: " << fmt("%.3e", rep.max_rigid()) << "\n";
  Json pairs = Json::array();
  for (const auto& p : rep.pairs)
    pairs.push_back({{"iou", p.iou},
                     {"mc", p.mc.iou},
                     {"stderr", p.mc.std_error},
                     {"deviation", p.deviation},
                     {"allowed", p.allowed}});
  CommandResult r;
  r.code = rep.outside == 0 && inv_ok ? kOk : kFailed;
  r.report = out.str();
  r.machine = {{"command", "iou-oracle"},
               {"seed", seed},
               {"samples", o.samples},
               {"max_deviation", rep.max_deviation()},
               {"outside", rep.outside},
               {"max_symmetry_error", rep.max_symmetry()},
               {"max_identity_error", rep.identity},
               {"max_rigid_error", rep.max_rigid()},
               {"ok", r.code == kOk},
               {"pairs", pairs}};
  return r;
}

// ---- render ----

struct RenderArgs {
  fs::path gt, out;
  std::string sample;
  std::optional<fs::path> pred, calib, calib_dir;
  double width = 1242, height = 375;
};

CommandResult cmd_render(const RenderArgs& a) {
  auto ann = m3dvg::io::load_annotations(a.gt);
  const m3dvg::io::AnnotationRecord* rec = nullptr;
  for (const auto& r : ann)
    if (r.sample_id == a.sample) rec = &r;
  if (!rec) throw m3dvg::ValidationError("no annotation for sample '" + a.sample + "'");
  fs::path calib_path;
  if (a.calib) calib_path = *a.calib;
  else if (a.calib_dir) calib_path = *a.calib_dir / rec->calib_ref;
  else throw UsageError("render needs --calib or --calib-dir");
  m3dvg::CameraCalib calib = m3dvg::io::load_calib(calib_path);

  std::vector<m3dvg::WireframeBox> boxes{{rec->gt_box3d, "gt", "#00c000"}};
  if (a.pred) {
    auto preds = m3dvg::io::load_predictions(*a.pred);
    bool found = false;
    for (const auto& p : preds)
      if (p.sample_id == a.sample) {
        boxes.push_back({p.resolve(&calib), "pred", "#e00000"});
        found = true;
      }
    if (!found) throw m3dvg::ValidationError("no prediction for sample '" + a.sample + "'");
  }
  std::string svg = m3dvg::render_svg(boxes, calib, a.width, a.height);
  Json projected = Json::array();
  for (const auto& b : boxes) {
    Json pts = Json::array();
    for (const auto& p : m3dvg::project_corners(b.box, calib)) pts.push_back({p.x, p.y});
    projected.push_back({{"label", b.label}, {"corners", pts}});
  }
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  m3dvg::io::write_file_atomic(a.out, svg);
  CommandResult r;
  r.report = "wrote " + a.out.string() + " (" + std::to_string(boxes.size()) + " boxes)\n";
  r.machine = {{"command", "render"}, {"sample", a.sample}, {"svg", a.out.string()},
               {"boxes", projected}};
  fs::path json_path = a.out;
  json_path += ".json";
  m3dvg::io::write_file_atomic(json_path, r.machine.dump(2) + "\n");
  return r;
}

int finish(const CommandResult& r, const std::optional<std::string>& report) {
  write_reports(report, r);
  std::cout << r.report;
  return r.code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mono3DVG mechanisms: gradient checks, masking, evaluation, toy runs"};
  app.require_subcommand(1);
  std::optional<std::string> config_flag;
  app.add_option("--config", config_flag,
                 std::string("run config JSON (default: $") + m3dvg::io::kConfigEnvVar + ")");

  std::optional<std::string> report;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "random seed (default: config seed)");
    sub->add_option("--report", report, "write PREFIX.txt and PREFIX.json");
  };

  std::string scope = "all";
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--scope", scope, "attention, d2m, losses, pipeline or all")
      ->check(CLI::IsMember({"attention", "d2m", "losses", "pipeline", "all"}));
  common(gc);

  MaskArgs mask;
  std::optional<std::string> emb_path, ann_path;
  std::optional<double> mask_p;
  auto* mk = app.add_subcommand("mask", "lexical-certainty masking of captions");
  mk->add_option("--embeddings", emb_path, "embedding file (default: config files.embeddings)");
  mk->add_option("--annotations", ann_path, "annotation JSONL (default: config)");
  mk->add_option("--p", mask_p, "per-record mask probability (default: config)")
      ->check(CLI::Range(0.0, 1.0));
  mk->add_option("--epoch", mask.epoch, "epoch index for the masking draw");
  mk->add_option("--dim", mask.dim, "expected embedding dim (0: any)");
  mk->add_option("--out", mask.out, "output directory")->required();
  common(mk);

  std::string pred_path, gt_path;
  std::optional<std::string> calib_dir;
  std::string eval_report = "eval";
  auto* ev = app.add_subcommand("eval", "Acc@0.25 / Acc@0.5 tables");
  ev->add_option("--pred", pred_path, "prediction JSONL")->required();
  ev->add_option("--gt", gt_path, "annotation JSONL")->required();
  ev->add_option("--calib-dir", calib_dir, "calibration directory (default: config)");
  ev->add_option("--out", eval_report, "write PREFIX.txt and PREFIX.json (default: eval)");

  std::optional<std::size_t> epochs;
  std::optional<std::string> toy_out;
  auto* ty = app.add_subcommand("toy", "train the toy pipeline and probe decoupling");
  ty->add_option("--epochs", epochs, "override the configured epoch count");
  ty->add_option("--out", toy_out, "directory for trace.jsonl, probes.jsonl and checkpoints");
  common(ty);

  m3dvg::OracleOptions oracle;
  oracle.threads = std::max(1u, std::thread::hardware_concurrency());
  auto* io = app.add_subcommand("iou-oracle", "3D IoU against Monte-Carlo estimates");
  io->add_option("--n", oracle.pairs, "number of random box pairs")->check(CLI::PositiveNumber);
  io->add_option("--samples", oracle.samples, "Monte-Carlo samples per pair")
      ->check(CLI::Range(std::size_t{1000}, std::size_t{1} << 40));
  io->add_option("--threads", oracle.threads, "worker threads")->check(CLI::PositiveNumber);
  common(io);

  RenderArgs render;
  std::optional<std::string> pred_opt, calib_file;
  auto* rd = app.add_subcommand("render", "SVG wireframe of a sample's boxes");
  rd->add_option("--gt", render.gt, "annotation JSONL")->required();
  rd->add_option("--sample", render.sample, "sample_id")->required();
  rd->add_option("--pred", pred_opt, "prediction JSONL");
  rd->add_option("--calib", calib_file, "calibration file");
  rd->add_option("--calib-dir", calib_dir, "calibration directory (default: config)");
  rd->add_option("--width", render.width, "canvas width")->check(CLI::PositiveNumber);
  rd->add_option("--height", render.height, "canvas height")->check(CLI::PositiveNumber);
  rd->add_option("--out", render.out, "output SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    m3dvg::io::RunConfig cfg = load_config(config_flag);
    std::uint64_t s = seed.value_or(cfg.seed);
    auto path_or = [](const std::optional<std::string>& flag,
                      const std::optional<fs::path>& fallback,
                      const char* name) -> fs::path {
      if (flag) return *flag;
      if (fallback) return *fallback;
      throw UsageError(std::string("missing ") + name + " (flag or config files entry)");
    };
    auto dir_or = [&]() -> std::optional<fs::path> {
      if (calib_dir) return fs::path(*calib_dir);
      return cfg.calib_dir;
    };

    if (*gc) return finish(cmd_gradcheck(scope, s), report);
    if (*mk) {
      mask.embeddings = path_or(emb_path, cfg.embeddings, "--embeddings");
      mask.annotations = path_or(ann_path, cfg.annotations, "--annotations");
      mask.p = mask_p.value_or(cfg.toy.lca.probability);
      mask.seed = s;
      CommandResult r = cmd_mask(mask);
      if (r.code == kOk)
        m3dvg::io::write_file_atomic(mask.out / "summary.json", r.machine.dump(2) + "\n");
      return finish(r, report);
    }
    if (*ev) return finish(cmd_eval(pred_path, gt_path, dir_or()), eval_report);
    if (*ty) {
      if (epochs) cfg.toy.train.epochs = *epochs;
      std::vector<std::uint64_t> seeds = seed ? std::vector<std::uint64_t>{*seed} : cfg.toy_seeds;
      return finish(cmd_toy(cfg, seeds, toy_out), report);
    }
    if (*io) return finish(cmd_iou_oracle(oracle, s), report);
    if (*rd) {
      if (pred_opt) render.pred = fs::path(*pred_opt);
      if (calib_file) render.calib = fs::path(*calib_file);
      render.calib_dir = dir_or();
      return finish(cmd_render(render), report);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
