#ifndef M3DVG_IO_CONFIG_HPP_
#define M3DVG_IO_CONFIG_HPP_

// Run configuration as a JSON document. Every section and key is optional
// and defaults as below; unknown keys are errors. Relative file paths are
// resolved against the config file's directory and must exist.
//
// {
//   "seed": 1,
//   "d2m":  {"enabled": true, "num_queries": 4, "dim": 16, "heads": 2,
//            "ffn_dim": 32, "similarity": "scaled_dot"},
//   "lca":  {"enabled": false, "probability": 1.0},
//   "loss_weights": {"lambda1": 2, "lambda2": 5, "lambda3": 2, "lambda4": 10},
//   "toy":  {"seeds": [1,2,3,4,5], "k2": 3, "k3": 3, "visual_rows": 4,
//            "filler_tokens": 2, "text_noise": 0.1, "visual_noise": 0.5,
//            "decoder_queries": 1, "head_hidden": 32, "epochs": 40,
//            "batch_size": 16, "train_samples": 256, "probe_samples": 2048,
//            "lr": 0.005, "weight_decay": 0.0001},
//   "files": {"embeddings": "...", "annotations": "...", "calib_dir": "..."}
// }

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "m3dvg/io/common.hpp"
#include "m3dvg/toy/train.hpp"

namespace m3dvg::io {

inline constexpr const char* kConfigEnvVar = "M3DVG_CONFIG";

struct RunConfig {
  std::uint64_t seed = 1;
  toy::ToyConfig toy;
  std::vector<std::uint64_t> toy_seeds{1, 2, 3, 4, 5};
  std::optional<std::filesystem::path> embeddings;
  std::optional<std::filesystem::path> annotations;
  std::optional<std::filesystem::path> calib_dir;
};

namespace detail {

class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& msg, const std::string& key = "") const {
    throw ValidationError("config " + (key.empty() ? path_ : path_ + "." + key) + ": " + msg);
  }

  const nlohmann::json* find(const std::string& key) const {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) const {
    if (auto* v = find(key)) {
      if (!v->is_number() || !std::isfinite(v->get<double>())) fail("expected a finite number", key);
      out = v->get<double>();
    }
  }

  template <class U>
    requires std::is_unsigned_v<U>
  void read(const std::string& key, U& out) const {
    if (auto* v = find(key)) {
      if (!v->is_number_unsigned()) fail("expected a non-negative integer", key);
      out = v->get<U>();
    }
  }

  void read(const std::string& key, bool& out) const {
    if (auto* v = find(key)) {
      if (!v->is_boolean()) fail("expected true or false", key);
      out = v->get<bool>();
    }
  }

  std::optional<std::string> string(const std::string& key) const {
    auto* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) fail("expected a string", key);
    return v->get<std::string>();
  }

  std::optional<Section> section(const std::string& key) const {
    auto* v = find(key);
    if (!v) return std::nullopt;
    return Section(*v, path_ + "." + key);
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) fail("unknown key '" + k + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  mutable std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {},
                                  const std::string& source = "<memory>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(source + ": parse error: " + e.what());
  }
  RunConfig r;
  toy::ToyConfig& t = r.toy;
  detail::Section root(j, "root");
  root.read("seed", r.seed);
  if (auto s = root.section("d2m")) {
    s->read("enabled", t.wiring.d2m);
    s->read("num_queries", t.model.num_queries);
    s->read("dim", t.model.dim);
    s->read("heads", t.model.heads);
    s->read("ffn_dim", t.model.ffn_dim);
    if (auto m = s->string("similarity")) {
      try {
        t.model.similarity = similarity_from_string(*m);
      } catch (const Error& e) {
        s->fail(e.what(), "similarity");
      }
    }
    s->finish();
  }
  if (auto s = root.section("lca")) {
    s->read("enabled", t.lca.enabled);
    s->read("probability", t.lca.probability);
    s->finish();
  }
  if (auto s = root.section("loss_weights")) {
    s->read("lambda1", t.weights.lambda1);
    s->read("lambda2", t.weights.lambda2);
    s->read("lambda3", t.weights.lambda3);
    s->read("lambda4", t.weights.lambda4);
    s->finish();
  }
  if (auto s = root.section("toy")) {
    if (auto* v = s->find("seeds")) {
      if (!v->is_array() || v->empty()) s->fail("expected a nonempty array of integers", "seeds");
      r.toy_seeds.clear();
      for (const auto& e : *v) {
        if (!e.is_number_unsigned()) s->fail("expected non-negative integers", "seeds");
        r.toy_seeds.push_back(e.get<std::uint64_t>());
      }
    }
    s->read("k2", t.synth.k2);
    s->read("k3", t.synth.k3);
    s->read("visual_rows", t.synth.visual_rows);
    s->read("filler_tokens", t.synth.filler_tokens);
    s->read("text_noise", t.synth.text_noise);
    s->read("visual_noise", t.synth.visual_noise);
    s->read("decoder_queries", t.model.decoder_queries);
    s->read("head_hidden", t.model.head_hidden);
    s->read("epochs", t.train.epochs);
    s->read("batch_size", t.train.batch_size);
    s->read("train_samples", t.train.train_samples);
    s->read("probe_samples", t.train.probe_samples);
    s->read("lr", t.train.lr);
    s->read("weight_decay", t.train.weight_decay);
    s->finish();
  }
  if (auto s = root.section("files")) {
    auto path = [&](const std::string& key, std::optional<std::filesystem::path>& out) {
      if (auto v = s->string(key)) {
        std::filesystem::path p(*v);
        if (p.is_relative()) p = base_dir / p;
        if (!std::filesystem::exists(p)) s->fail("file '" + p.string() + "' does not exist", key);
        out = p;
      }
    };
    path("embeddings", r.embeddings);
    path("annotations", r.annotations);
    path("calib_dir", r.calib_dir);
    s->finish();
  }
  root.finish();
  t.synth.dim = t.model.dim;
  try {
    t.validate();
    if (t.model.dim == 0 || t.model.heads == 0 || t.model.dim % t.model.heads != 0)
      throw ContractError("d2m dim must be a positive multiple of heads");
    if (t.model.num_queries == 0) throw ContractError("d2m num_queries must be positive");
  } catch (const Error& e) {
    throw ValidationError("config: " + std::string(e.what()));
  }
  return r;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.parent_path(), path.string());
}

// Path named by the environment variable, if set and nonempty.
inline std::optional<std::filesystem::path> config_path_from_env() {
  const char* v = std::getenv(kConfigEnvVar);
  if (!v || !*v) return std::nullopt;
  return std::filesystem::path(v);
}

inline nlohmann::ordered_json to_json(const RunConfig& r) {
  const toy::ToyConfig& t = r.toy;
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["d2m"] = {{"enabled", t.wiring.d2m},
              {"num_queries", t.model.num_queries},
              {"dim", t.model.dim},
              {"heads", t.model.heads},
              {"ffn_dim", t.model.ffn_dim},
              {"similarity", to_string(t.model.similarity)}};
  j["lca"] = {{"enabled", t.lca.enabled}, {"probability", t.lca.probability}};
  j["loss_weights"] = {{"lambda1", t.weights.lambda1},
                       {"lambda2", t.weights.lambda2},
                       {"lambda3", t.weights.lambda3},
                       {"lambda4", t.weights.lambda4}};
  j["toy"] = {{"seeds", r.toy_seeds},
              {"k2", t.synth.k2},
              {"k3", t.synth.k3},
              {"visual_rows", t.synth.visual_rows},
              {"filler_tokens", t.synth.filler_tokens},
              {"text_noise", t.synth.text_noise},
              {"visual_noise", t.synth.visual_noise},
              {"decoder_queries", t.model.decoder_queries},
              {"head_hidden", t.model.head_hidden},
              {"epochs", t.train.epochs},
              {"batch_size", t.train.batch_size},
              {"train_samples", t.train.train_samples},
              {"probe_samples", t.train.probe_samples},
              {"lr", t.train.lr},
              {"weight_decay", t.train.weight_decay}};
  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  if (r.embeddings) files["embeddings"] = r.embeddings->string();
  if (r.annotations) files["annotations"] = r.annotations->string();
  if (r.calib_dir) files["calib_dir"] = r.calib_dir->string();
  j["files"] = files;
  return j;
}

}  // namespace m3dvg::io

#endif  // M3DVG_IO_CONFIG_HPP_
