#include "stseq/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace stseq {

using nlohmann::json;

std::string to_string(InputMode mode) {
  switch (mode) {
    case InputMode::kMeanPool: return "meanpool";
    case InputMode::kJointSt: return "joint-st";
    case InputMode::kGlobalLocal: return "global-local";
  }
  return "joint-st";
}

InputMode parse_input_mode(const std::string& name) {
  if (name == "meanpool") return InputMode::kMeanPool;
  if (name == "joint-st") return InputMode::kJointSt;
  if (name == "global-local") return InputMode::kGlobalLocal;
  throw ConfigError("unknown input mode '" + name + "'");
}

std::string to_string(Precision p) { return p == Precision::kF64 ? "f64" : "f32"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::kF32;
  if (name == "f64") return Precision::kF64;
  throw ConfigError("unknown precision '" + name + "'");
}

namespace {

std::size_t min_frames(TaskKind kind) { return kind == TaskKind::kReversal ? 3 : 2; }

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> keys(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!keys.count(it.key())) {
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
  }
}

template <typename V>
void read(const json& obj, const char* key, V& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->template get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  layout.validate();
  model.validate();
  mask.validate();
  const std::size_t need = min_frames(task);
  if (frames < need) {
    throw ConfigError("frames: task " + to_string(task) + " needs at least " +
                      std::to_string(need));
  }
  if (eval_frames.empty()) throw ConfigError("eval_frames: at least one frame count");
  for (auto f : eval_frames) {
    if (f < need) {
      throw ConfigError("eval_frames: " + std::to_string(f) + " below task minimum " +
                        std::to_string(need));
    }
  }
  if (input_mode == InputMode::kGlobalLocal &&
      (local_frames == 0 || local_frames > frames)) {
    throw ConfigError("local_frames must lie in [1, frames]");
  }
  if (projector_width == 0) throw ConfigError("projector_width must be positive");
  if (model.vocab < Vocab::standard().size()) {
    throw ConfigError("model.vocab " + std::to_string(model.vocab) +
                      " smaller than task vocabulary " +
                      std::to_string(Vocab::standard().size()));
  }
  const auto& o = optimizer;
  if (!(o.lr > 0.0) || !std::isfinite(o.lr) || !(o.beta1 >= 0.0 && o.beta1 < 1.0) ||
      !(o.beta2 >= 0.0 && o.beta2 < 1.0) || !(o.eps > 0.0)) {
    throw ConfigError("optimizer: lr > 0, betas in [0,1), eps > 0 required");
  }
  if (o.batch_size == 0) throw ConfigError("optimizer.batch_size must be positive");
  if (eval_samples == 0) throw ConfigError("eval_samples must be positive");
  if (!(weights.mvm >= 0.0) || !(weights.llm >= 0.0) || !std::isfinite(weights.mvm) ||
      !std::isfinite(weights.llm)) {
    throw ConfigError("loss weights must be finite and non-negative");
  }
}

json RunConfig::to_json() const {
  return json{
      {"schema_version", kConfigSchemaVersion},
      {"seed", seed},
      {"task", to_string(task)},
      {"frames", frames},
      {"local_frames", local_frames},
      {"eval_frames", eval_frames},
      {"grid", layout.grid},
      {"patches_per_side", layout.patches_per_side},
      {"input_mode", to_string(input_mode)},
      {"global_local", to_string(global_local)},
      {"projector_width", projector_width},
      {"mask",
       {{"mode", to_string(mask.mode)},
        {"rho", mask.rho},
        {"sigma", mask.sigma},
        {"mean", mask.bounds.mean},
        {"low", mask.bounds.low},
        {"high", mask.bounds.high},
        {"granularity", mask_granularity == MaskGranularity::kBatch ? "batch" : "sample"},
        {"positions", positions == PositionPolicy::kKeep ? "keep" : "renumber"}}},
      {"mvm",
       {{"enabled", mvm},
        {"target", mvm_target == MvmTarget::kLogits ? "logits" : "hidden"},
        {"weight", weights.mvm}}},
      {"llm_weight", weights.llm},
      {"model",
       {{"layers", model.layers},
        {"heads", model.heads},
        {"dim", model.dim},
        {"vocab", model.vocab},
        {"ffn_mult", model.ffn_mult},
        {"rope_base", model.rope_base}}},
      {"optimizer",
       {{"lr", optimizer.lr},
        {"beta1", optimizer.beta1},
        {"beta2", optimizer.beta2},
        {"eps", optimizer.eps},
        {"steps", optimizer.steps},
        {"batch_size", optimizer.batch_size},
        {"warmup", optimizer.warmup}}},
      {"eval_samples", eval_samples},
      {"eval_every", eval_every},
      {"precision", to_string(precision)},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"schema_version", "seed", "task", "frames", "local_frames",
                  "eval_frames", "grid", "patches_per_side", "input_mode",
                  "global_local", "projector_width", "mask", "mvm", "llm_weight",
                  "model", "optimizer", "eval_samples", "eval_every", "precision"},
                 "config");
  int version = kConfigSchemaVersion;
  read(j, "schema_version", version, "config");
  if (version != kConfigSchemaVersion) {
    throw ConfigError("config: unsupported schema_version " + std::to_string(version));
  }
  RunConfig c;
  std::string s;
  read(j, "seed", c.seed, "config");
  if (j.contains("task")) {
    read(j, "task", s, "config");
    c.task = parse_task_kind(s);
  }
  read(j, "frames", c.frames, "config");
  read(j, "local_frames", c.local_frames, "config");
  read(j, "eval_frames", c.eval_frames, "config");
  read(j, "grid", c.layout.grid, "config");
  read(j, "patches_per_side", c.layout.patches_per_side, "config");
  if (j.contains("input_mode")) {
    read(j, "input_mode", s, "config");
    c.input_mode = parse_input_mode(s);
  }
  if (j.contains("global_local")) {
    read(j, "global_local", s, "config");
    c.global_local = parse_global_local_variant(s);
  }
  read(j, "projector_width", c.projector_width, "config");
  if (auto it = j.find("mask"); it != j.end()) {
    const json& m = *it;
    reject_unknown(m, {"mode", "rho", "sigma", "mean", "low", "high", "granularity",
                       "positions"},
                   "config.mask");
    if (m.contains("mode")) {
      read(m, "mode", s, "config.mask");
      c.mask.mode = parse_mask_mode(s);
    }
    read(m, "rho", c.mask.rho, "config.mask");
    read(m, "sigma", c.mask.sigma, "config.mask");
    read(m, "mean", c.mask.bounds.mean, "config.mask");
    read(m, "low", c.mask.bounds.low, "config.mask");
    read(m, "high", c.mask.bounds.high, "config.mask");
    if (m.contains("granularity")) {
      read(m, "granularity", s, "config.mask");
      if (s != "sample" && s != "batch") throw ConfigError("config.mask.granularity: '" + s + "'");
      c.mask_granularity = s == "batch" ? MaskGranularity::kBatch : MaskGranularity::kSample;
    }
    if (m.contains("positions")) {
      read(m, "positions", s, "config.mask");
      if (s != "renumber" && s != "keep") throw ConfigError("config.mask.positions: '" + s + "'");
      c.positions = s == "keep" ? PositionPolicy::kKeep : PositionPolicy::kRenumber;
    }
  }
  if (auto it = j.find("mvm"); it != j.end()) {
    const json& m = *it;
    reject_unknown(m, {"enabled", "target", "weight"}, "config.mvm");
    read(m, "enabled", c.mvm, "config.mvm");
    read(m, "weight", c.weights.mvm, "config.mvm");
    if (m.contains("target")) {
      read(m, "target", s, "config.mvm");
      if (s != "hidden" && s != "logits") throw ConfigError("config.mvm.target: '" + s + "'");
      c.mvm_target = s == "logits" ? MvmTarget::kLogits : MvmTarget::kHidden;
    }
  }
  read(j, "llm_weight", c.weights.llm, "config");
  if (auto it = j.find("model"); it != j.end()) {
    reject_unknown(*it, {"layers", "heads", "dim", "vocab", "ffn_mult", "rope_base"},
                   "config.model");
    read(*it, "layers", c.model.layers, "config.model");
    read(*it, "heads", c.model.heads, "config.model");
    read(*it, "dim", c.model.dim, "config.model");
    read(*it, "vocab", c.model.vocab, "config.model");
    read(*it, "ffn_mult", c.model.ffn_mult, "config.model");
    read(*it, "rope_base", c.model.rope_base, "config.model");
  }
  if (auto it = j.find("optimizer"); it != j.end()) {
    reject_unknown(*it, {"lr", "beta1", "beta2", "eps", "steps", "batch_size", "warmup"},
                   "config.optimizer");
    read(*it, "lr", c.optimizer.lr, "config.optimizer");
    read(*it, "beta1", c.optimizer.beta1, "config.optimizer");
    read(*it, "beta2", c.optimizer.beta2, "config.optimizer");
    read(*it, "eps", c.optimizer.eps, "config.optimizer");
    read(*it, "steps", c.optimizer.steps, "config.optimizer");
    read(*it, "batch_size", c.optimizer.batch_size, "config.optimizer");
    read(*it, "warmup", c.optimizer.warmup, "config.optimizer");
  }
  read(j, "eval_samples", c.eval_samples, "config");
  read(j, "eval_every", c.eval_every, "config");
  if (j.contains("precision")) {
    read(j, "precision", s, "config");
    c.precision = parse_precision(s);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(to_json().dump())));
  return buf;
}

}  // namespace stseq
