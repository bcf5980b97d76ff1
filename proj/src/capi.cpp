#include "stseq/stseq.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>

#include "stseq/ablation.hpp"
#include "stseq/gradcheck.hpp"
#include "stseq/trainer.hpp"
#include "stseq/verify.hpp"

struct stseq_config {
  stseq::RunConfig config;
};

struct stseq_model {
  stseq::Checkpoint checkpoint;
};

namespace {

thread_local std::string last_error;

struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

stseq_status fail(stseq_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename F>
stseq_status guarded(F&& body) {
  try {
    body();
    return STSEQ_OK;
  } catch (const stseq::Error& e) {
    return fail(static_cast<stseq_status>(e.kind()), e.what());
  } catch (const CheckFailed& e) {
    return fail(STSEQ_ERR_CHECK_FAILED, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(STSEQ_ERR_CONFIG, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(STSEQ_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(STSEQ_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(STSEQ_ERR_INTERNAL, "unknown error");
  }
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json checks_json(const std::vector<stseq::CheckResult>& results) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : results) {
    out.push_back({{"name", r.name}, {"passed", r.passed}, {"measured", r.measured},
                   {"bound", r.bound}, {"detail", r.detail}, {"seconds", r.seconds}});
  }
  return out;
}

}  // namespace

extern "C" {

const char* stseq_version(void) { return "1.0.0"; }

const char* stseq_last_error(void) { return last_error.c_str(); }

const char* stseq_status_name(stseq_status status) {
  switch (status) {
    case STSEQ_OK: return "ok";
    case STSEQ_ERR_CONFIG: return "config error";
    case STSEQ_ERR_DIMENSION: return "dimension error";
    case STSEQ_ERR_INDEX: return "index error";
    case STSEQ_ERR_CONTRACT: return "contract error";
    case STSEQ_ERR_NUMERIC: return "numeric error";
    case STSEQ_ERR_IO: return "i/o error";
    case STSEQ_ERR_ARGUMENT: return "invalid argument";
    case STSEQ_ERR_CHECK_FAILED: return "check failed";
    case STSEQ_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void stseq_string_free(char* s) { std::free(s); }

stseq_status stseq_config_new(stseq_config** out) {
  if (!out) return fail(STSEQ_ERR_ARGUMENT, "out must not be NULL");
  return guarded([&] { *out = new stseq_config{}; });
}

stseq_status stseq_config_from_json(const char* json, stseq_config** out) {
  if (!json || !out) return fail(STSEQ_ERR_ARGUMENT, "json and out must not be NULL");
  return guarded([&] {
    auto config = stseq::RunConfig::from_json(nlohmann::json::parse(json));
    *out = new stseq_config{std::move(config)};
  });
}

stseq_status stseq_config_load(const char* path, stseq_config** out) {
  if (!path || !out) return fail(STSEQ_ERR_ARGUMENT, "path and out must not be NULL");
  return guarded([&] { *out = new stseq_config{stseq::RunConfig::load(path)}; });
}

stseq_status stseq_config_update(stseq_config* config, const char* json_patch) {
  if (!config || !json_patch) return fail(STSEQ_ERR_ARGUMENT, "config and patch must not be NULL");
  return guarded([&] {
    const auto patch = nlohmann::json::parse(json_patch);
    if (!patch.is_object()) throw stseq::ConfigError("config patch must be a JSON object");
    auto j = config->config.to_json();
    j.merge_patch(patch);
    config->config = stseq::RunConfig::from_json(j);
  });
}

stseq_status stseq_config_to_json(const stseq_config* config, char** out) {
  if (!config || !out) return fail(STSEQ_ERR_ARGUMENT, "config and out must not be NULL");
  return guarded([&] { *out = dup(config->config.to_json().dump(2)); });
}

stseq_status stseq_config_hash(const stseq_config* config, char** out) {
  if (!config || !out) return fail(STSEQ_ERR_ARGUMENT, "config and out must not be NULL");
  return guarded([&] { *out = dup(config->config.hash()); });
}

void stseq_config_free(stseq_config* config) { delete config; }

stseq_status stseq_train(const stseq_config* config, const char* out_dir,
                         char** summary_json) {
  if (!config) return fail(STSEQ_ERR_ARGUMENT, "config must not be NULL");
  return guarded([&] {
    std::optional<std::filesystem::path> dir;
    if (out_dir) dir = out_dir;
    const auto summary = stseq::run_training(config->config, dir);
    if (summary_json) *summary_json = dup(summary.to_json().dump());
  });
}

stseq_status stseq_model_load(const char* checkpoint_path, stseq_model** out) {
  if (!checkpoint_path || !out) return fail(STSEQ_ERR_ARGUMENT, "path and out must not be NULL");
  return guarded([&] {
    auto ckpt = stseq::read_checkpoint(checkpoint_path);
    stseq::RunConfig::from_json(ckpt.config);
    *out = new stseq_model{std::move(ckpt)};
  });
}

stseq_status stseq_model_config(const stseq_model* model, char** json) {
  if (!model || !json) return fail(STSEQ_ERR_ARGUMENT, "model and json must not be NULL");
  return guarded([&] { *json = dup(model->checkpoint.config.dump(2)); });
}

stseq_status stseq_model_evaluate(const stseq_model* model, const size_t* frames,
                                  size_t n_frames, size_t n_samples, double* accuracy) {
  if (!model || (n_frames > 0 && (!frames || !accuracy))) {
    return fail(STSEQ_ERR_ARGUMENT, "model, frames and accuracy must not be NULL");
  }
  return guarded([&] {
    std::vector<std::size_t> counts(frames, frames + n_frames);
    const auto acc = stseq::evaluate_checkpoint(model->checkpoint, counts, n_samples);
    for (size_t i = 0; i < n_frames; ++i) accuracy[i] = acc.at(frames[i]);
  });
}

void stseq_model_free(stseq_model* model) { delete model; }

stseq_status stseq_ablate(const stseq_config* base, int table, const char* out_dir,
                          size_t jobs, int force, char** summary_json) {
  if (!base || !out_dir) return fail(STSEQ_ERR_ARGUMENT, "base and out_dir must not be NULL");
  return guarded([&] {
    const auto rows = stseq::run_ablation(stseq::ablation_grid(table, base->config), out_dir,
                                          jobs, force != 0);
    if (summary_json) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& r : rows) {
        auto j = r.summary.to_json();
        j["label"] = r.label;
        out.push_back(std::move(j));
      }
      *summary_json = dup(out.dump());
    }
  });
}

stseq_status stseq_gradcheck(uint64_t seed, int global_local, char** report_json) {
  return guarded([&] {
    stseq::GradcheckOptions o;
    o.seed = seed;
    o.global_local = global_local != 0;
    const auto r = stseq::gradcheck_model(o);
    if (report_json) {
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& e : r.entries) {
        entries.push_back({{"name", e.name}, {"index", e.index}, {"analytic", e.analytic},
                           {"numeric", e.numeric}, {"rel_error", e.rel_error}});
      }
      *report_json = dup(nlohmann::json{{"seed", seed},
                                        {"sequence_length", r.sequence_length},
                                        {"loss", r.loss},
                                        {"max_rel_error", r.max_rel_error},
                                        {"tolerance", o.tolerance},
                                        {"passed", r.passed},
                                        {"entries", entries}}
                             .dump());
    }
    if (!r.passed) throw CheckFailed("gradient check exceeded tolerance");
  });
}

stseq_status stseq_gen_data(const stseq_config* config, size_t n, const char* split,
                            const char* path) {
  if (!config || !split || !path) {
    return fail(STSEQ_ERR_ARGUMENT, "config, split and path must not be NULL");
  }
  return guarded([&] {
    const auto& c = config->config;
    stseq::Rng rng(stseq::derive_seed(c.seed, std::uint64_t(stseq::Stream::kData)));
    const auto tasks = stseq::gen_batch(c.task, n, c.frames, c.layout.grid, rng,
                                        stseq::parse_split(split));
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw stseq::IoError(std::string("cannot write '") + path + "'");
    stseq::write_jsonl(out, tasks);
    if (!out) throw stseq::IoError(std::string("short write on '") + path + "'");
  });
}

stseq_status stseq_verify(uint64_t seed, char** report_json) {
  return guarded([&] {
    const auto results = stseq::run_invariants(seed);
    if (report_json) *report_json = dup(checks_json(results).dump());
    for (const auto& r : results) {
      if (!r.passed) throw CheckFailed("invariant '" + r.name + "' failed: " + r.detail);
    }
  });
}

}  // extern "C"
