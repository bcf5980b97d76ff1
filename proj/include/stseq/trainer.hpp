#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stseq/checkpoint.hpp"
#include "stseq/config.hpp"

namespace stseq {

// Every trainable array of a run.
template <typename T>
struct StParams {
  FrameEncoderParams<T> encoder;
  ProjectionParams<T> projection;
  ResidualProjectorParams<T> projector;
  TransformerParams<T> lm;

  template <typename F>
  void visit(F&& f) {
    f("encoder.weight", encoder.weight);
    f("encoder.bias", encoder.bias);
    f("projection.weight", projection.weight);
    f("projection.bias", projection.bias);
    f("projector.w1", projector.w1);
    f("projector.b1", projector.b1);
    f("projector.w2", projector.w2);
    f("projector.b2", projector.b2);
    lm.visit(f);
  }
  void zero_grad();
};

template <typename T>
StParams<T> init_params(const RunConfig& config, Rng& rng);

struct MetricsRecord {
  std::size_t step = 0;
  double l_llm = 0.0;
  double l_mvm = 0.0;
  double rho = 0.0;  // batch mean of the sampled mask rates
  std::map<std::size_t, double> accuracy;  // by eval frame count, when evaluated
  double wall_clock_s = 0.0;
  std::string config_hash;

  // The deterministic fields only; wall clock goes to a separate stream.
  nlohmann::json to_json() const;
};

template <typename T>
struct SampleLoss {
  Var<T> total;
  Var<T> llm;
  Var<T> mvm;  // constant 0 when MVM is disabled
  double rho = 0.0;
  std::size_t forward_passes = 0;
  bool mvm_degenerate = false;
};

// RNG streams derived from RunConfig::seed.
enum class Stream : std::uint64_t { kInit = 1, kData = 2, kMask = 3, kEval = 4 };

template <typename T>
class Trainer {
 public:
  explicit Trainer(RunConfig config);
  Trainer(RunConfig config, StParams<T> params);

  const RunConfig& config() const { return config_; }
  StParams<T>& params() { return params_; }
  std::size_t step() const { return step_; }
  Rng& data_rng() { return data_rng_; }
  Rng& mask_rng() { return mask_rng_; }

  // Visual tokens for the configured input mode.
  TokenGrid<T> visual_grid(Tape<T>& tape, const SyntheticVideo& video);
  TokenSequence<T> build_sequence(Tape<T>& tape, const Task& task,
                                  bool append_end = true);
  SampleLoss<T> sample_loss(Tape<T>& tape, const Task& task, double rho,
                            Rng& mask_rng);

  // Gradient over the batch mean of the per-sample losses, then one
  // optimizer update.
  MetricsRecord train_step(const std::vector<Task>& batch);

  // Greedy decode of the answer span, each step restricted to the task's
  // answer candidates.
  std::vector<int> greedy_answer(const Task& task);
  // Exact-match accuracy on `n_samples` held-out tasks with `frame_count`
  // frames each. No masking.
  double evaluate(std::size_t frame_count, std::size_t n_samples, Rng& rng);
  // Same, on the run's fixed evaluation stream.
  double evaluate(std::size_t frame_count);

  Checkpoint checkpoint();
  void load(const Checkpoint& ckpt);

 private:
  void adam_update();

  RunConfig config_;
  std::string hash_;
  StParams<T> params_;
  std::vector<Tensor<T>> adam_m_;
  std::vector<Tensor<T>> adam_v_;
  std::size_t step_ = 0;
  Rng data_rng_;
  Rng mask_rng_;
};

struct TrainSummary {
  std::string config_hash;
  std::size_t steps = 0;
  double final_l_llm = 0.0;
  double final_l_mvm = 0.0;
  std::map<std::size_t, double> accuracy;
  std::vector<MetricsRecord> metrics;

  nlohmann::json to_json() const;
};

// Full run. With an output directory, writes config.json, metrics.jsonl,
// timing.jsonl, summary.csv and checkpoint.bin there; on a non-finite loss
// writes failure.json and rethrows.
TrainSummary run_training(const RunConfig& config,
                          const std::optional<std::filesystem::path>& out_dir = {});

// Loads a checkpoint and evaluates it at each frame count.
std::map<std::size_t, double> evaluate_checkpoint(
    const std::filesystem::path& path, const std::vector<std::size_t>& frames,
    std::size_t n_samples);
std::map<std::size_t, double> evaluate_checkpoint(
    const Checkpoint& ckpt, const std::vector<std::size_t>& frames,
    std::size_t n_samples);

}  // namespace stseq
