#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stseq/data.hpp"
#include "stseq/globallocal.hpp"
#include "stseq/masking.hpp"
#include "stseq/model.hpp"
#include "stseq/objectives.hpp"

namespace stseq {

inline constexpr int kConfigSchemaVersion = 1;

enum class InputMode { kMeanPool, kJointSt, kGlobalLocal };
enum class Precision { kF32, kF64 };
enum class MaskGranularity { kSample, kBatch };

std::string to_string(InputMode mode);
InputMode parse_input_mode(const std::string& name);
std::string to_string(Precision p);
Precision parse_precision(const std::string& name);

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  std::size_t warmup = 0;  // linear warmup steps, constant afterwards
};

struct RunConfig {
  std::uint64_t seed = 0;
  TaskKind task = TaskKind::kReversal;
  // Frames per training video; the global frame count T in global-local mode.
  std::size_t frames = 16;
  std::size_t local_frames = 8;  // T-bar, global-local mode only
  std::vector<std::size_t> eval_frames = {16};
  PatchLayout layout{16, 2};

  InputMode input_mode = InputMode::kJointSt;
  GlobalLocalVariant global_local = GlobalLocalVariant::kAdapter;
  std::size_t projector_width = 4;

  MaskSchedule mask;
  MaskGranularity mask_granularity = MaskGranularity::kSample;
  PositionPolicy positions = PositionPolicy::kRenumber;

  bool mvm = false;
  MvmTarget mvm_target = MvmTarget::kHidden;
  LossWeights weights;

  ModelConfig model;
  OptimizerConfig optimizer;

  std::size_t eval_samples = 256;
  std::size_t eval_every = 0;  // 0: evaluate only at the end
  Precision precision = Precision::kF32;

  // ConfigError on any invalid or inconsistent field.
  void validate() const;

  nlohmann::json to_json() const;
  // Unknown keys are rejected; absent keys keep their defaults.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);

  // fnv1a-64 of the canonical JSON dump, hex.
  std::string hash() const;
};

}  // namespace stseq
