#include "stseq/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace stseq {

namespace fs = std::filesystem;

template <typename T>
void StParams<T>::zero_grad() {
  visit([](const std::string&, Param<T>& p) { p.zero_grad(); });
}

template <typename T>
StParams<T> init_params(const RunConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.model.dim;
  StParams<T> p;
  p.encoder = init_frame_encoder<T>(config.layout, d, rng);
  p.projection = init_projection<T>(d, rng);
  const std::size_t out_frames =
      config.global_local == GlobalLocalVariant::kAdapterPerFrame ? config.local_frames : 1;
  p.projector = init_residual_projector<T>(d, config.projector_width, out_frames, rng);
  p.lm = init_transformer<T>(config.model, rng);
  p.zero_grad();
  return p;
}

nlohmann::json MetricsRecord::to_json() const {
  nlohmann::json acc = nlohmann::json::object();
  for (auto [f, a] : accuracy) acc[std::to_string(f)] = a;
  return {{"step", step},   {"l_llm", l_llm},       {"l_mvm", l_mvm},
          {"rho", rho},     {"accuracy", acc},      {"config_hash", config_hash}};
}

nlohmann::json TrainSummary::to_json() const {
  nlohmann::json acc = nlohmann::json::object();
  for (auto [f, a] : accuracy) acc[std::to_string(f)] = a;
  return {{"config_hash", config_hash}, {"steps", steps},
          {"final_l_llm", final_l_llm}, {"final_l_mvm", final_l_mvm},
          {"accuracy", acc}};
}

template <typename T>
Trainer<T>::Trainer(RunConfig config)
    : config_(std::move(config)),
      data_rng_(derive_seed(config_.seed, std::uint64_t(Stream::kData))),
      mask_rng_(derive_seed(config_.seed, std::uint64_t(Stream::kMask))) {
  config_.validate();
  hash_ = config_.hash();
  Rng init(derive_seed(config_.seed, std::uint64_t(Stream::kInit)));
  params_ = init_params<T>(config_, init);
  params_.visit([this](const std::string&, Param<T>& p) {
    adam_m_.emplace_back(p.value.shape);
    adam_v_.emplace_back(p.value.shape);
  });
}

template <typename T>
Trainer<T>::Trainer(RunConfig config, StParams<T> params) : Trainer(std::move(config)) {
  params_ = std::move(params);
}

template <typename T>
TokenGrid<T> Trainer<T>::visual_grid(Tape<T>& tape, const SyntheticVideo& video) {
  auto encoded = encode_frames(tape, video, config_.layout, params_.encoder);
  auto projected = project_visual(encoded, params_.projection);
  switch (config_.input_mode) {
    case InputMode::kMeanPool:
      return TokenGrid<T>{frame_mean(projected.tokens, projected.frames), 1,
                          projected.slots, projected.dim};
    case InputMode::kJointSt:
      return projected;
    case InputMode::kGlobalLocal:
      return build_global_local(projected, std::min(config_.local_frames, video.frames),
                                config_.global_local, params_.projector);
  }
  throw ConfigError("unknown input mode");
}

template <typename T>
TokenSequence<T> Trainer<T>::build_sequence(Tape<T>& tape, const Task& task,
                                            bool append_end) {
  const auto grid = visual_grid(tape, task.video);
  const auto text = task.text_ids();
  return assemble_sequence(grid, std::span<const int>(text), params_.lm.embedding,
                           append_end);
}

template <typename T>
SampleLoss<T> Trainer<T>::sample_loss(Tape<T>& tape, const Task& task, double rho,
                                      Rng& mask_rng) {
  SampleLoss<T> s;
  s.rho = rho;
  const std::size_t prompt = task.prompt_ids.size();
  auto full = build_sequence(tape, task);
  if (!config_.mvm) {
    auto seq = full;
    if (config_.mask.enabled()) {
      const auto plan = build_mask_plan(full.frames, full.slots, rho, mask_rng);
      seq = apply_mask(full, plan, config_.positions);
    }
    auto out = forward(seq, params_.lm);
    s.llm = decoder_loss(out, seq, prompt);
    s.mvm = tape.constant(Tensor<T>({1}));
    s.total = config_.weights.llm == 1.0 ? s.llm : scale(s.llm, T(config_.weights.llm));
    s.forward_passes = 1;
    return s;
  }
  const auto reference = forward(full, params_.lm, {ForwardMode::kReference});
  const auto plan = build_mask_plan(full.frames, full.slots, rho, mask_rng);
  auto masked = apply_mask(full, plan, config_.positions);
  auto out = forward(masked, params_.lm);
  s.llm = decoder_loss(out, masked, prompt);
  const auto selection = select_pairs(masked, full, plan);
  auto mvm = mvm_loss(out, reference, selection, config_.mvm_target);
  s.mvm = mvm.value;
  s.mvm_degenerate = mvm.degenerate;
  s.total = total_loss(s.mvm, s.llm, config_.weights);
  s.forward_passes = 2;
  return s;
}

template <typename T>
MetricsRecord Trainer<T>::train_step(const std::vector<Task>& batch) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const auto t0 = std::chrono::steady_clock::now();
  params_.zero_grad();
  const bool masking = config_.mask.enabled();
  const double batch_rho =
      masking && config_.mask_granularity == MaskGranularity::kBatch
          ? config_.mask.sample(mask_rng_)
          : 0.0;
  MetricsRecord rec;
  rec.step = step_ + 1;
  rec.config_hash = hash_;
  const T inv_batch = T(1) / T(batch.size());
  for (const auto& task : batch) {
    double rho = 0.0;
    if (masking) {
      rho = config_.mask_granularity == MaskGranularity::kBatch
                ? batch_rho
                : config_.mask.sample(mask_rng_);
    }
    Tape<T> tape;
    auto s = sample_loss(tape, task, rho, mask_rng_);
    const double total = double(s.total.value()[0]);
    if (!std::isfinite(total)) {
      throw NumericError("non-finite loss at step " + std::to_string(rec.step) +
                         " (config " + hash_ + ", seed " +
                         std::to_string(config_.seed) + ")");
    }
    tape.backward(scale(s.total, inv_batch));
    rec.l_llm += double(s.llm.value()[0]);
    rec.l_mvm += double(s.mvm.value()[0]);
    rec.rho += rho;
  }
  rec.l_llm /= double(batch.size());
  rec.l_mvm /= double(batch.size());
  rec.rho /= double(batch.size());
  adam_update();
  ++step_;
  rec.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

template <typename T>
void Trainer<T>::adam_update() {
  const auto& o = config_.optimizer;
  const double t = double(step_ + 1);
  double lr = o.lr;
  if (o.warmup > 0) lr *= std::min(1.0, t / double(o.warmup));
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  const T b1 = T(o.beta1), b2 = T(o.beta2), eps = T(o.eps);
  std::size_t k = 0;
  params_.visit([&](const std::string&, Param<T>& p) {
    auto& m = adam_m_[k].data;
    auto& v = adam_v_[k].data;
    ++k;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const T mhat = m[i] / T(c1);
      const T vhat = v[i] / T(c2);
      p.value[i] -= T(lr) * mhat / (std::sqrt(vhat) + eps);
    }
  });
}

template <typename T>
std::vector<int> Trainer<T>::greedy_answer(const Task& task) {
  Tape<T> tape(/*record=*/false);
  const auto grid = visual_grid(tape, task.video);
  std::vector<int> text = task.prompt_ids;
  std::vector<int> answer;
  const auto candidates = answer_candidates(task.kind);
  for (std::size_t k = 0; k < task.answer_ids.size(); ++k) {
    auto seq = assemble_sequence(grid, std::span<const int>(text),
                                 params_.lm.embedding, /*append_end=*/false);
    auto out = forward(seq, params_.lm);
    const auto& logits = out.logits.value();
    const std::size_t last = logits.rows() - 1;
    // Multiple choice: the argmax runs over the task's answer words only.
    int best = candidates.front();
    for (int id : candidates) {
      if (logits.at(last, std::size_t(id)) > logits.at(last, std::size_t(best))) best = id;
    }
    answer.push_back(best);
    text.push_back(best);
  }
  return answer;
}

template <typename T>
double Trainer<T>::evaluate(std::size_t frame_count, std::size_t n_samples, Rng& rng) {
  if (n_samples == 0) return 0.0;
  const auto tasks = gen_batch(config_.task, n_samples, frame_count,
                               config_.layout.grid, rng, Split::kTest);
  std::size_t hits = 0;
  for (const auto& task : tasks) hits += greedy_answer(task) == task.answer_ids;
  return double(hits) / double(n_samples);
}

template <typename T>
double Trainer<T>::evaluate(std::size_t frame_count) {
  // Same stream for every frame count: the held-out clips are the same
  // motions sampled at different frame counts.
  Rng rng(derive_seed(config_.seed, std::uint64_t(Stream::kEval)));
  return evaluate(frame_count, config_.eval_samples, rng);
}

template <typename T>
Checkpoint Trainer<T>::checkpoint() {
  Checkpoint ckpt;
  ckpt.config = config_.to_json();
  params_.visit([&](const std::string& name, Param<T>& p) {
    CheckpointTensor t;
    t.name = name;
    t.shape = p.value.shape;
    t.values.assign(p.value.data.begin(), p.value.data.end());
    ckpt.tensors.push_back(std::move(t));
  });
  return ckpt;
}

template <typename T>
void Trainer<T>::load(const Checkpoint& ckpt) {
  params_.visit([&](const std::string& name, Param<T>& p) {
    const auto& t = ckpt.find(name);
    if (t.shape != p.value.shape) {
      throw IoError("checkpoint: tensor '" + name + "' has shape " +
                    shape_to_string(t.shape) + ", model expects " +
                    shape_to_string(p.value.shape));
    }
    p.value.data.assign(t.values.begin(), t.values.end());
  });
}

namespace {

template <typename T>
TrainSummary train_impl(const RunConfig& config,
                        const std::optional<fs::path>& out_dir) {
  Trainer<T> trainer(config);
  TrainSummary summary;
  summary.config_hash = config.hash();

  std::ofstream metrics, timing;
  if (out_dir) {
    fs::create_directories(*out_dir);
    std::ofstream(*out_dir / "config.json") << config.to_json().dump(2) << '\n';
    metrics.open(*out_dir / "metrics.jsonl", std::ios::trunc);
    timing.open(*out_dir / "timing.jsonl", std::ios::trunc);
    if (!metrics || !timing) throw IoError("cannot write metrics under " + out_dir->string());
  }

  const auto& o = config.optimizer;
  try {
    for (std::size_t s = 0; s < o.steps; ++s) {
      auto batch = gen_batch(config.task, o.batch_size, config.frames,
                             config.layout.grid, trainer.data_rng(), Split::kTrain);
      auto rec = trainer.train_step(batch);
      const bool last = s + 1 == o.steps;
      if (config.eval_every > 0 && (rec.step % config.eval_every == 0) && !last) {
        for (auto f : config.eval_frames) rec.accuracy[f] = trainer.evaluate(f);
      }
      if (last) {
        for (auto f : config.eval_frames) rec.accuracy[f] = trainer.evaluate(f);
      }
      if (out_dir) {
        metrics << rec.to_json().dump() << '\n';
        timing << nlohmann::json{{"step", rec.step}, {"wall_clock_s", rec.wall_clock_s}}.dump()
               << '\n';
      }
      summary.metrics.push_back(std::move(rec));
    }
  } catch (const NumericError& e) {
    if (out_dir) {
      std::ofstream(*out_dir / "failure.json")
          << nlohmann::json{{"error", e.what()},
                            {"step", trainer.step() + 1},
                            {"seed", config.seed},
                            {"config", config.to_json()}}
                 .dump(2)
          << '\n';
    }
    throw;
  }
  if (o.steps == 0) {
    MetricsRecord rec;
    rec.config_hash = summary.config_hash;
    for (auto f : config.eval_frames) rec.accuracy[f] = trainer.evaluate(f);
    summary.metrics.push_back(rec);
  }
  const auto& last = summary.metrics.back();
  summary.steps = o.steps;
  summary.final_l_llm = last.l_llm;
  summary.final_l_mvm = last.l_mvm;
  summary.accuracy = last.accuracy;

  if (out_dir) {
    write_checkpoint(*out_dir / "checkpoint.bin", trainer.checkpoint());
    std::ofstream csv(*out_dir / "summary.csv");
    csv << "config_hash,input_mode,mask_mode,mvm,steps,final_l_llm,final_l_mvm";
    for (auto [f, a] : summary.accuracy) csv << ",acc_T" << f;
    csv << '\n' << summary.config_hash << ',' << to_string(config.input_mode) << ','
        << to_string(config.mask.mode) << ',' << (config.mvm ? "on" : "off") << ','
        << summary.steps << ',' << std::setprecision(17) << summary.final_l_llm << ','
        << summary.final_l_mvm;
    for (auto [f, a] : summary.accuracy) csv << ',' << a;
    csv << '\n';
  }
  return summary;
}

template <typename T>
std::map<std::size_t, double> evaluate_impl(const RunConfig& config,
                                            const Checkpoint& ckpt,
                                            const std::vector<std::size_t>& frames,
                                            std::size_t n_samples) {
  Trainer<T> trainer(config);
  trainer.load(ckpt);
  Rng base(derive_seed(config.seed, std::uint64_t(Stream::kEval)));
  std::map<std::size_t, double> acc;
  for (auto f : frames) {
    Rng rng = base;
    acc[f] = trainer.evaluate(f, n_samples, rng);
  }
  return acc;
}

}  // namespace

TrainSummary run_training(const RunConfig& config,
                          const std::optional<fs::path>& out_dir) {
  config.validate();
  return config.precision == Precision::kF64 ? train_impl<double>(config, out_dir)
                                             : train_impl<float>(config, out_dir);
}

std::map<std::size_t, double> evaluate_checkpoint(const fs::path& path,
                                                  const std::vector<std::size_t>& frames,
                                                  std::size_t n_samples) {
  return evaluate_checkpoint(read_checkpoint(path), frames, n_samples);
}

std::map<std::size_t, double> evaluate_checkpoint(const Checkpoint& ckpt,
                                                  const std::vector<std::size_t>& frames,
                                                  std::size_t n_samples) {
  const auto config = RunConfig::from_json(ckpt.config);
  return config.precision == Precision::kF64
             ? evaluate_impl<double>(config, ckpt, frames, n_samples)
             : evaluate_impl<float>(config, ckpt, frames, n_samples);
}

template struct StParams<float>;
template struct StParams<double>;
template StParams<float> init_params(const RunConfig&, Rng&);
template StParams<double> init_params(const RunConfig&, Rng&);
template class Trainer<float>;
template class Trainer<double>;

}  // namespace stseq
