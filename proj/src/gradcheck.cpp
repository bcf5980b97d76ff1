#include "stseq/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "stseq/trainer.hpp"

namespace stseq {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

RunConfig gradcheck_config(const GradcheckOptions& o) {
  RunConfig c;
  c.seed = o.seed;
  c.task = TaskKind::kDirection;
  c.layout = {4, 2};
  c.precision = Precision::kF64;
  c.model.layers = 2;
  c.model.heads = 2;
  c.model.dim = 16;
  c.model.vocab = Vocab::standard().size();
  c.mask.mode = MaskMode::kStatic;
  c.mask.rho = 0.5;
  c.mvm = true;
  if (o.global_local) {
    c.input_mode = InputMode::kGlobalLocal;
    c.global_local = GlobalLocalVariant::kAdapter;
    c.frames = 4;
    c.local_frames = 2;
  } else {
    c.frames = 2;
    c.local_frames = 2;
  }
  c.eval_frames = {c.frames};
  return c;
}

struct Problem {
  Trainer<double>& trainer;
  const Task& task;
  const MaskPlan& plan;
  const Tensor<double>& reference_hidden;
  std::size_t length = 0;

  // Masked decoder loss plus MVM with the reference held fixed.
  double loss(bool backward) {
    Tape<double> tape(backward);
    auto full = trainer.build_sequence(tape, task);
    auto masked = apply_mask(full, plan, trainer.config().positions);
    length = masked.length();
    auto out = forward(masked, trainer.params().lm);
    ModelOutput<double> reference;
    reference.hidden = tape.constant(reference_hidden);
    reference.logits = tape.constant(Tensor<double>({1, 1}));
    auto llm = decoder_loss(out, masked, task.prompt_ids.size());
    auto mvm = mvm_loss(out, reference, select_pairs(masked, full, plan));
    auto total = total_loss(mvm.value, llm, trainer.config().weights);
    const double value = total.value()[0];
    if (backward) tape.backward(total);
    return value;
  }
};

}  // namespace

GradcheckReport gradcheck_model(const GradcheckOptions& o) {
  GradcheckReport report;
  report.config = gradcheck_config(o);
  Trainer<double> trainer(report.config);
  auto& params = trainer.params();
  Rng rng(derive_seed(o.seed, 0x67636b));
  if (o.global_local) {
    // The residual MLP starts at zero; give it weight so gradients cross it.
    std::normal_distribution<double> n(0.0, 0.1);
    for (auto& v : params.projector.w2.value.data) v = n(rng);
    for (auto& v : params.projector.b2.value.data) v = n(rng);
  }

  const Task task = gen_direction(rng, report.config.frames, report.config.layout.grid);
  Tensor<double> reference_hidden;
  MaskPlan plan;
  {
    Tape<double> tape(false);
    auto full = trainer.build_sequence(tape, task);
    reference_hidden = forward(full, params.lm, {ForwardMode::kReference}).hidden.value();
    plan = build_mask_plan(full.frames, full.slots, report.config.mask.rho, rng);
  }
  Problem problem{trainer, task, plan, reference_hidden};

  params.zero_grad();
  report.loss = problem.loss(true);
  report.sequence_length = problem.length;

  struct Slot {
    std::string name;
    Param<double>* param;
  };
  std::vector<Slot> slots;
  params.visit([&](const std::string& name, Param<double>& p) {
    if (!o.global_local && name.starts_with("projector.")) return;
    slots.push_back({name, &p});
  });
  std::uniform_int_distribution<std::size_t> pick(0, slots.size() - 1);
  for (std::size_t s = 0; s < o.samples; ++s) {
    auto& slot = slots[pick(rng)];
    auto& value = slot.param->value.data;
    std::uniform_int_distribution<std::size_t> element(0, value.size() - 1);
    const std::size_t i = element(rng);
    const double saved = value[i];
    auto at = [&](double offset) {
      value[i] = saved + offset;
      return problem.loss(false);
    };
    const double h = o.step;
    const double numeric = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
    value[i] = saved;
    GradcheckEntry e;
    e.name = slot.name;
    e.index = i;
    e.analytic = slot.param->grad[i];
    e.numeric = numeric;
    e.rel_error = relative_error(e.analytic, e.numeric, o.floor);
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(std::move(e));
  }
  report.passed = report.max_rel_error < o.tolerance;
  return report;
}

}  // namespace stseq
