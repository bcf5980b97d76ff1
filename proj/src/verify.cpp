#include "stseq/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "stseq/gradcheck.hpp"
#include "stseq/trainer.hpp"

namespace stseq {

namespace {

RunConfig tiny_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.task = TaskKind::kReversal;
  c.frames = 4;
  c.local_frames = 2;
  c.eval_frames = {4};
  c.layout = {8, 2};
  c.model.layers = 2;
  c.model.heads = 2;
  c.model.dim = 16;
  c.model.vocab = 32;
  c.precision = Precision::kF64;
  return c;
}

template <typename F>
CheckResult timed(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("threw: ") + e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

std::vector<double> param_grads(StParams<double>& p) {
  std::vector<double> g;
  p.visit([&](const std::string&, Param<double>& x) {
    g.insert(g.end(), x.grad.data.begin(), x.grad.data.end());
  });
  return g;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape != b.shape) return INFINITY;
  return max_abs_diff(a.data, b.data);
}

// Same sequence with a replacement embedding matrix and position ids.
TokenSequence<double> rebuilt(Tape<double>& tape, const TokenSequence<double>& seq,
                              Tensor<double> embeddings,
                              std::vector<std::int64_t> positions) {
  TokenSequence<double> out = seq;
  out.embeddings = tape.constant(std::move(embeddings));
  out.position_ids = std::move(positions);
  return out;
}

}  // namespace

CheckResult check_surviving_tokens(std::uint64_t seed, std::size_t frames,
                                   std::size_t slots, double sigma,
                                   std::size_t plans) {
  Rng rng(seed);
  const MaskRateBounds bounds;
  double total = 0.0;
  for (std::size_t i = 0; i < plans; ++i) {
    const double rho = sample_mask_rate(sigma, rng, bounds);
    total += double(build_mask_plan(frames, slots, rho, rng).kept.size());
  }
  const double mean = total / double(plans);
  const double expected = double(frames * slots - masked_count(frames * slots, bounds.mean));
  CheckResult r;
  r.measured = std::abs(mean - expected);
  r.bound = 2.0;
  r.passed = r.measured <= r.bound;
  r.detail = "mean surviving " + fmt(mean) + " vs " + fmt(expected);
  return r;
}

CheckResult check_mask_rate_sampler(std::uint64_t seed, std::size_t draws) {
  Rng rng(seed);
  const MaskRateBounds bounds;
  double sum = 0.0, lo = 1.0, hi = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double rho = sample_mask_rate(0.1, rng, bounds);
    sum += rho;
    lo = std::min(lo, rho);
    hi = std::max(hi, rho);
  }
  const double mean = sum / double(draws);
  const double at_zero = sample_mask_rate(0.0, rng, bounds);
  CheckResult r;
  r.measured = std::abs(mean - 0.5);
  r.bound = 0.01;
  r.passed = lo >= bounds.low && hi <= bounds.high && r.measured <= r.bound &&
             at_zero == bounds.mean;
  r.detail = "range [" + fmt(lo) + ", " + fmt(hi) + "], mean " + fmt(mean) +
             ", sigma=0 gives " + fmt(at_zero);
  return r;
}

CheckResult check_mask_plan_uniformity(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t frames = 4, slots = 8, n = 4000;
  const double rho = 0.25;
  std::vector<std::size_t> hits(frames * slots, 0);
  bool partition = true;
  for (std::size_t i = 0; i < n; ++i) {
    const auto plan = build_mask_plan(frames, slots, rho, rng);
    std::vector<std::size_t> all = plan.masked;
    all.insert(all.end(), plan.kept.begin(), plan.kept.end());
    std::sort(all.begin(), all.end());
    partition = partition && std::is_sorted(plan.masked.begin(), plan.masked.end()) &&
                std::is_sorted(plan.kept.begin(), plan.kept.end()) &&
                plan.masked.size() == masked_count(frames * slots, rho) &&
                std::adjacent_find(all.begin(), all.end()) == all.end() &&
                all.size() == frames * slots && all.back() == frames * slots - 1;
    for (auto m : plan.masked) ++hits[m];
  }
  const double sd = std::sqrt(rho * (1.0 - rho) / double(n));
  double worst = 0.0;
  for (auto h : hits) worst = std::max(worst, std::abs(double(h) / double(n) - rho) / sd);
  CheckResult r;
  r.measured = worst;
  r.bound = 3.0;
  r.passed = partition && worst <= r.bound;
  r.detail = std::string(partition ? "partition ok" : "partition broken") +
             ", worst frequency deviation " + fmt(worst) + " sd";
  return r;
}

CheckResult check_apply_mask(std::uint64_t seed) {
  Trainer<double> trainer(tiny_config(seed));
  Rng rng(seed);
  const Task task = gen_reversal(rng, 4, 8);
  Tape<double> tape(false);
  const auto full = trainer.build_sequence(tape, task);
  const auto plan = build_mask_plan(full.frames, full.slots, 0.5, rng);
  bool ok = true;
  for (auto policy : {PositionPolicy::kRenumber, PositionPolicy::kKeep}) {
    const auto m = apply_mask(full, plan, policy);
    ok = ok && m.length() == full.length() - plan.masked.size();
    std::size_t src = 0;
    for (std::size_t p = 0; p < m.length(); ++p) {
      while (!(full.origins[src] == m.origins[p])) ++src;
      const auto& tag = m.origins[p];
      if (tag.kind == OriginKind::kVisual) {
        const std::size_t flat = std::size_t(tag.frame) * full.slots + std::size_t(tag.slot);
        ok = ok && std::binary_search(plan.kept.begin(), plan.kept.end(), flat);
      }
      for (std::size_t d = 0; d < m.embeddings.cols(); ++d)
        ok = ok && m.embeddings.value().at(p, d) == full.embeddings.value().at(src, d);
      const std::int64_t want =
          policy == PositionPolicy::kRenumber ? std::int64_t(p) : full.position_ids[src];
      ok = ok && m.position_ids[p] == want;
    }
    std::size_t non_visual = 0;
    for (const auto& o : m.origins) non_visual += o.kind != OriginKind::kVisual;
    ok = ok && non_visual == full.length() - full.visual_count();
  }
  CheckResult r;
  r.passed = ok;
  r.bound = 0.0;
  r.detail = ok ? "rows, order and position ids as expected" : "mismatch";
  return r;
}

CheckResult check_mvm_empty_plan(std::uint64_t seed) {
  auto config = tiny_config(seed);
  config.mvm = true;
  config.mask.mode = MaskMode::kStatic;
  Trainer<double> trainer(config);
  Rng rng(seed);
  const Task task = gen_reversal(rng, 4, 8);
  Tape<double> tape;
  const auto full = trainer.build_sequence(tape, task);
  const auto reference = forward(full, trainer.params().lm, {ForwardMode::kReference});
  const auto plan = build_mask_plan(full.frames, full.slots, 0.0, rng);
  const auto masked = apply_mask(full, plan, config.positions);
  const auto out = forward(masked, trainer.params().lm);
  const auto loss = mvm_loss(out, reference, select_pairs(masked, full, plan));
  CheckResult r;
  r.measured = std::abs(loss.value.value()[0]);
  r.bound = 0.0;
  r.passed = !loss.degenerate && plan.masked.empty() && r.measured == 0.0;
  r.detail = "L_mvm = " + fmt(loss.value.value()[0]) + " over " +
             std::to_string(plan.kept.size()) + " pairs";
  return r;
}

CheckResult check_mvm_detachment(std::uint64_t seed) {
  auto config = tiny_config(seed);
  config.mvm = true;
  config.mask.mode = MaskMode::kStatic;
  config.mask.rho = 0.5;
  Trainer<double> trainer(config);
  auto& params = trainer.params();
  Rng rng(seed);
  const Task task = gen_reversal(rng, 4, 8);
  const Rng mask_start(derive_seed(seed, 11));

  // Training path.
  params.zero_grad();
  std::vector<double> implementation;
  {
    Tape<double> tape;
    Rng mrng = mask_start;
    auto s = trainer.sample_loss(tape, task, config.mask.rho, mrng);
    tape.backward(s.mvm);
    implementation = param_grads(params);
  }

  // Mean squared difference over surviving visual rows, against either a
  // constant copy of the unmasked hidden states or the live unmasked graph.
  auto mvm_grads = [&](bool live) {
    params.zero_grad();
    Tape<double> tape;
    Rng mrng = mask_start;
    const auto full = trainer.build_sequence(tape, task);
    Var<double> reference;
    if (live) {
      reference = forward(full, params.lm).hidden;
    } else {
      Tape<double> side(false);
      const auto again = trainer.build_sequence(side, task);
      reference = tape.constant(forward(again, params.lm).hidden.value());
    }
    const auto plan = build_mask_plan(full.frames, full.slots, config.mask.rho, mrng);
    const auto masked = apply_mask(full, plan, config.positions);
    const auto out = forward(masked, params.lm);
    std::vector<std::size_t> masked_rows, full_rows;
    for (std::size_t p = 0; p < masked.length(); ++p) {
      const auto& tag = masked.origins[p];
      if (tag.kind != OriginKind::kVisual) continue;
      masked_rows.push_back(p);
      full_rows.push_back(1 + std::size_t(tag.frame) * full.slots + std::size_t(tag.slot));
    }
    const auto diff = sub(gather_rows(out.hidden, std::span<const std::size_t>(masked_rows)),
                          gather_rows(reference, std::span<const std::size_t>(full_rows)));
    tape.backward(mean(mul(diff, diff)));
    return param_grads(params);
  };
  const auto oracle = mvm_grads(false);
  const auto live = mvm_grads(true);
  CheckResult r;
  r.measured = max_abs_diff(implementation, oracle);
  r.bound = 1e-12;
  const double live_gap = max_abs_diff(live, oracle);
  r.passed = r.measured <= r.bound && live_gap > 1e-8;
  r.detail = "vs constants oracle " + fmt(r.measured) + "; live-reference graph differs by " +
             fmt(live_gap);
  return r;
}

CheckResult check_mvm_zero_rate(std::uint64_t seed) {
  auto on = tiny_config(seed);
  on.mvm = true;
  on.mask.mode = MaskMode::kStatic;
  auto off = tiny_config(seed);
  Trainer<double> a(on), b(off);
  Rng rng(seed);
  const Task task = gen_reversal(rng, 4, 8);
  auto grads = [&](Trainer<double>& t, double& mvm) {
    t.params().zero_grad();
    Tape<double> tape;
    Rng mrng(seed);
    auto s = t.sample_loss(tape, task, 0.0, mrng);
    mvm = s.mvm.value()[0];
    tape.backward(s.total);
    return param_grads(t.params());
  };
  double mvm_on = 1.0, mvm_off = 1.0;
  const auto ga = grads(a, mvm_on);
  const auto gb = grads(b, mvm_off);
  CheckResult r;
  r.measured = max_abs_diff(ga, gb);
  r.bound = 1e-12;
  r.passed = r.measured <= r.bound && mvm_on == 0.0;
  r.detail = "L_mvm " + fmt(mvm_on) + ", gradient gap " + fmt(r.measured);
  return r;
}

CheckResult check_global_local_zero_init(std::uint64_t seed) {
  auto config = tiny_config(seed);
  config.frames = 8;
  config.local_frames = 4;
  config.input_mode = InputMode::kGlobalLocal;
  Trainer<double> trainer(config);
  auto& p = trainer.params();
  Rng rng(seed);
  const Task task = gen_reversal(rng, config.frames, config.layout.grid);
  const auto text = task.text_ids();
  auto logits = [&](GlobalLocalVariant v) {
    Tape<double> tape(false);
    auto grid = project_visual(encode_frames(tape, task.video, config.layout, p.encoder),
                               p.projection);
    auto fused = build_global_local(grid, config.local_frames, v, p.projector);
    auto seq = assemble_sequence(fused, std::span<const int>(text), p.lm.embedding);
    return forward(seq, p.lm).logits.value();
  };
  const auto adapter = logits(GlobalLocalVariant::kAdapter);
  const auto local = logits(GlobalLocalVariant::kLocalOnly);
  CheckResult r;
  r.measured = max_abs_diff(adapter, local);
  r.bound = 0.0;
  r.passed = adapter.shape == local.shape && adapter.data == local.data;
  r.detail = r.passed ? "bit-identical logits" : "max difference " + fmt(r.measured);
  return r;
}

CheckResult check_causality(std::uint64_t seed) {
  Trainer<double> trainer(tiny_config(seed));
  Rng rng(seed);
  const Task task = gen_reversal(rng, 4, 8);
  Tape<double> tape(false);
  const auto seq = trainer.build_sequence(tape, task);
  const auto base = forward(seq, trainer.params().lm).logits.value();
  const std::size_t len = seq.length();
  std::normal_distribution<double> noise(0.0, 1.0);
  double leak = 0.0, moved = INFINITY;
  for (std::size_t p = 1; p < len; ++p) {
    Tensor<double> e = seq.embeddings.value();
    for (std::size_t d = 0; d < e.cols(); ++d) e.at(p, d) += noise(rng);
    const auto shifted = rebuilt(tape, seq, std::move(e), seq.position_ids);
    const auto out = forward(shifted, trainer.params().lm).logits.value();
    double here = 0.0;
    for (std::size_t r = 0; r < len; ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) {
        const double d = std::abs(out.at(r, c) - base.at(r, c));
        if (r < p) leak = std::max(leak, d);
        if (r == p) here = std::max(here, d);
      }
    moved = std::min(moved, here);
  }
  CheckResult r;
  r.measured = leak;
  r.bound = 0.0;
  r.passed = leak == 0.0 && moved > 0.0;
  r.detail = "earlier rows changed by " + fmt(leak) + "; perturbed row moved by at least " +
             fmt(moved);
  return r;
}

CheckResult check_rope_offset(std::uint64_t seed) {
  Trainer<double> trainer(tiny_config(seed));
  Rng rng(seed);
  const Task task = gen_reversal(rng, 4, 8);
  Tape<double> tape(false);
  const auto seq = trainer.build_sequence(tape, task);
  const ForwardOptions capture{ForwardMode::kTrain, true};
  const auto base = forward(seq, trainer.params().lm, capture).attention_scores;
  double worst = 0.0;
  for (std::int64_t offset : {1, 7, 100, 1000}) {
    auto ids = seq.position_ids;
    for (auto& id : ids) id += offset;
    const auto moved = rebuilt(tape, seq, seq.embeddings.value(), std::move(ids));
    const auto scores = forward(moved, trainer.params().lm, capture).attention_scores;
    for (std::size_t k = 0; k < base.size(); ++k)
      worst = std::max(worst, max_abs_diff(base[k], scores[k]));
  }
  CheckResult r;
  r.measured = worst;
  r.bound = 1e-12;
  r.passed = !base.empty() && worst <= r.bound;
  r.detail = "max attention-score change " + fmt(worst);
  return r;
}

CheckResult check_meanpool_order_blind(std::uint64_t seed) {
  auto config = tiny_config(seed);
  config.input_mode = InputMode::kMeanPool;
  Trainer<double> trainer(config);
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Task task = gen_reversal(rng, 8, 8);
    Tape<double> tape(false);
    const auto a = trainer.visual_grid(tape, task.video).tokens.value();
    const auto b = trainer.visual_grid(tape, reverse_frames(task.video)).tokens.value();
    worst = std::max(worst, max_abs_diff(a, b));
  }
  CheckResult r;
  r.measured = worst;
  r.bound = 0.0;
  r.passed = worst == 0.0;
  r.detail = "max token difference between a clip and its reverse " + fmt(worst);
  return r;
}

CheckResult check_split_disjoint(std::uint64_t seed) {
  Rng rng(seed);
  const auto train = gen_batch(TaskKind::kReversal, 500, 8, 8, rng, Split::kTrain);
  const auto test = gen_batch(TaskKind::kReversal, 500, 8, 8, rng, Split::kTest);
  std::set<std::uint64_t> seen;
  bool labels_ok = true;
  for (const auto& t : train) {
    seen.insert(t.state_hash);
    labels_ok = labels_ok && split_of(t.state_hash) == Split::kTrain;
  }
  std::size_t shared = 0;
  for (const auto& t : test) {
    shared += seen.count(t.state_hash);
    labels_ok = labels_ok && split_of(t.state_hash) == Split::kTest;
  }
  CheckResult r;
  r.measured = double(shared);
  r.bound = 0.0;
  r.passed = shared == 0 && labels_ok;
  r.detail = std::to_string(shared) + " shared states";
  return r;
}

CheckResult check_checkpoint_roundtrip(std::uint64_t seed) {
  auto config = tiny_config(seed);
  config.precision = Precision::kF32;
  Trainer<float> a(config);
  const auto bytes = encode_checkpoint(a.checkpoint());
  auto other = config;
  other.seed = seed + 1;
  Trainer<float> b(other);
  b.load(decode_checkpoint(bytes));
  bool same = true;
  std::vector<std::vector<float>> va;
  a.params().visit([&](const std::string&, Param<float>& p) { va.push_back(p.value.data); });
  std::size_t k = 0;
  b.params().visit([&](const std::string&, Param<float>& p) { same = same && p.value.data == va[k++]; });
  const bool stable = encode_checkpoint(a.checkpoint()) == bytes;
  CheckResult r;
  r.passed = same && stable;
  r.detail = same ? "parameters restored exactly" : "parameter mismatch";
  return r;
}

CheckResult check_reproducible_steps(std::uint64_t seed) {
  auto config = tiny_config(seed);
  config.precision = Precision::kF32;
  config.mvm = true;
  config.mask.mode = MaskMode::kDynamicNormal;
  config.optimizer.batch_size = 4;
  auto run = [&] {
    Trainer<float> t(config);
    std::string out;
    for (int s = 0; s < 3; ++s) {
      auto batch = gen_batch(config.task, config.optimizer.batch_size, config.frames,
                             config.layout.grid, t.data_rng(), Split::kTrain);
      out += t.train_step(batch).to_json().dump() + "\n";
    }
    return out;
  };
  const auto first = run();
  const auto second = run();
  CheckResult r;
  r.passed = first == second;
  r.detail = r.passed ? "identical metrics records" : "metrics records differ";
  return r;
}

CheckResult check_gradcheck(std::uint64_t seed) {
  GradcheckOptions o;
  o.seed = seed;
  const auto report = gradcheck_model(o);
  CheckResult r;
  r.measured = report.max_rel_error;
  r.bound = o.tolerance;
  r.passed = report.passed && report.entries.size() >= 50 && report.sequence_length <= 12;
  r.detail = std::to_string(report.entries.size()) + " parameters, L=" +
             std::to_string(report.sequence_length) + ", max relative error " +
             fmt(report.max_rel_error);
  return r;
}

CheckResult check_gradcheck_global_local(std::uint64_t seed) {
  GradcheckOptions o;
  o.seed = seed;
  o.global_local = true;
  const auto report = gradcheck_model(o);
  CheckResult r;
  r.measured = report.max_rel_error;
  r.bound = o.tolerance;
  r.passed = report.passed;
  r.detail = std::to_string(report.entries.size()) + " parameters, max relative error " +
             fmt(report.max_rel_error);
  return r;
}

std::vector<CheckResult> run_invariants(
    std::uint64_t seed, const std::function<void(const CheckResult&)>& on_result) {
  using Check = CheckResult (*)(std::uint64_t);
  const std::pair<const char*, Check> checks[] = {
      {"masking.surviving_tokens",
       [](std::uint64_t s) { return check_surviving_tokens(s); }},
      {"masking.rate_sampler", [](std::uint64_t s) { return check_mask_rate_sampler(s); }},
      {"masking.plan_uniformity", check_mask_plan_uniformity},
      {"masking.apply", check_apply_mask},
      {"objectives.mvm_empty_plan", check_mvm_empty_plan},
      {"objectives.mvm_detachment", check_mvm_detachment},
      {"trainer.mvm_zero_rate", check_mvm_zero_rate},
      {"globallocal.zero_init", check_global_local_zero_init},
      {"model.causality", check_causality},
      {"model.rope_offset", check_rope_offset},
      {"tokens.meanpool_order_blind", check_meanpool_order_blind},
      {"data.split_disjoint", check_split_disjoint},
      {"checkpoint.roundtrip", check_checkpoint_roundtrip},
      {"trainer.reproducible", check_reproducible_steps},
      {"numerics.gradcheck", check_gradcheck},
      {"globallocal.gradcheck", check_gradcheck_global_local},
  };
  std::vector<CheckResult> results;
  for (const auto& [name, fn] : checks) {
    results.push_back(timed(name, [&] { return fn(seed); }));
    if (on_result) on_result(results.back());
  }
  return results;
}

}  // namespace stseq
