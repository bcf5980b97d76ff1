#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stseq/ablation.hpp"
#include "stseq/trainer.hpp"

namespace stseq {
namespace {

namespace fs = std::filesystem;

RunConfig tiny(std::uint64_t seed = 0) {
  RunConfig c;
  c.seed = seed;
  c.frames = 4;
  c.eval_frames = {4};
  c.layout = {8, 2};
  c.model.layers = 2;
  c.model.heads = 2;
  c.model.dim = 16;
  c.model.vocab = 32;
  c.optimizer.batch_size = 4;
  c.optimizer.steps = 3;
  c.eval_samples = 16;
  c.precision = Precision::kF64;
  return c;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("stseq_trainer_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

Task one_task(std::uint64_t seed, std::size_t frames = 4) {
  Rng rng(seed);
  return gen_reversal(rng, frames, 8);
}

TEST(TrainerTest, ForwardPassCountFollowsMvm) {
  auto off = tiny();
  Trainer<double> a(off);
  Tape<double> ta;
  Rng r1(1);
  auto sa = a.sample_loss(ta, one_task(3), 0.0, r1);
  EXPECT_EQ(sa.forward_passes, 1u);
  EXPECT_EQ(sa.mvm.value()[0], 0.0);

  auto on = tiny();
  on.mvm = true;
  on.mask.mode = MaskMode::kStatic;
  Trainer<double> b(on);
  Tape<double> tb;
  Rng r2(1);
  auto sb = b.sample_loss(tb, one_task(3), 0.5, r2);
  EXPECT_EQ(sb.forward_passes, 2u);
  EXPECT_GT(sb.mvm.value()[0], 0.0);
}

TEST(TrainerTest, PlainRunIsCausalLmOnFullSequence) {
  Trainer<double> t(tiny());
  const auto task = one_task(4);
  Tape<double> tape;
  Rng rng(1);
  const double via_trainer = t.sample_loss(tape, task, 0.0, rng).total.value()[0];
  auto seq = t.build_sequence(tape, task);
  EXPECT_EQ(seq.visual_count(), 4u * 4u);
  const double direct =
      decoder_loss(forward(seq, t.params().lm), seq, task.prompt_ids.size()).value()[0];
  EXPECT_EQ(via_trainer, direct);
}

TEST(TrainerTest, ZeroRateMvmMatchesPlainRun) {
  auto plain = tiny(5);
  auto mvm = tiny(5);
  mvm.mvm = true;
  mvm.mask.mode = MaskMode::kStatic;
  mvm.mask.rho = 0.0;
  Trainer<double> a(plain);
  Trainer<double> b(mvm);
  Rng r1(9), r2(9);
  auto batch_a = gen_batch(TaskKind::kReversal, 4, 4, 8, r1);
  auto batch_b = gen_batch(TaskKind::kReversal, 4, 4, 8, r2);
  for (int step = 0; step < 3; ++step) {
    auto ra = a.train_step(batch_a);
    auto rb = b.train_step(batch_b);
    EXPECT_EQ(rb.l_mvm, 0.0);
    EXPECT_EQ(ra.l_llm, rb.l_llm);
  }
  std::vector<Tensor<double>> pa, pb;
  a.params().visit([&](const std::string&, Param<double>& p) { pa.push_back(p.value); });
  b.params().visit([&](const std::string&, Param<double>& p) { pb.push_back(p.value); });
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].data, pb[i].data);
}

TEST(TrainerTest, InputModesSetVisualCount) {
  auto c = tiny();
  c.frames = 8;
  c.input_mode = InputMode::kMeanPool;
  Trainer<double> pool(c);
  Tape<double> tape(false);
  const auto task = one_task(6, 8);
  EXPECT_EQ(pool.build_sequence(tape, task).visual_count(), 4u);
  c.input_mode = InputMode::kGlobalLocal;
  c.local_frames = 2;
  Trainer<double> gl(c);
  EXPECT_EQ(gl.build_sequence(tape, task).visual_count(), 2u * 4u);
  c.global_local = GlobalLocalVariant::kGlobalOnly;
  Trainer<double> global(c);
  EXPECT_EQ(global.build_sequence(tape, task).visual_count(), 4u);
}

TEST(TrainerTest, OverfitsOneBatch) {
  auto c = tiny(1);
  c.precision = Precision::kF32;
  c.optimizer.lr = 1e-3;
  Trainer<float> t(c);
  Rng rng(2);
  const auto batch = gen_batch(TaskKind::kReversal, 4, 4, 8, rng);
  MetricsRecord rec;
  for (int s = 0; s < 300; ++s) rec = t.train_step(batch);
  EXPECT_LT(rec.l_llm, 0.05);
}

TEST(TrainerTest, UntrainedIsAtChance) {
  // 3-sigma binomial band around 0.5 for n = 400.
  const double band = 3.0 * std::sqrt(0.25 / 400.0);
  for (std::uint64_t seed : {0, 1, 2}) {
    auto c = tiny(seed);
    c.eval_samples = 400;
    c.precision = Precision::kF32;
    Trainer<float> t(c);
    EXPECT_NEAR(t.evaluate(4), 0.5, band) << "seed " << seed;
  }
}

TEST(TrainerTest, GreedyAnswerIsACandidate) {
  Trainer<double> t(tiny());
  const auto candidates = answer_candidates(TaskKind::kReversal);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto answer = t.greedy_answer(one_task(s));
    ASSERT_EQ(answer.size(), 1u);
    EXPECT_NE(std::find(candidates.begin(), candidates.end(), answer[0]), candidates.end());
  }
}

TEST(TrainerTest, CheckpointRestoresParameters) {
  auto c = tiny(3);
  c.precision = Precision::kF32;
  Trainer<float> a(c);
  Rng rng(4);
  a.train_step(gen_batch(TaskKind::kReversal, 4, 4, 8, rng));
  const auto ckpt = decode_checkpoint(encode_checkpoint(a.checkpoint()));
  auto other = c;
  other.seed = 99;
  Trainer<float> b(other);
  b.load(ckpt);
  std::vector<std::vector<float>> pa, pb;
  a.params().visit([&](const std::string&, Param<float>& p) { pa.push_back(p.value.data); });
  b.params().visit([&](const std::string&, Param<float>& p) { pb.push_back(p.value.data); });
  EXPECT_EQ(pa, pb);

  auto wider = c;
  wider.model.dim = 32;
  Trainer<float> w(wider);
  EXPECT_THROW(w.load(ckpt), IoError);
}

TEST(RunTrainingTest, ReproducibleMetrics) {
  auto c = tiny(7);
  c.mvm = true;
  c.mask.mode = MaskMode::kDynamicNormal;
  c.optimizer.steps = 4;
  c.eval_every = 2;
  const auto a = run_training(c);
  const auto b = run_training(c);
  ASSERT_EQ(a.metrics.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.metrics[i].to_json().dump(), b.metrics[i].to_json().dump());
  }
  EXPECT_EQ(a.metrics[1].accuracy.size(), 1u);
  EXPECT_TRUE(a.metrics[0].accuracy.empty());
  c.seed = 8;
  const auto other = run_training(c);
  EXPECT_NE(a.metrics[0].to_json().dump(), other.metrics[0].to_json().dump());
}

TEST(RunTrainingTest, WritesArtifacts) {
  auto c = tiny(2);
  c.precision = Precision::kF32;
  c.eval_frames = {3, 4};
  const auto dir = scratch("artifacts");
  const auto summary = run_training(c, dir);
  for (auto name : {"config.json", "metrics.jsonl", "timing.jsonl", "summary.csv",
                    "checkpoint.bin"}) {
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  }
  EXPECT_EQ(RunConfig::load((dir / "config.json").string()).hash(), c.hash());
  const auto metrics = lines_of(dir / "metrics.jsonl");
  ASSERT_EQ(metrics.size(), 3u);
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    auto j = nlohmann::json::parse(metrics[i]);
    EXPECT_EQ(j.at("step").get<std::size_t>(), i + 1);
    EXPECT_EQ(j.at("config_hash"), c.hash());
    EXPECT_FALSE(j.contains("wall_clock_s"));
  }
  EXPECT_TRUE(nlohmann::json::parse(lines_of(dir / "timing.jsonl")[0]).contains("wall_clock_s"));
  EXPECT_EQ(lines_of(dir / "summary.csv").size(), 2u);
  // A f32 checkpoint holds the trained values exactly.
  const auto acc = evaluate_checkpoint(dir / "checkpoint.bin", {3, 4}, c.eval_samples);
  EXPECT_EQ(acc, summary.accuracy);
  fs::remove_all(dir);
}

TEST(RunTrainingTest, NonFiniteLossLeavesFailureRecord) {
  auto c = tiny(1);
  c.optimizer.lr = 1e300;
  c.optimizer.steps = 20;
  const auto dir = scratch("failure");
  EXPECT_THROW(run_training(c, dir), NumericError);
  ASSERT_TRUE(fs::exists(dir / "failure.json"));
  std::ifstream in(dir / "failure.json");
  auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("seed"), 1);
  EXPECT_GE(j.at("step").get<std::size_t>(), 1u);
  EXPECT_EQ(RunConfig::from_json(j.at("config")).hash(), c.hash());
  fs::remove_all(dir);
}

TEST(AblationTest, GridRows) {
  const auto base = tiny();
  auto t5 = ablation_grid(5, base);
  ASSERT_EQ(t5.size(), 3u);
  EXPECT_EQ(t5[0].config.input_mode, InputMode::kMeanPool);
  EXPECT_EQ(t5[1].config.input_mode, InputMode::kJointSt);
  EXPECT_FALSE(t5[1].config.mvm);
  EXPECT_TRUE(t5[2].config.mvm);
  EXPECT_EQ(t5[2].config.mask.mode, MaskMode::kDynamicNormal);
  EXPECT_EQ(t5[2].config.mask.sigma, 0.1);

  auto t7 = ablation_grid(7, base);
  ASSERT_EQ(t7.size(), 4u);
  const GlobalLocalVariant v7[] = {GlobalLocalVariant::kGlobalOnly, GlobalLocalVariant::kLocalOnly,
                                   GlobalLocalVariant::kSimpleAdd, GlobalLocalVariant::kAdapter};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(t7[i].config.input_mode, InputMode::kGlobalLocal);
    EXPECT_EQ(t7[i].config.global_local, v7[i]);
  }
  EXPECT_EQ(t7[3].label, "Local+Global (adapter)");

  auto t8 = ablation_grid(8, base);
  ASSERT_EQ(t8.size(), 4u);
  EXPECT_EQ(t8[0].config.mask.mode, MaskMode::kOff);
  EXPECT_EQ(t8[1].config.mask.mode, MaskMode::kDynamicUniform);
  EXPECT_EQ(t8[1].config.mask.bounds.low, 0.3);
  EXPECT_EQ(t8[1].config.mask.bounds.high, 0.7);
  EXPECT_EQ(t8[2].config.mask.sigma, 0.2);
  EXPECT_EQ(t8[3].config.mask.sigma, 0.1);
  EXPECT_EQ(t8[3].label, "rho ~ N(0.5,0.1)");

  for (const auto* grid : {&t5, &t7, &t8}) {
    std::set<std::string> hashes;
    for (const auto& cell : *grid) hashes.insert(cell.config.hash());
    EXPECT_EQ(hashes.size(), grid->size());
  }
  EXPECT_THROW(ablation_grid(6, base), ConfigError);
}

TEST(AblationTest, EmptyGridIsNoOp) {
  const auto dir = scratch("empty");
  EXPECT_TRUE(run_ablation({}, dir).empty());
  EXPECT_FALSE(fs::exists(dir));
}

TEST(AblationTest, DuplicateCellsRefused) {
  const auto dir = scratch("dup");
  std::vector<AblationCell> cells = {{"a", tiny()}, {"b", tiny()}};
  EXPECT_THROW(run_ablation(cells, dir), ConfigError);
  fs::remove_all(dir);
}

TEST(AblationTest, RunsCellsAndRefusesOverwrite) {
  auto base = tiny(4);
  base.optimizer.steps = 2;
  base.frames = 6;
  base.local_frames = 2;
  base.eval_frames = {6};
  const auto cells = ablation_grid(7, base);
  const auto dir = scratch("run");
  const auto rows = run_ablation(cells, dir, 2);
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].label, cells[i].label);
    EXPECT_TRUE(fs::exists(dir / cells[i].config.hash() / "metrics.jsonl"));
  }
  const auto csv = lines_of(dir / "summary.csv");
  ASSERT_EQ(csv.size(), 5u);
  EXPECT_EQ(csv[0].rfind("label,config_hash,", 0), 0u);
  EXPECT_NE(csv[4].find("Local+Global (adapter)"), std::string::npos);

  EXPECT_THROW(run_ablation(cells, dir), ConfigError);
  EXPECT_EQ(run_ablation(cells, dir, 1, /*force=*/true).size(), 4u);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace stseq
