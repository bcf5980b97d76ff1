#include <gtest/gtest.h>

#include <cmath>

#include "model_fixture.hpp"
#include "stseq/gradcheck.hpp"

namespace stseq {
namespace {

using testing::random_tensor;
using testing::SmallSetup;
using testing::small_model;
using testing::TensorD;

TEST(ModelConfigTest, Validation) {
  EXPECT_NO_THROW(ModelConfig{}.validate());
  ModelConfig c = small_model();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_model();
  c.dim = 6;
  c.heads = 2;  // head dim 3 is odd
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_model();
  c.layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelInitTest, ShapesAndNorms) {
  Rng rng(1);
  auto p = init_transformer<double>(small_model(), rng);
  EXPECT_EQ(p.layers.size(), 2u);
  EXPECT_EQ(p.embedding.value.shape, (Shape{12, 8}));
  EXPECT_EQ(p.layers[0].w1.value.shape, (Shape{8, 32}));
  for (double g : p.final_norm.value.data) EXPECT_EQ(g, 1.0);
  std::size_t count = 0;
  p.visit([&](const std::string&, Param<double>& x) {
    ++count;
    EXPECT_EQ(x.grad.shape, x.value.shape);
  });
  EXPECT_EQ(count, 1 + 2 * 10 + 1u);
}

TEST(ForwardTest, OutputShapes) {
  SmallSetup s(2, {4, 5});
  const auto out = forward(s.seq, s.params, {ForwardMode::kTrain, true});
  EXPECT_EQ(out.hidden.shape(), (Shape{10, 8}));
  EXPECT_EQ(out.logits.shape(), (Shape{10, 12}));
  ASSERT_EQ(out.attention_scores.size(), 4u);
  EXPECT_EQ(out.attention_scores[0].shape, (Shape{10, 10}));
  EXPECT_TRUE(out.hidden.value().all_finite());
}

TEST(ForwardTest, ReferenceModeSameValuesNoGradient) {
  SmallSetup s(3, {4, 5, 6});
  const auto live = forward(s.seq, s.params);
  const auto ref = forward(s.seq, s.params, {ForwardMode::kReference});
  EXPECT_TRUE(live.hidden.requires_grad());
  EXPECT_FALSE(ref.hidden.requires_grad());
  EXPECT_FALSE(ref.logits.requires_grad());
  const auto a = live.hidden.value().data;
  EXPECT_EQ(a, ref.hidden.value().data);
  const auto b = live.logits.value().data;
  EXPECT_EQ(b, ref.logits.value().data);
}

TEST(ForwardTest, CausalPerturbation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SmallSetup s(seed, {4, 5}, 2, 3, false);
    const auto base = forward(s.seq, s.params).logits.value();
    const std::size_t len = s.seq.length();
    for (std::size_t p = 0; p < len; ++p) {
      auto moved = s.seq;
      TensorD e = s.seq.embeddings.value();
      for (std::size_t d = 0; d < 8; ++d) e.at(p, d) += 0.5 + double(d);
      moved.embeddings = s.tape.constant(e);
      const auto out = forward(moved, s.params).logits.value();
      for (std::size_t r = 0; r < len; ++r) {
        bool same = true;
        for (std::size_t c = 0; c < 12; ++c) same = same && out.at(r, c) == base.at(r, c);
        if (r < p) EXPECT_TRUE(same) << "row " << r << " saw position " << p;
        if (r == p) EXPECT_FALSE(same);
      }
    }
  }
}

TEST(ForwardTest, UniformPositionOffsetKeepsScores) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SmallSetup s(seed, {4, 5, 6}, 3, 2, false);
    const ForwardOptions capture{ForwardMode::kTrain, true};
    const auto base = forward(s.seq, s.params, capture).attention_scores;
    for (std::int64_t offset : {1, 13, 500}) {
      auto moved = s.seq;
      for (auto& id : moved.position_ids) id += offset;
      const auto scores = forward(moved, s.params, capture).attention_scores;
      for (std::size_t k = 0; k < base.size(); ++k)
        for (std::size_t i = 0; i < base[k].size(); ++i)
          EXPECT_NEAR(scores[k][i], base[k][i], 1e-12);
    }
  }
}

TEST(ForwardTest, SingleTokenAttentionIgnoresQueryAndKey) {
  Rng rng(4);
  auto params = init_transformer<double>(small_model(), rng);
  Tape<double> tape(false);
  TokenSequence<double> seq;
  seq.embeddings = tape.constant(random_tensor({1, 8}, rng));
  seq.position_ids = {0};
  seq.origins = {OriginTag::start()};
  const auto before = forward(seq, params).hidden.value();
  for (auto& layer : params.layers) {
    for (auto& v : layer.wq.value.data) v *= -3.0;
    for (auto& v : layer.wk.value.data) v += 0.25;
  }
  const auto after = forward(seq, params).hidden.value();
  EXPECT_EQ(before.data, after.data);
}

TEST(ForwardTest, RejectsMismatchedInput) {
  SmallSetup s(5, {4});
  auto bad = s.seq;
  bad.position_ids.pop_back();
  EXPECT_THROW(forward(bad, s.params), ContractError);
  Rng rng(6);
  ModelConfig wide = small_model();
  wide.dim = 16;
  auto other = init_transformer<double>(wide, rng);
  EXPECT_THROW(forward(s.seq, other), ConfigError);
}

TEST(DecoderLossTest, UniformLogitsGiveLogVocab) {
  SmallSetup s(7, {4, 5, 6});
  for (auto& v : s.params.embedding.value.data) v = 0.0;
  auto zero_seq = s.seq;
  zero_seq.embeddings = s.tape.constant(TensorD(s.seq.embeddings.shape()));
  const auto out = forward(zero_seq, s.params);
  EXPECT_NEAR(decoder_loss(out, zero_seq, 1).value()[0], std::log(12.0), 1e-12);
}

TEST(DecoderLossTest, ScoresOnlyAnswerTokens) {
  SmallSetup s(8, {4, 5, 6});
  const auto out = forward(s.seq, s.params);
  // START + 6 visual rows; text at rows 7, 8, 9. Answer = ids 5, 6.
  const auto& logits = out.logits.value();
  double expected = 0.0;
  for (auto [row, target] : {std::pair<std::size_t, int>{7, 5}, {8, 6}}) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < 12; ++c) mx = std::max(mx, logits.at(row, c));
    double z = 0.0;
    for (std::size_t c = 0; c < 12; ++c) z += std::exp(logits.at(row, c) - mx);
    expected += -(logits.at(row, std::size_t(target)) - mx - std::log(z));
  }
  EXPECT_NEAR(decoder_loss(out, s.seq, 1).value()[0], expected / 2.0, 1e-12);
  EXPECT_THROW(decoder_loss(out, s.seq, 3), ContractError);
}

TEST(DecoderLossTest, PerfectPredictionGivesZero) {
  SmallSetup s(9, {4, 5});
  auto out = forward(s.seq, s.params);
  TensorD forced(out.logits.shape());
  for (std::size_t r = 0; r < forced.rows(); ++r) forced.at(r, 5) = 1e3;
  out.logits = s.tape.constant(forced);
  EXPECT_NEAR(decoder_loss(out, s.seq, 1).value()[0], 0.0, 1e-9);
}

TEST(GradcheckTest, FullModelSeveralSeeds) {
  for (std::uint64_t seed : {1u, 7u, 19u, 123u}) {
    GradcheckOptions o;
    o.seed = seed;
    const auto r = gradcheck_model(o);
    EXPECT_EQ(r.entries.size(), 50u);
    EXPECT_LE(r.sequence_length, 12u);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
    EXPECT_TRUE(r.passed);
  }
}

TEST(GradcheckTest, RelativeErrorFloor) {
  EXPECT_EQ(relative_error(1.0, 1.0, 1e-7), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0, 1e-7), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 0.0, 1e-7), 1e-5);
}

}  // namespace
}  // namespace stseq
