#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "stseq/data.hpp"
#include "stseq/globallocal.hpp"

namespace stseq {
namespace {

std::vector<std::vector<double>> frames_of(const SyntheticVideo& v) {
  std::vector<std::vector<double>> out;
  for (std::size_t t = 0; t < v.frames; ++t) {
    auto f = v.frame(t);
    out.emplace_back(f.begin(), f.end());
  }
  return out;
}

// Top-left corner of the lit pixels of frame t, as (x, y).
std::pair<std::size_t, std::size_t> corner(const SyntheticVideo& v, std::size_t t) {
  for (std::size_t y = 0; y < v.size; ++y) {
    for (std::size_t x = 0; x < v.size; ++x) {
      if (v.at(t, y, x) > 0.0) return {x, y};
    }
  }
  return {v.size, v.size};
}

TEST(VocabTest, ReservedIdsAndBijection) {
  const Vocab& v = Vocab::standard();
  EXPECT_EQ(v.id("<start>"), kStartId);
  EXPECT_EQ(v.id("<end>"), kEndId);
  EXPECT_EQ(v.id("<pad>"), kPadId);
  std::set<std::string> words;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& w = v.word(int(i));
    EXPECT_EQ(v.id(w), int(i));
    words.insert(w);
  }
  EXPECT_EQ(words.size(), v.size());
  EXPECT_LE(v.size(), 32u);
  for (auto w : {"forward", "backward", "left", "right", "up", "down", "order?"}) {
    EXPECT_GT(v.id(w), kPadId);
  }
  EXPECT_THROW(v.id("sideways"), IndexError);
  EXPECT_THROW(v.word(-1), IndexError);
  EXPECT_THROW(v.word(int(v.size())), IndexError);
}

TEST(TaskKindTest, NamesRoundTrip) {
  for (auto k : {TaskKind::kDirection, TaskKind::kReversal, TaskKind::kCount,
                 TaskKind::kStaticScene}) {
    EXPECT_EQ(parse_task_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_task_kind("jump"), ConfigError);
  for (auto s : {Split::kAny, Split::kTrain, Split::kTest}) {
    EXPECT_EQ(parse_split(to_string(s)), s);
  }
  EXPECT_THROW(parse_split("validation"), ConfigError);
}

TEST(DirectionTest, RightwardStepsOnePixel) {
  auto v = make_direction_video(2, 8, 3, 5, Direction::kRight, 1.0);
  auto [x0, y0] = corner(v, 0);
  auto [x1, y1] = corner(v, 1);
  EXPECT_EQ(x0, 3u);
  EXPECT_EQ(y0, 5u);
  EXPECT_EQ(x1, x0 + 1);
  EXPECT_EQ(y1, y0);
}

TEST(DirectionTest, MirroredStartsMatchLeftAndRight) {
  const std::size_t g = 8, frames = 6;
  for (std::size_t x = 0; x < g; ++x) {
    auto right = make_direction_video(frames, g, x, 2, Direction::kRight, 0.75);
    auto left = make_direction_video(frames, g, (2 * g - 2 - x) % g, 2, Direction::kLeft, 0.75);
    for (std::size_t t = 0; t < frames; ++t) {
      double sr = 0.0, sl = 0.0;
      for (std::size_t y = 0; y < g; ++y) {
        for (std::size_t c = 0; c < g; ++c) {
          // Left is the mirror image of right.
          ASSERT_EQ(left.at(t, y, c), right.at(t, y, g - 1 - c));
          sr += right.at(t, y, c);
          sl += left.at(t, y, c);
        }
      }
      ASSERT_EQ(sr, sl);
    }
  }
}

TEST(DirectionTest, LabelsBalanced) {
  Rng rng(1);
  std::map<int, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) counts[gen_direction(rng, 4, 8).answer_ids[0]]++;
  ASSERT_EQ(counts.size(), 4u);
  const double bound = 3.0 * std::sqrt(n * 0.25 * 0.75);
  for (auto [id, c] : counts) EXPECT_NEAR(c, n / 4.0, bound) << Vocab::standard().word(id);
}

TEST(ReversalTest, ClassesShareFramesAndPooledTokens) {
  Rng rng(2);
  PatchLayout layout{8, 2};
  Rng erng(3);
  auto enc = init_frame_encoder<double>(layout, 8, erng);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t frames = 3 + trial % 14;
    auto task = gen_reversal(rng, frames, 8);
    auto rev = reverse_frames(task.video);

    auto a = frames_of(task.video);
    auto b = frames_of(rev);
    ASSERT_NE(a, b) << "palindromic clip";
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    ASSERT_EQ(a, b);

    // Temporal mean of the raw frames, bit for bit.
    const std::size_t n = 64;
    for (std::size_t p = 0; p < n; ++p) {
      double sa = 0.0, sb = 0.0;
      for (std::size_t t = 0; t < frames; ++t) {
        sa += task.video.frame(t)[p];
        sb += rev.frame(t)[p];
      }
      ASSERT_EQ(sa / double(frames), sb / double(frames));
    }

    // And of the encoded token grids.
    Tape<double> tape(false);
    auto ga = encode_frames(tape, task.video, layout, enc);
    auto gb = encode_frames(tape, rev, layout, enc);
    const auto pa = global_pool(ga).value().data;
    const auto pb = global_pool(gb).value().data;
    ASSERT_EQ(pa, pb);
  }
}

TEST(ReversalTest, LabelsBalanced) {
  Rng rng(4);
  const int n = 10000;
  int forward = 0;
  const int fwd = Vocab::standard().id("forward");
  for (int i = 0; i < n; ++i) forward += gen_reversal(rng, 8, 8).answer_ids[0] == fwd;
  EXPECT_NEAR(forward, n / 2.0, 3.0 * std::sqrt(n * 0.25));
}

TEST(ReversalTest, RejectsShortClips) {
  Rng rng(5);
  EXPECT_THROW(gen_reversal(rng, 2, 8), ConfigError);
  EXPECT_THROW(gen_direction(rng, 1, 8), ConfigError);
}

TEST(TaskTest, ValidPixelsIdsAndAnswerSpan) {
  Rng rng(6);
  const Vocab& vocab = Vocab::standard();
  for (auto kind : {TaskKind::kDirection, TaskKind::kReversal, TaskKind::kCount,
                    TaskKind::kStaticScene}) {
    for (const auto& task : gen_batch(kind, 50, 5, 8, rng)) {
      EXPECT_NO_THROW(task.video.validate());
      for (int id : task.text_ids()) {
        ASSERT_GT(id, kPadId);
        ASSERT_LT(std::size_t(id), vocab.size());
      }
      const std::size_t visual = 5 * 4;
      auto span = task.answer_span(visual);
      ASSERT_FALSE(span.empty());
      // START, visual tokens, prompt, then the answer; END follows.
      const std::size_t text_begin = 1 + visual;
      const std::size_t text_end = text_begin + task.text_ids().size();
      for (auto p : span) {
        ASSERT_GE(p, text_begin + task.prompt_ids.size());
        ASSERT_LT(p, text_end);
      }
    }
  }
}

TEST(BatchTest, DeterministicAndEmpty) {
  Rng a(7), b(7);
  auto x = gen_batch(TaskKind::kReversal, 20, 6, 8, a);
  auto y = gen_batch(TaskKind::kReversal, 20, 6, 8, b);
  ASSERT_EQ(x.size(), 20u);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].video.pixels, y[i].video.pixels);
    EXPECT_EQ(x[i].text_ids(), y[i].text_ids());
    EXPECT_EQ(x[i].seed, y[i].seed);
  }
  Rng c(7);
  EXPECT_TRUE(gen_batch(TaskKind::kReversal, 0, 6, 8, c).empty());
}

TEST(BatchTest, SplitsAreDisjoint) {
  Rng a(8), b(9);
  auto train = gen_batch(TaskKind::kReversal, 2000, 6, 8, a, Split::kTrain);
  auto test = gen_batch(TaskKind::kReversal, 2000, 6, 8, b, Split::kTest);
  std::set<std::uint64_t> train_states;
  std::set<std::vector<double>> train_videos;
  for (const auto& t : train) {
    EXPECT_EQ(split_of(t.state_hash), Split::kTrain);
    train_states.insert(t.state_hash);
    train_videos.insert(t.video.pixels);
  }
  for (const auto& t : test) {
    EXPECT_EQ(split_of(t.state_hash), Split::kTest);
    EXPECT_FALSE(train_states.count(t.state_hash));
    EXPECT_FALSE(train_videos.count(t.video.pixels));
    EXPECT_FALSE(train_videos.count(reverse_frames(t.video).pixels));
  }
}

TEST(JsonlTest, OneTaskPerLine) {
  Rng rng(10);
  auto tasks = gen_batch(TaskKind::kReversal, 3, 4, 8, rng);
  std::ostringstream os;
  write_jsonl(os, tasks);
  std::istringstream is(os.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    auto j = nlohmann::json::parse(line);
    const auto& t = tasks[n++];
    EXPECT_EQ(j.at("kind"), "reversal");
    EXPECT_EQ(j.at("seed").get<std::uint64_t>(), t.seed);
    EXPECT_EQ(j.at("prompt_ids").get<std::vector<int>>(), t.prompt_ids);
    EXPECT_EQ(j.at("answer_ids").get<std::vector<int>>(), t.answer_ids);
    const auto& frames = j.at("frames");
    ASSERT_EQ(frames.size(), 4u);
    ASSERT_EQ(frames[0].size(), 8u);
    EXPECT_EQ(frames[2][3][5].get<double>(), t.video.at(2, 3, 5));
  }
  EXPECT_EQ(n, 3u);
}

}  // namespace
}  // namespace stseq
