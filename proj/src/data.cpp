#include "stseq/data.hpp"

#include <algorithm>
#include <ostream>
#include <random>

#include "stseq/error.hpp"

namespace stseq {

Vocab::Vocab()
    : words_{"<start>", "<end>",  "<pad>",    "direction?", "left",   "right",
             "up",      "down",   "order?",   "forward",    "backward", "count?",
             "0",       "1",      "2",        "3",          "4",      "5",
             "6",       "7",      "8",        "9",          "scene?", "static",
             "moving"} {
  for (std::size_t i = 0; i < words_.size(); ++i) ids_.emplace(words_[i], int(i));
}

const Vocab& Vocab::standard() {
  static const Vocab vocab;
  return vocab;
}

int Vocab::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  if (it == ids_.end()) throw IndexError("vocab: unknown word '" + std::string(word) + "'");
  return it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || std::size_t(id) >= words_.size()) {
    throw IndexError("vocab: id " + std::to_string(id) + " out of range");
  }
  return words_[std::size_t(id)];
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kDirection: return "direction";
    case TaskKind::kReversal: return "reversal";
    case TaskKind::kCount: return "count";
    case TaskKind::kStaticScene: return "static-scene";
  }
  return "reversal";
}

std::vector<int> answer_candidates(TaskKind kind) {
  std::vector<std::string_view> words;
  switch (kind) {
    case TaskKind::kDirection: words = {"left", "right", "up", "down"}; break;
    case TaskKind::kReversal: words = {"forward", "backward"}; break;
    case TaskKind::kCount: words = {"1", "2", "3"}; break;
    case TaskKind::kStaticScene: words = {"static", "moving"}; break;
  }
  std::vector<int> ids;
  for (auto w : words) ids.push_back(Vocab::standard().id(w));
  return ids;
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "direction") return TaskKind::kDirection;
  if (name == "reversal") return TaskKind::kReversal;
  if (name == "count") return TaskKind::kCount;
  if (name == "static-scene") return TaskKind::kStaticScene;
  throw ConfigError("unknown task kind '" + name + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kAny: return "any";
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
  }
  return "any";
}

Split parse_split(const std::string& name) {
  if (name == "any") return Split::kAny;
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "'");
}

Split split_of(std::uint64_t state_hash) {
  return (mix64(state_hash) & 1ULL) ? Split::kTest : Split::kTrain;
}

std::vector<int> Task::text_ids() const {
  std::vector<int> ids = prompt_ids;
  ids.insert(ids.end(), answer_ids.begin(), answer_ids.end());
  return ids;
}

std::vector<std::size_t> Task::answer_span(std::size_t visual_count) const {
  std::vector<std::size_t> span;
  const std::size_t first = 1 + visual_count + prompt_ids.size();
  for (std::size_t k = 0; k < answer_ids.size(); ++k) span.push_back(first + k);
  return span;
}

namespace {

constexpr double kIntensities[] = {0.5, 0.75, 1.0};
constexpr std::size_t kSquare = 2;

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::uint64_t hash_state(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x53545345515354ULL;
  for (auto p : parts) h = mix64(h ^ p);
  return h;
}

bool accepts(Split split, std::uint64_t state_hash) {
  return split == Split::kAny || split_of(state_hash) == split;
}

void paint(SyntheticVideo& v, std::size_t t, std::size_t y, std::size_t x,
           std::size_t side, double intensity, bool wrap) {
  for (std::size_t dy = 0; dy < side; ++dy) {
    for (std::size_t dx = 0; dx < side; ++dx) {
      const std::size_t yy = wrap ? (y + dy) % v.size : y + dy;
      const std::size_t xx = wrap ? (x + dx) % v.size : x + dx;
      double& px = v.at(t, yy, xx);
      px = std::max(px, intensity);
    }
  }
}

Task make_task(TaskKind kind, SyntheticVideo video, std::string_view question,
               std::string_view answer, std::uint64_t state_hash) {
  const Vocab& vocab = Vocab::standard();
  Task task;
  task.kind = kind;
  task.video = std::move(video);
  task.prompt_ids = {vocab.id(question)};
  task.answer_ids = {vocab.id(answer)};
  task.state_hash = state_hash;
  return task;
}

}  // namespace

SyntheticVideo make_direction_video(std::size_t frames, std::size_t grid,
                                    std::size_t x, std::size_t y, Direction dir,
                                    double intensity) {
  SyntheticVideo v(frames, grid);
  for (std::size_t t = 0; t < frames; ++t) {
    std::size_t px = x % grid, py = y % grid;
    const std::size_t step = t % grid;
    switch (dir) {
      case Direction::kRight: px = (px + step) % grid; break;
      case Direction::kLeft: px = (px + grid - step) % grid; break;
      case Direction::kDown: py = (py + step) % grid; break;
      case Direction::kUp: py = (py + grid - step) % grid; break;
    }
    paint(v, t, py, px, kSquare, intensity, /*wrap=*/true);
  }
  return v;
}

SyntheticVideo make_trajectory_video(std::size_t frames, std::size_t grid,
                                     bool vertical, std::size_t start,
                                     std::size_t distance, std::size_t cross,
                                     double intensity) {
  if (frames < 2) throw ContractError("trajectory: needs at least two frames");
  if (start + distance + kSquare > grid || cross + kSquare > grid) {
    throw ContractError("trajectory: square leaves the frame");
  }
  SyntheticVideo v(frames, grid);
  const std::size_t span = frames - 1;
  for (std::size_t t = 0; t < frames; ++t) {
    // start + round(t * distance / span), ties up.
    const std::size_t along = start + (2 * t * distance + span) / (2 * span);
    if (vertical) {
      paint(v, t, along, cross, kSquare, intensity, false);
    } else {
      paint(v, t, cross, along, kSquare, intensity, false);
    }
  }
  return v;
}

SyntheticVideo reverse_frames(const SyntheticVideo& video) {
  SyntheticVideo out(video.frames, video.size);
  const std::size_t n = video.size * video.size;
  for (std::size_t t = 0; t < video.frames; ++t) {
    std::copy_n(video.pixels.begin() + (video.frames - 1 - t) * n, n,
                out.pixels.begin() + t * n);
  }
  return out;
}

Task gen_direction(Rng& rng, std::size_t frames, std::size_t grid, Split split) {
  if (frames < 2) throw ConfigError("direction task: needs T >= 2");
  if (grid < kSquare + 1) throw ConfigError("direction task: frame too small");
  static constexpr std::string_view kWords[] = {"left", "right", "up", "down"};
  for (;;) {
    const std::size_t x = uniform(rng, 0, grid - 1);
    const std::size_t y = uniform(rng, 0, grid - 1);
    const std::size_t d = uniform(rng, 0, 3);
    const std::size_t level = uniform(rng, 0, 2);
    const auto h = hash_state({0, x, y, d, level});
    if (!accepts(split, h)) continue;
    return make_task(TaskKind::kDirection,
                     make_direction_video(frames, grid, x, y, Direction(d),
                                          kIntensities[level]),
                     "direction?", kWords[d], h);
  }
}

Task gen_reversal(Rng& rng, std::size_t frames, std::size_t grid, Split split) {
  if (frames < 3) throw ConfigError("reversal task: needs T >= 3");
  if (grid < kSquare + 2) throw ConfigError("reversal task: frame too small");
  for (;;) {
    const bool vertical = uniform(rng, 0, 1) == 1;
    const std::size_t distance = uniform(rng, 2, grid - kSquare);
    const std::size_t start = uniform(rng, 0, grid - kSquare - distance);
    const std::size_t cross = uniform(rng, 0, grid - kSquare);
    const std::size_t level = uniform(rng, 0, 2);
    const bool backward = uniform(rng, 0, 1) == 1;
    // The label is not part of the state: a clip and its reversal share a split.
    const auto h = hash_state({1, vertical, distance, start, cross, level});
    if (!accepts(split, h)) continue;
    auto video = make_trajectory_video(frames, grid, vertical, start, distance,
                                       cross, kIntensities[level]);
    if (backward) video = reverse_frames(video);
    return make_task(TaskKind::kReversal, std::move(video), "order?",
                     backward ? "backward" : "forward", h);
  }
}

Task gen_count(Rng& rng, std::size_t frames, std::size_t grid, Split split) {
  if (frames < 2) throw ConfigError("count task: needs T >= 2");
  if (grid < 4) throw ConfigError("count task: frame too small");
  for (;;) {
    const std::size_t moving = uniform(rng, 1, 3);
    const std::size_t still = uniform(rng, 0, 2);
    std::uint64_t h = hash_state({2, moving, still});
    SyntheticVideo v(frames, grid);
    for (std::size_t k = 0; k < moving + still; ++k) {
      const std::size_t x = uniform(rng, 0, grid - 1);
      const std::size_t y = uniform(rng, 0, grid - 1);
      const std::size_t d = uniform(rng, 0, 3);
      h = hash_state({h, x, y, d});
      for (std::size_t t = 0; t < frames; ++t) {
        std::size_t px = x, py = y;
        if (k < moving) {
          const std::size_t step = t % grid;
          switch (Direction(d)) {
            case Direction::kRight: px = (x + step) % grid; break;
            case Direction::kLeft: px = (x + grid - step) % grid; break;
            case Direction::kDown: py = (y + step) % grid; break;
            case Direction::kUp: py = (y + grid - step) % grid; break;
          }
        }
        paint(v, t, py, px, 1, 1.0, true);
      }
    }
    if (!accepts(split, h)) continue;
    return make_task(TaskKind::kCount, std::move(v), "count?",
                     std::to_string(moving), h);
  }
}

Task gen_static_scene(Rng& rng, std::size_t frames, std::size_t grid, Split split) {
  if (frames < 2) throw ConfigError("static-scene task: needs T >= 2");
  if (grid < 4) throw ConfigError("static-scene task: frame too small");
  for (;;) {
    const bool moving = uniform(rng, 0, 1) == 1;
    const std::size_t objects = uniform(rng, 1, 3);
    std::uint64_t h = hash_state({3, moving, objects});
    SyntheticVideo v(frames, grid);
    for (std::size_t k = 0; k < objects; ++k) {
      const std::size_t x = uniform(rng, 0, grid - 1);
      const std::size_t y = uniform(rng, 0, grid - 1);
      const std::size_t d = uniform(rng, 0, 3);
      h = hash_state({h, x, y, d});
      const bool mover = moving && k == 0;
      for (std::size_t t = 0; t < frames; ++t) {
        std::size_t px = x, py = y;
        if (mover) {
          const std::size_t step = t % grid;
          switch (Direction(d)) {
            case Direction::kRight: px = (x + step) % grid; break;
            case Direction::kLeft: px = (x + grid - step) % grid; break;
            case Direction::kDown: py = (y + step) % grid; break;
            case Direction::kUp: py = (y + grid - step) % grid; break;
          }
        }
        paint(v, t, py, px, 1, 1.0, true);
      }
    }
    if (!accepts(split, h)) continue;
    return make_task(TaskKind::kStaticScene, std::move(v), "scene?",
                     moving ? "moving" : "static", h);
  }
}

std::vector<Task> gen_batch(TaskKind kind, std::size_t batch_size,
                            std::size_t frames, std::size_t grid, Rng& rng,
                            Split split) {
  std::vector<Task> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::uint64_t seed = rng();
    Rng item(seed);
    Task task;
    switch (kind) {
      case TaskKind::kDirection: task = gen_direction(item, frames, grid, split); break;
      case TaskKind::kReversal: task = gen_reversal(item, frames, grid, split); break;
      case TaskKind::kCount: task = gen_count(item, frames, grid, split); break;
      case TaskKind::kStaticScene: task = gen_static_scene(item, frames, grid, split); break;
    }
    task.seed = seed;
    batch.push_back(std::move(task));
  }
  return batch;
}

nlohmann::json task_to_json(const Task& task) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t t = 0; t < task.video.frames; ++t) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t y = 0; y < task.video.size; ++y) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t x = 0; x < task.video.size; ++x) row.push_back(task.video.at(t, y, x));
      rows.push_back(std::move(row));
    }
    frames.push_back(std::move(rows));
  }
  return {{"kind", to_string(task.kind)},
          {"frames", std::move(frames)},
          {"prompt_ids", task.prompt_ids},
          {"answer_ids", task.answer_ids},
          {"seed", task.seed},
          {"split", to_string(split_of(task.state_hash))}};
}

void write_jsonl(std::ostream& os, const std::vector<Task>& tasks) {
  for (const auto& t : tasks) os << task_to_json(t).dump() << '\n';
}

}  // namespace stseq
