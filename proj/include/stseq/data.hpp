#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "stseq/random.hpp"
#include "stseq/tokens.hpp"

namespace stseq {

// Fixed task vocabulary. Ids 0, 1, 2 are START, END and PAD.
class Vocab {
 public:
  static const Vocab& standard();

  std::size_t size() const { return words_.size(); }
  int id(std::string_view word) const;  // IndexError if unknown
  const std::string& word(int id) const;

 private:
  Vocab();
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

inline constexpr int kPadId = 2;

enum class TaskKind { kDirection, kReversal, kCount, kStaticScene };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

// The closed set of answer words a task kind can produce, as vocab ids.
std::vector<int> answer_candidates(TaskKind kind);

// Train/test membership is decided by a hash of the generating state, so the
// two splits never share a video.
enum class Split { kAny, kTrain, kTest };

std::string to_string(Split split);
Split parse_split(const std::string& name);
Split split_of(std::uint64_t state_hash);

struct Task {
  TaskKind kind = TaskKind::kReversal;
  SyntheticVideo video;
  std::vector<int> prompt_ids;
  std::vector<int> answer_ids;
  std::uint64_t seed = 0;        // per-item generator seed
  std::uint64_t state_hash = 0;  // identity of the generating state

  std::vector<int> text_ids() const;
  // Sequence positions of the answer tokens under the START-visual-text-END
  // layout with `visual_count` visual tokens.
  std::vector<std::size_t> answer_span(std::size_t visual_count) const;
};

enum class Direction { kLeft, kRight, kUp, kDown };

// Square of side 2 starting at (x, y) and moving one pixel per frame, wrapping
// at the frame border.
SyntheticVideo make_direction_video(std::size_t frames, std::size_t grid,
                                    std::size_t x, std::size_t y, Direction dir,
                                    double intensity);

// Square of side 2 travelling `distance` pixels towards +axis over the clip,
// sampled at `frames` evenly spaced instants. Reversing the returned frames
// gives the backward clip.
SyntheticVideo make_trajectory_video(std::size_t frames, std::size_t grid,
                                     bool vertical, std::size_t start,
                                     std::size_t distance, std::size_t cross,
                                     double intensity);

SyntheticVideo reverse_frames(const SyntheticVideo& video);

Task gen_direction(Rng& rng, std::size_t frames, std::size_t grid,
                   Split split = Split::kAny);
Task gen_reversal(Rng& rng, std::size_t frames, std::size_t grid,
                  Split split = Split::kAny);
Task gen_count(Rng& rng, std::size_t frames, std::size_t grid,
               Split split = Split::kAny);
Task gen_static_scene(Rng& rng, std::size_t frames, std::size_t grid,
                      Split split = Split::kAny);

// Each item is generated from its own seed drawn from `rng`.
std::vector<Task> gen_batch(TaskKind kind, std::size_t batch_size,
                            std::size_t frames, std::size_t grid, Rng& rng,
                            Split split = Split::kAny);

nlohmann::json task_to_json(const Task& task);
void write_jsonl(std::ostream& os, const std::vector<Task>& tasks);

}  // namespace stseq
