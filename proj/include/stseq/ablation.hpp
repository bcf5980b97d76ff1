#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "stseq/trainer.hpp"

namespace stseq {

struct AblationCell {
  std::string label;
  RunConfig config;
};

// Rows of the input-strategy (5), global/local (7) and masking-distribution
// (8) tables, each derived from `base` by changing only that table's axes.
std::vector<AblationCell> ablation_grid(int table, const RunConfig& base);

struct AblationRow {
  std::string label;
  RunConfig config;
  TrainSummary summary;
};

// Trains every cell into `out/<config hash>/` and writes `out/summary.csv`.
// Cells run on up to `jobs` threads. ConfigError if two cells share a hash or
// a cell directory already holds results and `force` is false.
std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells,
                                      const std::filesystem::path& out,
                                      std::size_t jobs = 1, bool force = false);

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace stseq
