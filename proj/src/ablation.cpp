#include "stseq/ablation.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <thread>

namespace stseq {

namespace fs = std::filesystem;

namespace {

RunConfig with_input(RunConfig c, InputMode mode) {
  c.input_mode = mode;
  return c;
}

RunConfig without_masking(RunConfig c) {
  c.mask.mode = MaskMode::kOff;
  c.mvm = false;
  return c;
}

RunConfig with_mask(RunConfig c, MaskMode mode, double sigma) {
  c.mask.mode = mode;
  c.mask.sigma = sigma;
  c.mask.bounds = MaskRateBounds{};
  c.mvm = true;
  return c;
}

RunConfig with_variant(RunConfig c, GlobalLocalVariant v) {
  c.input_mode = InputMode::kGlobalLocal;
  c.global_local = v;
  return c;
}

}  // namespace

std::vector<AblationCell> ablation_grid(int table, const RunConfig& base) {
  switch (table) {
    case 5: {
      const RunConfig plain = without_masking(base);
      return {{"Mean Pooling", with_input(plain, InputMode::kMeanPool)},
              {"S-T Tokens in LLM", with_input(plain, InputMode::kJointSt)},
              {"+Masking & MVM Loss",
               with_mask(with_input(plain, InputMode::kJointSt),
                         MaskMode::kDynamicNormal, 0.1)}};
    }
    case 7: {
      const RunConfig plain = without_masking(base);
      return {{"Global Only", with_variant(plain, GlobalLocalVariant::kGlobalOnly)},
              {"Local Only", with_variant(plain, GlobalLocalVariant::kLocalOnly)},
              {"Local+Global (simply add)", with_variant(plain, GlobalLocalVariant::kSimpleAdd)},
              {"Local+Global (adapter)", with_variant(plain, GlobalLocalVariant::kAdapter)}};
    }
    case 8: {
      const RunConfig plain = with_input(without_masking(base), InputMode::kJointSt);
      return {{"w/o masking (baseline)", plain},
              {"rho ~ U(0.3,0.7)", with_mask(plain, MaskMode::kDynamicUniform, 0.1)},
              {"rho ~ N(0.5,0.2)", with_mask(plain, MaskMode::kDynamicNormal, 0.2)},
              {"rho ~ N(0.5,0.1)", with_mask(plain, MaskMode::kDynamicNormal, 0.1)}};
    }
    default:
      throw ConfigError("ablation: unknown table " + std::to_string(table) +
                        " (expected 5, 7 or 8)");
  }
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  std::set<std::size_t> frames;
  for (const auto& r : rows)
    for (auto [f, a] : r.summary.accuracy) frames.insert(f);
  os << "label,config_hash,input_mode,global_local,mask_mode,sigma,mvm,positions,seed,"
        "final_l_llm,final_l_mvm";
  for (auto f : frames) os << ",acc_T" << f;
  os << '\n' << std::setprecision(17);
  for (const auto& r : rows) {
    const auto& c = r.config;
    os << '"' << r.label << "\"," << r.summary.config_hash << ','
       << to_string(c.input_mode) << ',' << to_string(c.global_local) << ','
       << to_string(c.mask.mode) << ',' << c.mask.sigma << ','
       << (c.mvm ? "on" : "off") << ','
       << (c.positions == PositionPolicy::kKeep ? "keep" : "renumber") << ','
       << c.seed << ',' << r.summary.final_l_llm << ',' << r.summary.final_l_mvm;
    for (auto f : frames) {
      auto it = r.summary.accuracy.find(f);
      os << ',';
      if (it != r.summary.accuracy.end()) os << it->second;
    }
    os << '\n';
  }
}

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells,
                                      const fs::path& out, std::size_t jobs,
                                      bool force) {
  if (cells.empty()) return {};
  std::vector<AblationRow> rows(cells.size());
  std::set<std::string> hashes;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i].config.validate();
    rows[i].label = cells[i].label;
    rows[i].config = cells[i].config;
    const auto h = cells[i].config.hash();
    if (!hashes.insert(h).second) {
      throw ConfigError("ablation: cells '" + cells[i].label +
                        "' and an earlier cell share config hash " + h);
    }
    if (!force && fs::exists(out / h / "metrics.jsonl")) {
      throw ConfigError("ablation: results for config " + h + " already exist under " +
                        out.string() + " (use force to overwrite)");
    }
  }
  fs::create_directories(out);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        rows[i].summary = run_training(cells[i].config, out / cells[i].config.hash());
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::ofstream csv(out / "summary.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (out / "summary.csv").string());
  write_ablation_csv(csv, rows);
  return rows;
}

}  // namespace stseq
