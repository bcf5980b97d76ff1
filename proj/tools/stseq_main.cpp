#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stseq/stseq.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Status failure carrying the library's message.
struct Failure {
  stseq_status status;
  std::string message;
};

void check(stseq_status s) {
  if (s != STSEQ_OK) throw Failure{s, stseq_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  stseq_string_free(s);
  return out;
}

struct ConfigHandle {
  stseq_config* ptr = nullptr;
  ~ConfigHandle() { stseq_config_free(ptr); }
};

// Flags shared by every command that builds a run configuration.
struct RunFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  std::optional<std::size_t> frames;
  std::optional<std::string> input_mode;
  std::optional<std::string> mask_mode;
  std::optional<std::string> mvm;
  std::optional<std::size_t> steps;
  std::optional<std::string> task;

  void add_to(CLI::App* cmd, bool with_frames = true) {
    cmd->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Run seed");
    cmd->add_option("--precision", precision, "Floating-point width")
        ->check(CLI::IsMember({"f32", "f64"}));
    if (with_frames) cmd->add_option("--frames", frames, "Frames per training video");
    cmd->add_option("--input-mode", input_mode, "Visual input strategy")
        ->check(CLI::IsMember({"meanpool", "joint-st", "global-local"}));
    cmd->add_option("--mask-mode", mask_mode, "Visual-token masking")
        ->check(CLI::IsMember({"off", "static", "dynamic-normal", "dynamic-uniform"}));
    cmd->add_option("--mvm", mvm, "Masked video modeling loss")->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--steps", steps, "Optimizer steps");
    cmd->add_option("--task", task, "Synthetic task")
        ->check(CLI::IsMember({"direction", "reversal", "count", "static-scene"}));
  }

  json patch() const {
    json p = json::object();
    if (seed) p["seed"] = *seed;
    if (precision) p["precision"] = *precision;
    if (frames) p["frames"] = *frames;
    if (input_mode) p["input_mode"] = *input_mode;
    if (mask_mode) p["mask"]["mode"] = *mask_mode;
    if (mvm) p["mvm"]["enabled"] = *mvm == "on";
    if (steps) p["optimizer"]["steps"] = *steps;
    if (task) p["task"] = *task;
    return p;
  }

  void resolve(ConfigHandle& h) const {
    if (config_path.empty()) {
      check(stseq_config_new(&h.ptr));
    } else {
      check(stseq_config_load(config_path.c_str(), &h.ptr));
    }
    check(stseq_config_update(h.ptr, patch().dump().c_str()));
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Failure{STSEQ_ERR_IO, "cannot write '" + path.string() + "'"};
  out << text << '\n';
}

void write_config(const ConfigHandle& h, const fs::path& dir) {
  char* text = nullptr;
  check(stseq_config_to_json(h.ptr, &text));
  fs::create_directories(dir);
  write_text(dir / "config.json", take(text));
}

void print_accuracy(const json& acc) {
  for (const auto& [frames, value] : acc.items())
    std::cout << "  accuracy @" << frames << " frames: " << value.get<double>() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-temporal token sequence training toolkit"};
  app.require_subcommand(1);

  RunFlags train_flags;
  std::string train_out;
  auto* train = app.add_subcommand("train", "Train one run");
  train_flags.add_to(train);
  train->add_option("--out", train_out, "Output directory")->required();

  std::string ckpt_path, eval_out;
  std::vector<std::size_t> eval_frames;
  std::size_t eval_samples = 256;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint.bin from a run")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--frames", eval_frames, "Inference frame counts")->delimiter(',');
  eval->add_option("--samples", eval_samples, "Held-out tasks per frame count");
  eval->add_option("--out", eval_out, "Directory for eval.json and the resolved config");

  RunFlags ablate_flags;
  int table = 0;
  std::string ablate_out;
  std::size_t jobs = 1;
  bool force = false;
  auto* ablate = app.add_subcommand("ablate", "Run an ablation table");
  ablate_flags.add_to(ablate);
  ablate->add_option("--table", table, "Ablation grid: 5, 7 or 8")
      ->required()
      ->check(CLI::IsMember({5, 7, 8}));
  ablate->add_option("--out", ablate_out, "Output directory")->required();
  ablate->add_option("--jobs", jobs, "Cells trained concurrently")->check(CLI::PositiveNumber);
  ablate->add_flag("--force", force, "Overwrite existing cell results");

  std::uint64_t gc_seed = 7;
  bool gc_global_local = false;
  std::string gc_out;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gradcheck->add_option("--seed", gc_seed, "Seed");
  gradcheck->add_flag("--global-local", gc_global_local, "Check the global-local input path");
  gradcheck->add_option("--out", gc_out, "Directory for gradcheck.json");

  RunFlags data_flags;
  std::string data_out, split = "any";
  std::size_t count = 100;
  auto* gen = app.add_subcommand("gen-data", "Dump synthetic tasks as JSON lines");
  data_flags.add_to(gen);
  gen->add_option("--out", data_out, "Output directory")->required();
  gen->add_option("--n", count, "Number of tasks");
  gen->add_option("--split", split, "Split")->check(CLI::IsMember({"any", "train", "test"}));

  std::uint64_t verify_seed = 0;
  std::string verify_out;
  auto* verify = app.add_subcommand("verify", "Run every invariant check");
  verify->add_option("--seed", verify_seed, "Seed");
  verify->add_option("--out", verify_out, "Directory for verify.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*train) {
      ConfigHandle h;
      train_flags.resolve(h);
      char* summary = nullptr;
      check(stseq_train(h.ptr, train_out.c_str(), &summary));
      const auto s = json::parse(take(summary));
      std::cout << "run " << s["config_hash"].get<std::string>() << ": " << s["steps"]
                << " steps, final l_llm " << s["final_l_llm"] << ", l_mvm " << s["final_l_mvm"]
                << '\n';
      print_accuracy(s["accuracy"]);
      std::cout << "outputs in " << train_out << '\n';
    } else if (*eval) {
      stseq_model* model = nullptr;
      check(stseq_model_load(ckpt_path.c_str(), &model));
      std::unique_ptr<stseq_model, void (*)(stseq_model*)> guard(model, stseq_model_free);
      char* cfg = nullptr;
      check(stseq_model_config(model, &cfg));
      const std::string config_text = take(cfg);
      if (eval_frames.empty()) {
        eval_frames = json::parse(config_text)["eval_frames"].get<std::vector<std::size_t>>();
      }
      std::vector<double> acc(eval_frames.size());
      check(stseq_model_evaluate(model, eval_frames.data(), eval_frames.size(), eval_samples,
                                 acc.data()));
      json result{{"checkpoint", ckpt_path}, {"samples", eval_samples}, {"accuracy", json::object()}};
      for (std::size_t i = 0; i < acc.size(); ++i)
        result["accuracy"][std::to_string(eval_frames[i])] = acc[i];
      print_accuracy(result["accuracy"]);
      if (!eval_out.empty()) {
        fs::create_directories(eval_out);
        write_text(fs::path(eval_out) / "config.json", config_text);
        write_text(fs::path(eval_out) / "eval.json", result.dump(2));
      }
    } else if (*ablate) {
      ConfigHandle h;
      ablate_flags.resolve(h);
      write_config(h, ablate_out);
      char* summary = nullptr;
      check(stseq_ablate(h.ptr, table, ablate_out.c_str(), jobs, force ? 1 : 0, &summary));
      for (const auto& row : json::parse(take(summary))) {
        std::cout << row["label"].get<std::string>() << " [" << row["config_hash"].get<std::string>()
                  << "]\n";
        print_accuracy(row["accuracy"]);
      }
      std::cout << "summary in " << (fs::path(ablate_out) / "summary.csv").string() << '\n';
    } else if (*gradcheck) {
      char* report = nullptr;
      const auto status = stseq_gradcheck(gc_seed, gc_global_local ? 1 : 0, &report);
      if (status != STSEQ_OK && status != STSEQ_ERR_CHECK_FAILED) check(status);
      const auto r = json::parse(take(report));
      std::printf("max relative error %.3e over %zu parameters (tolerance %.0e): %s\n",
                  r["max_rel_error"].get<double>(), r["entries"].size(),
                  r["tolerance"].get<double>(), r["passed"].get<bool>() ? "PASS" : "FAIL");
      if (!gc_out.empty()) {
        fs::create_directories(gc_out);
        write_text(fs::path(gc_out) / "gradcheck.json", r.dump(2));
      }
      if (status != STSEQ_OK) return 1;
    } else if (*gen) {
      ConfigHandle h;
      data_flags.resolve(h);
      write_config(h, data_out);
      const auto path = (fs::path(data_out) / "data.jsonl").string();
      check(stseq_gen_data(h.ptr, count, split.c_str(), path.c_str()));
      std::cout << "wrote " << count << " tasks to " << path << '\n';
    } else if (*verify) {
      char* report = nullptr;
      const auto status = stseq_verify(verify_seed, &report);
      if (status != STSEQ_OK && status != STSEQ_ERR_CHECK_FAILED) check(status);
      const auto r = json::parse(take(report));
      for (const auto& c : r) {
        std::printf("%-30s %s  %s (%.2fs)\n", c["name"].get<std::string>().c_str(),
                    c["passed"].get<bool>() ? "PASS" : "FAIL",
                    c["detail"].get<std::string>().c_str(), c["seconds"].get<double>());
      }
      if (!verify_out.empty()) {
        fs::create_directories(verify_out);
        write_text(fs::path(verify_out) / "verify.json", r.dump(2));
      }
      if (status != STSEQ_OK) return 1;
    }
  } catch (const Failure& f) {
    std::cerr << "stseq: " << stseq_status_name(f.status) << ": " << f.message << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "stseq: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
