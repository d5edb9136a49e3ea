// mccl command-line entry point.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

#include "mccl/analysis.hpp"
#include "mccl/config.hpp"
#include "mccl/cpi.hpp"
#include "mccl/data.hpp"
#include "mccl/error.hpp"
#include "mccl/metrics.hpp"
#include "mccl/sweep.hpp"
#include "mccl/trainer.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace mccl;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

data::Dataset load_split(const fs::path& dir, const std::string& split) {
  return data::load_dataset(data::resolve_split(dir, split));
}

bool has_split(const fs::path& dir, const std::string& split) { return fs::exists(dir / split / "manifest"); }

/// Held-out split for evaluation during training: val, else test. Empty
/// splits are skipped.
std::optional<data::Dataset> held_out(const fs::path& dir) {
  if (fs::exists(dir / "manifest")) return std::nullopt;
  for (const char* s : {"val", "test"}) {
    if (!has_split(dir, s)) continue;
    auto split = load_split(dir, s);
    if (!split.samples.empty()) return split;
  }
  return std::nullopt;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

int cmd_gen_data(const fs::path& spec_path, const fs::path& out) {
  const auto spec = load_synthetic_spec(spec_path);
  const auto generated = data::generate_synthetic(spec);
  data::write_dataset(generated.train, out / "train");
  data::write_dataset(generated.val, out / "val");
  data::write_dataset(generated.test, out / "test");
  auto info = open_out(out / "clues");
  for (std::size_t c = 0; c < generated.dictionary.class_clues.size(); ++c) {
    info << "class " << c << ":";
    for (int k : generated.dictionary.class_clues[c]) info << " " << k;
    info << "\n";
  }
  spdlog::info("wrote {} / {} / {} samples to {}", generated.train.samples.size(), generated.val.samples.size(),
               generated.test.samples.size(), out.string());
  return 0;
}

int cmd_init_prototypes(const fs::path& data_dir, int k, const fs::path& out, std::uint64_t seed,
                        const std::string& config_path) {
  RunConfig config = config_path.empty() ? RunConfig::desk_defaults() : RunConfig::load(config_path);
  config.k = k;
  config.seed = seed;
  config.init_bank.clear();
  config.mcc_enabled = true;
  config.validate();
  const auto train = load_split(data_dir, "train");
  model::Model model(config, train.manifest, harness::run_label_embeddings(config, train.manifest), config.seed);
  const auto bank = harness::initialize_bank(config, model, train);
  cpi::save_bank(bank, out);
  spdlog::info("wrote {} prototypes over {} stages to {}", bank.size(), bank.num_stages(), out.string());
  return 0;
}

int cmd_train(const fs::path& config_path, const fs::path& data_dir, const fs::path& out) {
  const auto config = RunConfig::load(config_path);
  const auto train = load_split(data_dir, "train");
  const auto eval = held_out(data_dir);
  fs::create_directories(out);
  config.save(out / "config");

  harness::Trainer trainer(config, train);
  auto metrics_log = open_out(out / "metrics.log");
  auto lr_log = open_out(out / "lr.log");
  trainer.fit(train, eval ? &*eval : nullptr, &metrics_log, &lr_log);
  trainer.save(out / "checkpoint.mccl");
  if (eval) {
    auto report = open_out(out / "eval.txt");
    metrics::write_key_values(report, trainer.evaluate(*eval, config.threshold));
  }
  spdlog::info("checkpoint written to {}", (out / "checkpoint.mccl").string());
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data_dir, std::optional<double> threshold, bool table) {
  auto trainer = harness::Trainer::load(ckpt);
  const auto dataset = load_split(data_dir, "test");
  const double t = threshold.value_or(trainer.config().threshold);
  const auto report = trainer.evaluate(dataset, t);
  if (table)
    metrics::write_table(std::cout, report, dataset.manifest.label_names);
  else
    metrics::write_key_values(std::cout, report);
  return 0;
}

int cmd_analyze(const fs::path& ckpt, const fs::path& data_dir, const fs::path& out) {
  auto trainer = harness::Trainer::load(ckpt);
  const auto dataset = load_split(data_dir, "train");
  analysis::PrototypeAnalysis result;
  {
    harness::Trainer::EmaScope ema(trainer);
    result = analysis::analyze_prototypes(trainer.model(), trainer.bank(), dataset, trainer.config().tau);
  }
  analysis::write_analysis(result, dataset.manifest.label_names, out);
  std::ifstream summary(out / "summary.txt");
  std::cout << summary.rdbuf();
  return 0;
}

int cmd_sweep(const fs::path& config_path, const std::string& param, const std::string& values,
              std::string data_dir, const std::string& out) {
  const auto kvs = read_key_values(config_path);
  for (const auto& kv : kvs)
    if (kv.key == "data.dir" && data_dir.empty()) data_dir = kv.value;
  if (data_dir.empty()) throw ConfigError("sweep needs --data or a data.dir entry in the config");
  const auto config = RunConfig::from_key_values(kvs);
  const auto list = harness::parse_sweep_values(values);
  const auto train = load_split(data_dir, "train");
  const auto eval = held_out(data_dir);
  const auto rows = harness::run_sweep(config, param, list, train, eval ? *eval : train);
  harness::write_sweep_table(std::cout, param, rows);
  if (!out.empty()) {
    auto file = open_out(out);
    harness::write_sweep_table(file, param, rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("mccl"));
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

  CLI::App app{"Multi-grained compositional clue learning"};
  app.require_subcommand(1);

  std::string spec, out, data_dir, config_path, ckpt, param, values;
  int k = 0;
  std::uint64_t seed = 0;
  std::optional<double> threshold;
  bool table = false;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic compositional-clue dataset");
  gen->add_option("--spec", spec, "generator spec file")->required();
  gen->add_option("--out", out, "output directory")->required();

  auto* init = app.add_subcommand("init-prototypes", "cluster training patches into a prototype bank");
  init->add_option("--data", data_dir, "dataset directory")->required();
  init->add_option("--k", k, "total prototypes")->required();
  init->add_option("--out", out, "bank file")->required();
  init->add_option("--seed", seed, "clustering seed")->required();
  init->add_option("--config", config_path, "run config for stage selection and backbone");

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "run config")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out, "run directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--threshold", threshold, "decision threshold");
  eval->add_flag("--table", table, "human-readable table");

  auto* analyze = app.add_subcommand("analyze", "prototype-category correlation");
  analyze->add_option("--ckpt", ckpt, "checkpoint file")->required();
  analyze->add_option("--data", data_dir, "dataset directory")->required();
  analyze->add_option("--out", out, "output directory")->required();

  auto* sweep = app.add_subcommand("sweep", "train and evaluate once per value");
  sweep->add_option("--config", config_path, "base run config")->required();
  sweep->add_option("--param", param, "K, lambda, tau, stages or a config key")->required();
  sweep->add_option("--values", values, "comma separated values")->required();
  sweep->add_option("--data", data_dir, "dataset directory (default: data.dir from the config)");
  sweep->add_option("--out", out, "also write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(spec, out);
    if (*init) return cmd_init_prototypes(data_dir, k, out, seed, config_path);
    if (*train) return cmd_train(config_path, data_dir, out);
    if (*eval) return cmd_eval(ckpt, data_dir, threshold, table);
    if (*analyze) return cmd_analyze(ckpt, data_dir, out);
    if (*sweep) return cmd_sweep(config_path, param, values, data_dir, out);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kExitData;
  } catch (const NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
