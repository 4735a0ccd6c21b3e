// Command-line entry point: dataset generation, training, evaluation,
// ablation, threshold sweeps and attention dumps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lctr/checkpoint.hpp"
#include "lctr/config.hpp"
#include "lctr/dataset.hpp"
#include "lctr/evaluation.hpp"
#include "lctr/localization.hpp"
#include "lctr/model.hpp"
#include "lctr/rpam.hpp"
#include "lctr/train.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "Run configuration (key = value file)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", opts.seed, "Seed; falls back to LCTR_SEED, then the config file");
}

lctr::RunConfig resolve_config(const CommonOptions& opts) {
  lctr::RunConfig config;
  if (!opts.config_path.empty()) config = lctr::RunConfig::load(opts.config_path);
  if (opts.seed) {
    config.seed = *opts.seed;
  } else if (const char* env = std::getenv("LCTR_SEED")) {
    config.set("seed", env);
  }
  config.finalize();
  return config;
}

std::vector<lctr::data::Sample> load_split(const lctr::RunConfig& config,
                                           const std::string& data_dir, bool train_split) {
  if (!data_dir.empty()) return lctr::data::read_split(fs::path(data_dir) / (train_split ? "train" : "test"));
  lctr::data::Dataset ds = lctr::data::generate_dataset(
      train_split ? config.n_train : 1, train_split ? 1 : config.n_test,
      config.backbone.image_size, config.backbone.num_classes, config.seed);
  return train_split ? std::move(ds.train) : std::move(ds.test);
}

lctr::LctrModel load_model(const lctr::RunConfig& config, const std::string& checkpoint) {
  lctr::LctrModel model(config);
  lctr::load_checkpoint(checkpoint, model.parameters());
  return model;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LCTR weakly supervised localization toolkit"};
  app.require_subcommand(1);

  CommonOptions gen_opts, train_opts, eval_opts, ablate_opts, sweep_opts, dump_opts;
  std::string out_dir = "out";
  std::string data_dir;
  std::string checkpoint;
  std::optional<double> threshold;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t image_index = 0;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset to disk");
  add_common(gen, gen_opts);
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--data", data_dir, "Dataset directory from gen-data");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--out", out_dir, "Output directory")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory from gen-data");
  eval_cmd->add_option("--threshold", threshold, "Box threshold ratio override");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the four RPAM/CDM configurations");
  add_common(ablate, ablate_opts);
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate->add_option("--seeds", seeds, "Seeds to run")->delimiter(',');

  auto* sweep = app.add_subcommand("sweep-threshold", "Gt-known against the box threshold ratio");
  add_common(sweep, sweep_opts);
  sweep->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  sweep->add_option("--out", out_dir, "Output directory")->required();
  sweep->add_option("--data", data_dir, "Dataset directory from gen-data");

  auto* dump = app.add_subcommand("dump-attn", "Write per-block attention maps for one test image");
  add_common(dump, dump_opts);
  dump->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  dump->add_option("--out", out_dir, "Output directory")->required();
  dump->add_option("--data", data_dir, "Dataset directory from gen-data");
  dump->add_option("--index", image_index, "Test image index");

  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path out(out_dir);
    if (gen->parsed()) {
      const lctr::RunConfig config = resolve_config(gen_opts);
      lctr::data::Dataset ds =
          lctr::data::generate_dataset(config.n_train, config.n_test, config.backbone.image_size,
                                       config.backbone.num_classes, config.seed);
      lctr::data::write_split(out / "train", ds.train);
      lctr::data::write_split(out / "test", ds.test);
      std::cout << "wrote " << ds.train.size() << " train and " << ds.test.size()
                << " test samples to " << out << "\n";
    } else if (train_cmd->parsed()) {
      const lctr::RunConfig config = resolve_config(train_opts);
      const auto samples = load_split(config, data_dir, true);
      fs::create_directories(out);
      lctr::LctrModel model(config);
      std::ofstream log(out / "train_log.csv", std::ios::binary);
      log << "epoch,loss,train_accuracy\n";
      lctr::train(model, config, samples, [&](const lctr::EpochLog& e) {
        std::cout << "epoch " << e.epoch << " loss " << e.mean_loss << " acc "
                  << e.train_accuracy << std::endl;
        log << e.epoch << ',' << e.mean_loss << ',' << e.train_accuracy << '\n';
      });
      lctr::save_checkpoint(out / "model.ckpt", model.parameters());
      write_text(out / "run.cfg", config.to_text());
      std::cout << "checkpoint " << (out / "model.ckpt") << " checksum "
                << lctr::parameter_checksum(model.parameters()) << "\n";
    } else if (eval_cmd->parsed()) {
      lctr::RunConfig config = resolve_config(eval_opts);
      if (threshold) {
        config.threshold_ratio = *threshold;
        config.finalize();
      }
      const lctr::LctrModel model = load_model(config, checkpoint);
      const auto samples = load_split(config, data_dir, false);
      const lctr::EvalResult result = lctr::run_eval(model, samples, config, out);
      std::cout << lctr::loc::format_metrics_text(result.report);
    } else if (ablate->parsed()) {
      const lctr::RunConfig config = resolve_config(ablate_opts);
      fs::create_directories(out);
      const auto rows = lctr::run_ablation(config, seeds, [](const std::string& line) {
        std::cerr << line << std::endl;
      });
      const std::string table = lctr::format_ablation_csv(rows);
      write_text(out / "ablation.csv", table);
      std::cout << table;
    } else if (sweep->parsed()) {
      const lctr::RunConfig config = resolve_config(sweep_opts);
      const lctr::LctrModel model = load_model(config, checkpoint);
      const auto samples = load_split(config, data_dir, false);
      const auto records = lctr::infer(model, samples, config.rpam_enabled);
      const std::string csv = lctr::format_sweep_csv(
          lctr::sweep_thresholds(records, samples, lctr::default_sweep_ratios()));
      fs::create_directories(out);
      write_text(out / "threshold_sweep.csv", csv);
      std::cout << csv;
    } else if (dump->parsed()) {
      const lctr::RunConfig config = resolve_config(dump_opts);
      const lctr::LctrModel model = load_model(config, checkpoint);
      const auto samples = load_split(config, data_dir, false);
      if (image_index >= samples.size()) {
        throw lctr::UsageError("--index " + std::to_string(image_index) + " out of range");
      }
      lctr::NoGradGuard no_grad;
      const auto output = model.forward(samples[image_index].image);
      const std::size_t grid = config.backbone.grid_size();
      lctr::rpam::dump_debug_csv(output.backbone.attention, grid, grid, out);
      std::cout << "wrote attention maps for image " << image_index << " to " << out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
