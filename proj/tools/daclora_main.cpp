#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "daclora/cli.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args, const std::string& default_out) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--set", args.overrides, "dotted key=value override, repeatable");
  cmd->add_option("--seed", args.seed, "root seed override")
      ->each([&args](const std::string&) { args.seed_set = true; });
  args.out_dir = default_out;
  cmd->add_option("--out-dir", args.out_dir, "artifact directory");
}

dac::RunConfig resolve(const CommonArgs& args) {
  std::optional<std::string> path;
  if (!args.config_path.empty()) path = args.config_path;
  std::optional<std::uint64_t> seed;
  if (args.seed_set) seed = args.seed;
  return dac::load_config(path, args.overrides, seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoRA fine-tuning with a FOSC-gated adversarial curriculum"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, compare_args, ablate_args;
  std::string export_dataset;
  std::string checkpoint_path;
  double eval_epsilon = -1.0;
  bool eval_epsilon_set = false;

  CLI::App* train_cmd = app.add_subcommand("train", "fine-tune one arm and save artifacts");
  add_common(train_cmd, train_args, "runs/train");
  train_cmd->add_option("--export-dataset", export_dataset,
                        "also write the generated dataset snapshot to this path");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a saved checkpoint");
  add_common(eval_cmd, eval_args, "runs/eval");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint to load")
      ->required();
  eval_cmd->add_option("--eps", eval_epsilon, "evaluation attack budget override")
      ->each([&eval_epsilon_set](const std::string&) { eval_epsilon_set = true; });

  CLI::App* compare_cmd =
      app.add_subcommand("compare", "train all arms across seeds and tabulate");
  add_common(compare_cmd, compare_args, "runs/compare");

  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "sweep shots and training budgets for the dac arm");
  add_common(ablate_cmd, ablate_args, "runs/ablate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      std::optional<std::string> snapshot;
      if (!export_dataset.empty()) snapshot = export_dataset;
      dac::cmd_train(resolve(train_args), train_args.out_dir, snapshot);
    } else if (eval_cmd->parsed()) {
      std::optional<double> eps;
      if (eval_epsilon_set) eps = eval_epsilon;
      dac::cmd_eval(checkpoint_path, resolve(eval_args), eps, eval_args.out_dir);
    } else if (compare_cmd->parsed()) {
      dac::cmd_compare(resolve(compare_args), compare_args.out_dir);
    } else if (ablate_cmd->parsed()) {
      dac::cmd_ablate(resolve(ablate_args), ablate_args.out_dir);
    }
  } catch (const dac::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
