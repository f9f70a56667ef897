#include "daclora/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "daclora/checkpoint.hpp"
#include "daclora/util.hpp"

namespace dac {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Timer for the manifests; durations never land in summary tables so
// reruns stay byte-identical.
struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

void ensure_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

std::string series_header() {
  return "t,loss_total,loss_ce,loss_sim,mean_iters_used,mean_fosc_at_halt,c_t\n";
}

std::string series_row(const StepReport& r) {
  std::string row = std::to_string(r.t);
  for (double v : {r.loss_total, r.loss_ce, r.loss_sim, r.mean_iters_used,
                   r.mean_fosc_at_halt, r.c_t}) {
    row += ',';
    row += format_double(v);
  }
  row += '\n';
  return row;
}

void write_manifest(const std::string& path, const std::string& command,
                    const RunConfig& cfg, const json& artifacts, const json& extra,
                    double duration_seconds) {
  json doc;
  doc["command"] = command;
  doc["tool_version"] = kToolVersion;
  doc["seed"] = cfg.seed;
  doc["config"] = config_to_json(cfg);
  doc["artifacts"] = artifacts;
  if (!extra.is_null()) doc["results"] = extra;
  doc["duration_seconds"] = duration_seconds;
  open_out(path) << doc.dump(2) << "\n";
}

json eval_json(const EvalReport& report) {
  json doc;
  doc["clean_accuracy"] = report.clean_accuracy;
  doc["adv_accuracy"] = report.adv_accuracy;
  doc["attack_epsilon"] = report.attack_epsilon;
  doc["per_class_accuracy"] = report.per_class_accuracy;
  return doc;
}

std::string eval_summary_header() {
  return "seed,mode,eval_epsilon,clean_accuracy,adv_accuracy\n";
}

std::string eval_summary_row(std::uint64_t seed, const std::string& mode,
                             const EvalReport& report) {
  return std::to_string(seed) + "," + mode + "," + format_double(report.attack_epsilon) +
         "," + format_double(report.clean_accuracy) + "," +
         format_double(report.adv_accuracy) + "\n";
}

}  // namespace

void cmd_train(const RunConfig& cfg, const std::string& out_dir,
               const std::optional<std::string>& export_dataset_path) {
  Stopwatch watch;
  ensure_dir(out_dir);
  const FewShotDataset dataset = make_dataset(cfg.dataset);
  const ExperimentSettings settings = cfg.experiment_settings();

  DualEncoderModel model = build_pretrained_backbone(dataset, settings);
  Rng lora_rng = split_rng(cfg.seed, "model/lora");
  reinit_lora(model, lora_rng);

  // The series streams to disk as steps finish so an aborted run still
  // leaves the rows computed so far.
  const std::string series_path = out_dir + "/series.csv";
  {
    std::ofstream series = open_out(series_path);
    series << series_header();
    train(model, dataset, settings.train, [&series](const StepReport& r) {
      series << series_row(r);
      series.flush();
    });
  }

  const std::string checkpoint_path = out_dir + "/checkpoint.bin";
  save_checkpoint(model, checkpoint_path);

  const EvalReport report = evaluate(model, dataset.test, settings.eval_attack);
  const std::string summary_path = out_dir + "/summary.csv";
  open_out(summary_path) << eval_summary_header()
                         << eval_summary_row(cfg.seed, to_string(cfg.mode), report);

  json artifacts = {{"series", series_path},
                    {"checkpoint", checkpoint_path},
                    {"summary", summary_path}};
  if (export_dataset_path) {
    save_dataset_snapshot(dataset, *export_dataset_path);
    artifacts["dataset_snapshot"] = *export_dataset_path;
  }
  write_manifest(out_dir + "/manifest.json", "train", cfg, artifacts, eval_json(report),
                 watch.seconds());
}

void cmd_eval(const std::string& checkpoint_path, const RunConfig& cfg,
              const std::optional<double>& epsilon_override, const std::string& out_dir) {
  Stopwatch watch;
  ensure_dir(out_dir);
  const DualEncoderModel model = load_checkpoint(checkpoint_path);
  const FewShotDataset dataset = make_dataset(cfg.dataset);
  if (model.cfg.d_pixels != dataset.cfg.d_pixels())
    throw ConfigError("eval: checkpoint expects " + std::to_string(model.cfg.d_pixels) +
                      " pixels but the dataset provides " +
                      std::to_string(dataset.cfg.d_pixels()));
  if (model.cfg.num_classes != static_cast<std::size_t>(dataset.cfg.num_classes))
    throw ConfigError("eval: checkpoint has " + std::to_string(model.cfg.num_classes) +
                      " classes but the dataset has " +
                      std::to_string(dataset.cfg.num_classes));

  AttackConfig eval_cfg = cfg.eval_attack_cfg();
  if (epsilon_override) {
    eval_cfg.epsilon = *epsilon_override;
    eval_cfg.alpha = *epsilon_override / 4.0;
  }
  const EvalReport report = evaluate(model, dataset.test, eval_cfg);

  const std::string summary_path = out_dir + "/summary.csv";
  open_out(summary_path) << eval_summary_header()
                         << eval_summary_row(cfg.seed, to_string(cfg.mode), report);
  write_manifest(out_dir + "/manifest.json", "eval", cfg,
                 {{"summary", summary_path}, {"checkpoint", checkpoint_path}},
                 eval_json(report), watch.seconds());
}

void cmd_compare(const RunConfig& cfg, const std::string& out_dir) {
  Stopwatch watch;
  ensure_dir(out_dir);
  std::vector<Arm> arms;
  for (const std::string& name : cfg.compare_arms) arms.push_back(arm_from_string(name));

  std::string summary = "seed";
  for (Arm arm : arms) summary += "," + to_string(arm) + "_clean," + to_string(arm) + "_adv";
  summary += "\n";

  json top_artifacts = json::object();
  json arm_manifests = json::array();
  for (std::uint64_t seed : cfg.compare_seeds) {
    RunConfig seeded = cfg;
    seeded.seed = seed;
    seeded.dataset.seed = seed;
    const FewShotDataset dataset = make_dataset(seeded.dataset);
    const auto results = run_experiment(dataset, arms, seeded.experiment_settings());

    summary += std::to_string(seed);
    for (const ExperimentResult& result : results) {
      summary += "," + format_double(result.eval.clean_accuracy);
      summary += "," + format_double(result.eval.adv_accuracy);

      const std::string tag = to_string(result.arm) + "_seed" + std::to_string(seed);
      const std::string series_path = out_dir + "/series_" + tag + ".csv";
      std::ofstream series = open_out(series_path);
      series << series_header();
      for (const StepReport& r : result.series) series << series_row(r);

      // Per-arm manifest owns the series file; the top manifest owns these.
      const std::string arm_manifest_path = out_dir + "/manifest_" + tag + ".json";
      RunConfig arm_cfg = seeded;
      arm_cfg.mode = result.config.mode;
      json results_doc = eval_json(result.eval);
      results_doc["frozen_hash_before"] = result.frozen_hash_before;
      results_doc["frozen_hash_after"] = result.frozen_hash_after;
      write_manifest(arm_manifest_path, "compare/" + to_string(result.arm), arm_cfg,
                     {{"series", series_path}}, results_doc, 0.0);
      arm_manifests.push_back(arm_manifest_path);
    }
    summary += "\n";
  }

  const std::string summary_path = out_dir + "/summary.csv";
  open_out(summary_path) << summary;
  top_artifacts["summary"] = summary_path;
  top_artifacts["arm_manifests"] = arm_manifests;
  write_manifest(out_dir + "/manifest.json", "compare", cfg, top_artifacts, json(),
                 watch.seconds());
}

void cmd_ablate(const RunConfig& cfg, const std::string& out_dir) {
  Stopwatch watch;
  ensure_dir(out_dir);
  const auto cells =
      ablation_sweep(cfg.dataset, cfg.experiment_settings(), cfg.ablate_shots,
                     cfg.ablate_train_epsilons, cfg.ablate_eval_epsilons);

  std::string matrix = "shots,train_epsilon,eval_epsilon,clean_accuracy,adv_accuracy\n";
  for (const AblationCell& cell : cells)
    for (std::size_t i = 0; i < cell.eval_epsilons.size(); ++i)
      matrix += std::to_string(cell.shots) + "," + format_double(cell.train_epsilon) + "," +
                format_double(cell.eval_epsilons[i]) + "," +
                format_double(cell.clean_accuracy) + "," +
                format_double(cell.adv_accuracies[i]) + "\n";

  const std::string matrix_path = out_dir + "/matrix.csv";
  open_out(matrix_path) << matrix;
  write_manifest(out_dir + "/manifest.json", "ablate", cfg, {{"matrix", matrix_path}},
                 json(), watch.seconds());
}

}  // namespace dac
