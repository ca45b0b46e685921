#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crashchat/datasetkit.hpp"
#include "crashchat/experiment.hpp"
#include "crashchat/metrics.hpp"
#include "crashchat/model.hpp"
#include "crashchat/pipeline.hpp"
#include "crashchat/training.hpp"

namespace fs = std::filesystem;
using namespace crashchat;

namespace {

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<TaskId> parse_tasks(const std::string& csv) {
  std::vector<TaskId> tasks;
  for (const auto& item : split_csv(csv)) tasks.push_back(task_from_code(item.at(0)));
  return tasks;
}

SplitSpec parse_split(const std::string& ratios_csv, std::uint64_t seed) {
  SplitSpec spec;
  const auto parts = split_csv(ratios_csv);
  if (parts.size() != 3) throw std::runtime_error("--ratios expects three comma-separated values");
  spec.train = std::stod(parts[0]);
  spec.val = std::stod(parts[1]);
  spec.test = std::stod(parts[2]);
  spec.seed = seed;
  if (auto err = spec.validate()) throw std::runtime_error(*err);
  return spec;
}

BackboneConfig load_model_config(const std::string& path, std::uint64_t seed) {
  BackboneConfig cfg;
  cfg.init_seed = seed;
  if (!path.empty()) {
    const json j = json::parse(read_text_file(path));
    cfg = BackboneConfig::from_json(j);
    if (!j.contains("initSeed")) cfg.init_seed = seed;
  }
  return cfg;
}

int cmd_dataset_ingest(const std::string& manifest, const std::string& out) {
  const IngestResult result = ingest_manifest(manifest);
  save_samples(out, result.samples, result.texts);
  if (!result.errors.empty()) {
    std::vector<json> rows;
    for (const auto& e : result.errors)
      rows.push_back(json{{"line", e.line}, {"videoId", e.video_id}, {"reason", e.reason}});
    write_jsonl_file((fs::path(out) / "ingest_errors.jsonl").string(), rows);
  }
  std::cout << "ingested " << result.samples.size() << " samples (" << result.errors.size()
            << " rejected) -> " << out << "\n";
  return 0;
}

int cmd_dataset_synth(const SyntheticConfig& cfg, const std::string& out) {
  const SyntheticResult result = generate_synthetic(cfg);
  save_samples(out, result.samples, result.texts, hash_hex(cfg.to_json().dump()));
  std::cout << "generated " << result.samples.size() << " synthetic samples -> " << out << "\n";
  return 0;
}

int cmd_dataset_qa(const std::string& data_dir, const std::string& out) {
  const DatasetBundle data = load_dataset(data_dir);
  const auto qa = build_qa_pairs(data.samples, data.texts);
  save_qa(out.empty() ? data_dir : out, qa);
  std::cout << "built " << qa.size() << " QA pairs\n";
  return 0;
}

int cmd_dataset_split(const std::string& data_dir, const SplitSpec& spec,
                      const std::string& out) {
  const DatasetBundle data = load_dataset(data_dir);
  const SplitResult split = stratified_split(data.samples, spec);
  for (const auto& warning : split.warnings) std::cerr << "warning: " << warning << "\n";
  save_split(out.empty() ? data_dir : out, data.samples, split,
             hash_hex(spec.to_json().dump()));
  std::cout << "split " << data.samples.size() << " samples\n";
  return 0;
}

int cmd_train(const std::string& data_dir, TrainConfig cfg, const std::string& model_config,
              const std::string& out) {
  const DatasetBundle data = load_dataset(data_dir);
  const BackboneConfig model_cfg = load_model_config(model_config, cfg.seed);
  const CrashChatModel init_model = CrashChatModel::init(model_cfg);
  const TrainOutcome outcome = train_regime(init_model, cfg, data);
  CheckpointProvenance prov;
  prov.regime = cfg.regime.kind_name();
  prov.group = group_name(cfg.regime.target_group);
  prov.tasks = cfg.regime.task_codes();
  save_checkpoint(outcome.model, prov, out);
  write_train_log_csv(out + ".log.csv", outcome.log);
  std::cout << "trained " << cfg.regime.name() << ", best epoch " << outcome.best_epoch
            << " (val loss " << outcome.best_val_loss << ") -> " << out << "\n";
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& data_dir,
              const std::string& subset_str, const std::string& tasks_csv,
              const std::string& out) {
  const LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  const DatasetBundle data = load_dataset(data_dir);
  const Subset subset = subset_from_name(subset_str);
  const std::vector<TaskId> tasks = parse_tasks(tasks_csv);

  InvocationCounters counters;
  const auto records = run_inference(loaded.model, data, subset, tasks, &counters);
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& rec : records) rows.push_back(prediction_to_json(rec));
  write_jsonl_file(out, rows);
  std::cout << "wrote " << records.size() << " predictions -> " << out << "\n"
            << "adapter invocations: lcStage1=" << counters.lc_stage1
            << " pcStage2=" << counters.pc_stage2 << "\n";
  return 0;
}

int cmd_eval(const std::string& predictions, const std::string& data_dir,
             const std::string& subset_str, double delta, const std::string& thresholds_csv,
             const std::string& out, bool print_table) {
  const DatasetBundle data = load_dataset(data_dir);
  std::vector<PredictionRecord> preds;
  for (const auto& row : read_jsonl_file(predictions)) preds.push_back(prediction_from_json(row));

  metrics::EvalConfig cfg;
  cfg.subset = subset_from_name(subset_str);
  if (delta > 0.0) cfg.delta_override = delta;
  if (!thresholds_csv.empty()) {
    cfg.ap_thresholds.clear();
    for (const auto& item : split_csv(thresholds_csv)) cfg.ap_thresholds.push_back(std::stod(item));
  }

  const metrics::MetricsReport report = metrics::evaluate_run(preds, data, cfg);
  if (!out.empty()) write_text_file(out, report.to_json().dump(2) + "\n");
  if (print_table || out.empty()) std::cout << report.to_table();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crashchat: dual-adapter crash-video model toolkit"};
  app.require_subcommand(1);

  // ---- dataset
  auto* dataset = app.add_subcommand("dataset", "build dataset artifacts");
  dataset->require_subcommand(1);

  std::string manifest_path, out_dir, data_dir;
  auto* ingest = dataset->add_subcommand("ingest", "ingest an annotation manifest");
  ingest->add_option("--manifest", manifest_path, "JSON-lines manifest")->required();
  ingest->add_option("--out", out_dir, "output directory")->required();

  SyntheticConfig synth_cfg;
  std::string synth_config_path;
  auto* synth = dataset->add_subcommand("synth", "generate synthetic videos");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--config", synth_config_path, "SyntheticConfig JSON file");
  synth->add_option("--num-positive", synth_cfg.num_positive);
  synth->add_option("--num-negative", synth_cfg.num_negative);
  synth->add_option("--seed", synth_cfg.seed);
  synth->add_option("--fps", synth_cfg.fps);
  synth->add_option("--feature-dim", synth_cfg.feature_dim);
  synth->add_option("--noise-scale", synth_cfg.noise_scale);

  auto* qa = dataset->add_subcommand("qa", "build the QA pairs");
  qa->add_option("--data", data_dir, "dataset directory")->required();
  qa->add_option("--out", out_dir, "output directory (defaults to --data)");

  std::string ratios = "0.8,0.1,0.1";
  std::uint64_t split_seed = 5;
  auto* split = dataset->add_subcommand("split", "stratified train/val/test split");
  split->add_option("--data", data_dir, "dataset directory")->required();
  split->add_option("--ratios", ratios, "train,val,test fractions");
  split->add_option("--seed", split_seed);
  split->add_option("--out", out_dir, "output directory (defaults to --data)");

  // ---- train
  std::string regime_str = "heterogeneous", group_str = "lc", task_str = "a";
  std::string train_config_path, model_config_path, ckpt_out;
  TrainConfig train_cfg;
  auto* train = app.add_subcommand("train", "fine-tune projectors and adapters");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--regime", regime_str, "independent|homogeneous|heterogeneous");
  train->add_option("--group", group_str, "lc|pc (homogeneous regime)");
  train->add_option("--task", task_str, "a..f (independent regime)");
  train->add_option("--config", train_config_path, "TrainConfig JSON file");
  train->add_option("--model-config", model_config_path, "BackboneConfig JSON file");
  train->add_option("--epochs", train_cfg.epochs);
  train->add_option("--batch-size", train_cfg.batch_size);
  train->add_option("--lr", train_cfg.learning_rate);
  train->add_option("--seed", train_cfg.seed);
  train->add_option("--out", ckpt_out, "checkpoint path")->required();

  // ---- assemble
  std::string hetero_path, homo_pc_path;
  auto* assemble = app.add_subcommand("assemble", "compose the deployable adapter pair");
  assemble->add_option("--hetero", hetero_path, "heterogeneous checkpoint")->required();
  assemble->add_option("--homo-pc", homo_pc_path, "homogeneous Pc checkpoint")->required();
  assemble->add_option("--out", ckpt_out, "output checkpoint")->required();

  // ---- infer
  std::string checkpoint_path, subset_str = "test", tasks_csv = "a,b,c,d,e,f", preds_out;
  auto* infer_cmd = app.add_subcommand("infer", "gated two-stage inference over a split");
  infer_cmd->add_option("--checkpoint", checkpoint_path)->required();
  infer_cmd->add_option("--data", data_dir, "dataset directory")->required();
  infer_cmd->add_option("--split", subset_str, "train|val|test");
  infer_cmd->add_option("--tasks", tasks_csv, "comma-separated task codes");
  infer_cmd->add_option("--out", preds_out, "predictions JSON-lines")->required();

  // ---- eval
  std::string predictions_path, report_out, thresholds_csv;
  double delta = 0.0;
  bool print_table = false;
  auto* eval_cmd = app.add_subcommand("eval", "score a predictions file");
  eval_cmd->add_option("--predictions", predictions_path)->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--split", subset_str, "train|val|test");
  eval_cmd->add_option("--delta", delta, "pre-crash tolerance override (seconds)");
  eval_cmd->add_option("--ap-thresholds", thresholds_csv, "e.g. 0.3,0.5,0.7");
  eval_cmd->add_option("--out", report_out, "metrics JSON path");
  eval_cmd->add_flag("--table", print_table, "print the aligned text table");

  // ---- run
  std::string exp_config_path, stages_csv, run_out;
  bool force = false;
  auto* run_cmd = app.add_subcommand("run", "end-to-end experiment from a config file");
  run_cmd->add_option("--config", exp_config_path, "ExperimentConfig JSON")->required();
  run_cmd->add_option("--stages", stages_csv, "subset of dataset,train,assemble,infer,eval,report");
  run_cmd->add_flag("--force", force, "rerun completed stages");
  run_cmd->add_option("--out", run_out, "override the run directory");

  // ---- report
  std::string run_dir;
  auto* report_cmd = app.add_subcommand("report", "print the regime comparison table");
  report_cmd->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) return cmd_dataset_ingest(manifest_path, out_dir);
    if (synth->parsed()) {
      if (!synth_config_path.empty())
        synth_cfg = SyntheticConfig::from_json(json::parse(read_text_file(synth_config_path)));
      return cmd_dataset_synth(synth_cfg, out_dir);
    }
    if (qa->parsed()) return cmd_dataset_qa(data_dir, out_dir);
    if (split->parsed())
      return cmd_dataset_split(data_dir, parse_split(ratios, split_seed), out_dir);

    if (train->parsed()) {
      if (!train_config_path.empty()) {
        train_cfg = TrainConfig::from_json(json::parse(read_text_file(train_config_path)));
      } else if (regime_str == "independent") {
        train_cfg.regime = Regime::independent(task_from_code(task_str.at(0)));
      } else if (regime_str == "homogeneous") {
        train_cfg.regime = Regime::homogeneous(group_from_name(group_str));
      } else {
        train_cfg.regime = Regime::heterogeneous();
      }
      return cmd_train(data_dir, train_cfg, model_config_path, ckpt_out);
    }

    if (assemble->parsed()) {
      assemble_crashchat(hetero_path, homo_pc_path, ckpt_out);
      std::cout << "assembled -> " << ckpt_out << "\n";
      return 0;
    }

    if (infer_cmd->parsed())
      return cmd_infer(checkpoint_path, data_dir, subset_str, tasks_csv, preds_out);

    if (eval_cmd->parsed())
      return cmd_eval(predictions_path, data_dir, subset_str, delta, thresholds_csv, report_out,
                      print_table);

    if (run_cmd->parsed()) {
      ExperimentConfig cfg = ExperimentConfig::from_json(json::parse(read_text_file(exp_config_path)));
      if (cfg.out_dir.empty())
        cfg.out_dir = (fs::path(default_out_root()) / fs::path(exp_config_path).stem()).string();
      RunOptions options;
      options.force = force;
      for (const auto& s : split_csv(stages_csv)) options.stages.insert(s);
      if (!run_out.empty()) options.out_dir_override = run_out;
      const RunResult result = run_experiment(cfg, options);
      if (!result.success) {
        std::cerr << "run failed at stage '" << result.failed_stage << "': " << result.message
                  << "\n";
        return 1;
      }
      std::cout << "run complete -> " << result.dir << "\n";
      return 0;
    }

    if (report_cmd->parsed()) {
      std::cout << render_comparison(run_dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
