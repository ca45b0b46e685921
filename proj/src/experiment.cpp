#include "crashchat/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace crashchat {

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.synthetic.num_positive = 200;
  cfg.synthetic.num_negative = 200;
  cfg.train_defaults.regime = Regime::heterogeneous();
  return cfg;
}

json ExperimentConfig::to_json() const {
  json dataset;
  if (manifest_path) {
    dataset = json{{"manifestPath", *manifest_path}};
  } else {
    dataset = json{{"synthetic", synthetic.to_json()}};
  }
  json train = {{"regimes", regimes},
                {"epochs", train_defaults.epochs},
                {"batchSize", train_defaults.batch_size},
                {"learningRate", train_defaults.learning_rate},
                {"seed", train_defaults.seed},
                {"answerOnlyLoss", train_defaults.answer_only_loss}};
  if (!train_overrides.empty()) {
    json overrides = json::object();
    for (const auto& [name, value] : train_overrides) overrides[name] = value;
    train["perRegime"] = overrides;
  }
  json eval = {{"apThresholds", ap_thresholds}};
  eval["delta"] = eval_delta ? json(*eval_delta) : json();
  return json{{"seed", seed},      {"outDir", out_dir}, {"dataset", dataset},
              {"split", split.to_json()}, {"model", model.to_json()}, {"train", train},
              {"eval", eval}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg = defaults();
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out_dir = j.value("outDir", cfg.out_dir);
  if (j.contains("dataset")) {
    const json& dataset = j.at("dataset");
    if (dataset.contains("manifestPath")) {
      cfg.manifest_path = dataset.at("manifestPath").get<std::string>();
    }
    if (dataset.contains("synthetic")) cfg.synthetic = SyntheticConfig::from_json(dataset.at("synthetic"));
  }
  if (j.contains("split")) cfg.split = SplitSpec::from_json(j.at("split"));
  if (j.contains("model")) cfg.model = BackboneConfig::from_json(j.at("model"));
  if (!j.contains("model") || !j.at("model").contains("initSeed")) cfg.model.init_seed = cfg.seed;
  if (j.contains("train")) {
    const json& train = j.at("train");
    if (train.contains("regimes")) cfg.regimes = train.at("regimes").get<std::vector<std::string>>();
    cfg.train_defaults.epochs = train.value("epochs", cfg.train_defaults.epochs);
    cfg.train_defaults.batch_size = train.value("batchSize", cfg.train_defaults.batch_size);
    cfg.train_defaults.learning_rate =
        train.value("learningRate", cfg.train_defaults.learning_rate);
    cfg.train_defaults.seed = train.value("seed", cfg.train_defaults.seed);
    cfg.train_defaults.answer_only_loss =
        train.value("answerOnlyLoss", cfg.train_defaults.answer_only_loss);
    if (train.contains("perRegime"))
      for (const auto& [name, value] : train.at("perRegime").items())
        cfg.train_overrides[name] = value;
  }
  if (j.contains("eval")) {
    const json& eval = j.at("eval");
    if (eval.contains("delta") && !eval.at("delta").is_null())
      cfg.eval_delta = eval.at("delta").get<double>();
    if (eval.contains("apThresholds"))
      cfg.ap_thresholds = eval.at("apThresholds").get<std::vector<double>>();
  }
  return cfg;
}

std::string ExperimentConfig::hash() const { return hash_hex(to_json().dump()); }

std::string default_out_root() {
  if (const char* env = std::getenv("CRASHCHAT_OUT_ROOT")) return std::string(env);
  return "runs";
}

// --------------------------------------------------------------- inference

std::vector<PredictionRecord> run_inference(const CrashChatModel& model,
                                            const DatasetBundle& data, Subset subset,
                                            const std::vector<TaskId>& tasks,
                                            InvocationCounters* counters) {
  std::vector<const VideoSample*> samples = data.samples_in(subset);
  std::sort(samples.begin(), samples.end(),
            [](const VideoSample* a, const VideoSample* b) { return a->video_id < b->video_id; });

  std::vector<PredictionRecord> records;
  records.reserve(samples.size() * tasks.size());
  for (const VideoSample* sample : samples) {
    for (TaskId task : tasks) {
      const InferenceResult result = infer(*sample, task, model, counters);
      records.push_back(result.final);
    }
  }
  return records;
}

// ------------------------------------------------------------------ stages

namespace {

struct RunState {
  json stages = json::object();
  std::string config_hash;

  static RunState load(const fs::path& path) {
    RunState state;
    if (fs::exists(path)) {
      const json j = json::parse(read_text_file(path.string()));
      state.stages = j.value("stages", json::object());
      state.config_hash = j.value("configHash", "");
    }
    return state;
  }

  void save(const fs::path& path, const std::string& failed_stage = "") const {
    json j = {{"configHash", config_hash}, {"stages", stages}};
    j["failedStage"] = failed_stage.empty() ? json() : json(failed_stage);
    write_text_file(path.string(), j.dump(2) + "\n");
  }
};

struct TrainedModelEntry {
  std::string name;            // e.g. "independent-f"
  std::vector<TaskId> tasks;   // tasks this model is evaluated on
};

std::vector<TrainConfig> planned_regimes(const ExperimentConfig& cfg) {
  std::vector<TrainConfig> plans;
  auto base_for = [&cfg](const Regime& regime) {
    TrainConfig tc = cfg.train_defaults;
    tc.regime = regime;
    auto it = cfg.train_overrides.find(regime.name());
    if (it == cfg.train_overrides.end()) it = cfg.train_overrides.find(regime.kind_name());
    if (it != cfg.train_overrides.end()) {
      const json& o = it->second;
      tc.epochs = o.value("epochs", tc.epochs);
      tc.batch_size = o.value("batchSize", tc.batch_size);
      tc.learning_rate = o.value("learningRate", tc.learning_rate);
      tc.seed = o.value("seed", tc.seed);
      tc.answer_only_loss = o.value("answerOnlyLoss", tc.answer_only_loss);
      if (o.contains("taskSamplingWeights"))
        for (const auto& [key, value] : o.at("taskSamplingWeights").items())
          tc.task_sampling_weights[key.at(0)] = value.get<double>();
    }
    return tc;
  };
  for (const std::string& kind : cfg.regimes) {
    if (kind == "independent") {
      for (TaskId task : kAllTasks) plans.push_back(base_for(Regime::independent(task)));
    } else if (kind == "homogeneous") {
      plans.push_back(base_for(Regime::homogeneous(TaskGroup::Lc)));
      plans.push_back(base_for(Regime::homogeneous(TaskGroup::Pc)));
    } else if (kind == "heterogeneous") {
      plans.push_back(base_for(Regime::heterogeneous()));
    } else {
      throw std::runtime_error("unknown regime in config: " + kind);
    }
  }
  return plans;
}

void stage_dataset(const ExperimentConfig& cfg, const fs::path& run_dir,
                   const std::string& config_hash) {
  const fs::path data_dir = run_dir / "data";
  std::vector<VideoSample> samples;
  std::map<std::string, ReferenceTexts> texts;
  if (cfg.manifest_path) {
    IngestResult ingest = ingest_manifest(*cfg.manifest_path);
    if (!ingest.errors.empty()) {
      std::vector<json> rows;
      for (const auto& e : ingest.errors)
        rows.push_back(json{{"line", e.line}, {"videoId", e.video_id}, {"reason", e.reason}});
      fs::create_directories(data_dir);
      write_jsonl_file((data_dir / "ingest_errors.jsonl").string(), rows, config_hash);
    }
    samples = std::move(ingest.samples);
    texts = std::move(ingest.texts);
  } else {
    SyntheticResult synth = generate_synthetic(cfg.synthetic);
    samples = std::move(synth.samples);
    texts = std::move(synth.texts);
  }
  save_samples(data_dir.string(), samples, texts, config_hash);
  save_qa(data_dir.string(), build_qa_pairs(samples, texts), config_hash);
  save_split(data_dir.string(), samples, stratified_split(samples, cfg.split), config_hash);
}

void stage_train(const ExperimentConfig& cfg, const fs::path& run_dir,
                 const std::string& config_hash) {
  const DatasetBundle data = load_dataset((run_dir / "data").string());
  const CrashChatModel init_model = CrashChatModel::init(cfg.model);
  fs::create_directories(run_dir / "checkpoints");
  fs::create_directories(run_dir / "logs");

  save_checkpoint(init_model, {"init", "", ""}, (run_dir / "checkpoints" / "init.ckpt").string());

  for (const TrainConfig& plan : planned_regimes(cfg)) {
    const TrainOutcome outcome = train_regime(init_model, plan, data);
    CheckpointProvenance prov;
    prov.regime = plan.regime.kind_name();
    prov.group = group_name(plan.regime.target_group);
    prov.tasks = plan.regime.task_codes();
    save_checkpoint(outcome.model, prov,
                    (run_dir / "checkpoints" / (plan.regime.name() + ".ckpt")).string());
    write_train_log_csv((run_dir / "logs" / (plan.regime.name() + ".csv")).string(), outcome.log);
    json summary = {{"regime", plan.regime.name()},
                    {"bestEpoch", outcome.best_epoch},
                    {"bestValLoss", outcome.best_val_loss},
                    {"configHash", config_hash}};
    write_text_file((run_dir / "logs" / (plan.regime.name() + ".json")).string(),
                    summary.dump(2) + "\n");
  }
}

void stage_assemble(const fs::path& run_dir) {
  const fs::path hetero = run_dir / "checkpoints" / "heterogeneous.ckpt";
  const fs::path homo_pc = run_dir / "checkpoints" / "homogeneous-pc.ckpt";
  if (!fs::exists(hetero) || !fs::exists(homo_pc)) return;  // nothing to assemble
  assemble_crashchat(hetero.string(), homo_pc.string(),
                     (run_dir / "checkpoints" / "crashchat.ckpt").string());
}

// Evaluation targets and the tasks each runs on. Localization-only
// checkpoints carry an untrained stage-1 gate, so those evaluations borrow
// the strongest trained Lc block available to keep the comparison about
// the Pc parameters rather than the gate.
struct EvalTarget {
  std::string name;
  fs::path checkpoint;
  std::vector<TaskId> tasks;
  std::optional<fs::path> gate_lc;
};

std::vector<EvalTarget> eval_targets(const ExperimentConfig& cfg, const fs::path& run_dir) {
  const fs::path ckpts = run_dir / "checkpoints";
  std::optional<fs::path> gate;
  for (const char* candidate : {"crashchat.ckpt", "heterogeneous.ckpt", "homogeneous-lc.ckpt"}) {
    if (fs::exists(ckpts / candidate)) {
      gate = ckpts / candidate;
      break;
    }
  }

  std::vector<EvalTarget> targets;
  for (const std::string& kind : cfg.regimes) {
    if (kind == "independent") {
      for (TaskId task : kAllTasks) {
        EvalTarget t;
        t.name = "independent-" + std::string(1, task_code(task));
        t.checkpoint = ckpts / (t.name + ".ckpt");
        t.tasks = {task};
        if (group_of(task) == TaskGroup::Pc) t.gate_lc = gate;
        targets.push_back(std::move(t));
      }
    } else if (kind == "homogeneous") {
      targets.push_back({"homogeneous-lc", ckpts / "homogeneous-lc.ckpt",
                         tasks_of(TaskGroup::Lc), std::nullopt});
      targets.push_back(
          {"homogeneous-pc", ckpts / "homogeneous-pc.ckpt", tasks_of(TaskGroup::Pc), gate});
    } else if (kind == "heterogeneous") {
      targets.push_back({"heterogeneous", ckpts / "heterogeneous.ckpt",
                         std::vector<TaskId>(kAllTasks.begin(), kAllTasks.end()), std::nullopt});
    }
  }
  if (fs::exists(ckpts / "crashchat.ckpt")) {
    targets.push_back({"crashchat", ckpts / "crashchat.ckpt",
                       std::vector<TaskId>(kAllTasks.begin(), kAllTasks.end()), std::nullopt});
  }
  return targets;
}

void stage_infer(const ExperimentConfig& cfg, const fs::path& run_dir,
                 const std::string& config_hash) {
  const DatasetBundle data = load_dataset((run_dir / "data").string());
  fs::create_directories(run_dir / "predictions");

  for (const EvalTarget& target : eval_targets(cfg, run_dir)) {
    if (!fs::exists(target.checkpoint)) continue;
    LoadedCheckpoint loaded = load_checkpoint(target.checkpoint.string());
    if (target.gate_lc && *target.gate_lc != target.checkpoint) {
      const RawCheckpoint gate = read_checkpoint_raw(target.gate_lc->string());
      if (gate.lc.size() == loaded.model.params_of(TaskGroup::Lc).size())
        loaded.model.params_of(TaskGroup::Lc) = gate.lc;
    }

    InvocationCounters counters;
    const std::vector<PredictionRecord> records =
        run_inference(loaded.model, data, Subset::Test, target.tasks, &counters);

    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& rec : records) rows.push_back(prediction_to_json(rec));
    write_jsonl_file((run_dir / "predictions" / (target.name + ".jsonl")).string(), rows,
                     config_hash);
    const json counter_json = {{"lcStage1", counters.lc_stage1},
                               {"pcStage2", counters.pc_stage2},
                               {"configHash", config_hash}};
    write_text_file((run_dir / "predictions" / (target.name + ".counters.json")).string(),
                    counter_json.dump(2) + "\n");
  }
}

void stage_eval(const ExperimentConfig& cfg, const fs::path& run_dir,
                const std::string& config_hash) {
  const DatasetBundle data = load_dataset((run_dir / "data").string());
  fs::create_directories(run_dir / "metrics");

  metrics::EvalConfig eval_cfg;
  eval_cfg.subset = Subset::Test;
  eval_cfg.delta_override = cfg.eval_delta;
  eval_cfg.ap_thresholds = cfg.ap_thresholds;

  for (const EvalTarget& target : eval_targets(cfg, run_dir)) {
    const fs::path preds_path = run_dir / "predictions" / (target.name + ".jsonl");
    if (!fs::exists(preds_path)) continue;
    std::vector<PredictionRecord> preds;
    for (const auto& row : read_jsonl_file(preds_path.string()))
      preds.push_back(prediction_from_json(row));
    metrics::MetricsReport report = metrics::evaluate_run(preds, data, eval_cfg);
    report.config_hash = config_hash;
    write_text_file((run_dir / "metrics" / (target.name + ".json")).string(),
                    report.to_json().dump(2) + "\n");
    write_text_file((run_dir / "metrics" / (target.name + ".txt")).string(), report.to_table());
  }
}

void stage_report(const fs::path& run_dir) {
  const std::string table = render_comparison(run_dir.string());
  write_text_file((run_dir / "comparison.txt").string(), table);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  RunResult result;
  if (auto err = cfg.model.validate()) {
    result.message = "invalid model config: " + *err;
    result.failed_stage = "config";
    return result;
  }
  if (auto err = cfg.split.validate()) {
    result.message = "invalid split spec: " + *err;
    result.failed_stage = "config";
    return result;
  }

  const fs::path run_dir =
      options.out_dir_override ? fs::path(*options.out_dir_override) : fs::path(cfg.out_dir);
  result.dir = run_dir.string();
  fs::create_directories(run_dir);

  const std::string config_hash = cfg.hash();
  write_text_file((run_dir / "config.json").string(), cfg.to_json().dump(2) + "\n");

  const fs::path state_path = run_dir / "state.json";
  RunState state = RunState::load(state_path);
  const bool hash_changed = state.config_hash != config_hash;
  state.config_hash = config_hash;

  const std::vector<std::string> all_stages = {"dataset", "train",  "assemble",
                                               "infer",   "eval",   "report"};
  auto wanted = [&options](const std::string& stage) {
    return options.stages.empty() || options.stages.count(stage) > 0;
  };
  auto done = [&state, &options, hash_changed](const std::string& stage) {
    return !options.force && !hash_changed && state.stages.value(stage, "") == "done";
  };

  for (const std::string& stage : all_stages) {
    if (!wanted(stage)) continue;
    if (done(stage)) continue;
    try {
      if (stage == "dataset") stage_dataset(cfg, run_dir, config_hash);
      else if (stage == "train") stage_train(cfg, run_dir, config_hash);
      else if (stage == "assemble") stage_assemble(run_dir);
      else if (stage == "infer") stage_infer(cfg, run_dir, config_hash);
      else if (stage == "eval") stage_eval(cfg, run_dir, config_hash);
      else if (stage == "report") stage_report(run_dir);
      state.stages[stage] = "done";
      state.save(state_path);
    } catch (const std::exception& e) {
      state.stages[stage] = "failed";
      state.save(state_path, stage);
      result.failed_stage = stage;
      result.message = e.what();
      return result;
    }
  }

  result.success = true;
  return result;
}

// ------------------------------------------------------------------ report

namespace {

json load_metrics_json(const fs::path& path) {
  if (!fs::exists(path)) return json();
  return json::parse(read_text_file(path.string()));
}

// metric value for one regime column; independent models are stitched
// together from their six per-task runs
json column_value(const fs::path& metrics_dir, const std::string& column,
                  const std::string& task_key, char task, const std::string& metric) {
  std::string file;
  if (column == "ind") {
    file = std::string("independent-") + task + ".json";
  } else if (column == "homo") {
    file = group_of(task_from_code(task)) == TaskGroup::Lc ? "homogeneous-lc.json"
                                                           : "homogeneous-pc.json";
  } else {
    file = "heterogeneous.json";
  }
  const json report = load_metrics_json(metrics_dir / file);
  if (report.is_null()) return json();
  const json& tasks = report.at("tasks");
  if (!tasks.contains(task_key)) return json();
  const json& section = tasks.at(task_key);
  if (!section.value("evaluated", false) || !section.contains(metric)) return json();
  return section.at(metric);
}

std::string cell(const json& value) {
  if (value.is_null()) return "     -";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%6.4f", value.get<double>());
  return std::string(buf);
}

std::string delta_cell(const json& a, const json& b) {
  if (a.is_null() || b.is_null()) return "      -";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+7.4f", a.get<double>() - b.get<double>());
  return std::string(buf);
}

}  // namespace

std::string render_comparison(const std::string& run_dir) {
  const fs::path metrics_dir = fs::path(run_dir) / "metrics";
  std::ostringstream out;

  const std::vector<std::tuple<std::string, std::string, char, std::vector<std::string>>> rows = {
      {"Crash Recognition", "recognition", 'a', {"Rec", "Pre", "F1"}},
      {"Crash Description", "description", 'b', {"BLEU", "ROUGE", "BERT"}},
      {"Causal Reasoning", "causalReasoning", 'c', {"BLEU", "ROUGE", "BERT"}},
      {"Prevention Reasoning", "preventionReasoning", 'd', {"BLEU", "ROUGE", "BERT"}},
      {"Crash Localization", "crashLocalization", 'e', {"mIoU", "AP@30", "AP@50", "AP@70"}},
      {"Pre-crash Localization", "preCrashLocalization", 'f',
       {"mIoU", "AP@30", "AP@50", "AP@70"}},
  };

  out << "                      Ind.    Homo.   Hete.   Homo-Ind  Hete-Ind  Hete-Homo\n";
  for (const auto& [title, key, task, metric_names] : rows) {
    out << title << "\n";
    for (const std::string& metric : metric_names) {
      const json ind = column_value(metrics_dir, "ind", key, task, metric);
      const json homo = column_value(metrics_dir, "homo", key, task, metric);
      const json hete = column_value(metrics_dir, "hete", key, task, metric);
      out << "  " << metric;
      for (std::size_t i = metric.size(); i < 18; ++i) out << ' ';
      out << cell(ind) << "  " << cell(homo) << "  " << cell(hete) << "  " << delta_cell(homo, ind)
          << "   " << delta_cell(hete, ind) << "   " << delta_cell(hete, homo) << "\n";
    }
  }

  const json crashchat = load_metrics_json(metrics_dir / "crashchat.json");
  if (!crashchat.is_null()) {
    out << "\nAssembled adapter pair (Lc from heterogeneous, Pc from homogeneous)\n";
    for (const auto& [title, key, task, metric_names] : rows) {
      (void)task;
      const json& section = crashchat.at("tasks").at(key);
      if (!section.value("evaluated", false)) continue;
      out << title << "\n";
      for (const std::string& metric : metric_names) {
        out << "  " << metric;
        for (std::size_t i = metric.size(); i < 18; ++i) out << ' ';
        out << cell(section.contains(metric) ? section.at(metric) : json()) << "\n";
      }
    }
  }
  return out.str();
}

}  // namespace crashchat
