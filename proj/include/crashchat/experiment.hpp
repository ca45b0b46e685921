#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crashchat/datasetkit.hpp"
#include "crashchat/metrics.hpp"
#include "crashchat/model.hpp"
#include "crashchat/pipeline.hpp"
#include "crashchat/training.hpp"

namespace crashchat {

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "runs/default";

  // dataset source: synthetic generation unless a manifest path is given
  SyntheticConfig synthetic;
  std::optional<std::string> manifest_path;
  SplitSpec split;

  BackboneConfig model;

  std::vector<std::string> regimes = {"independent", "homogeneous", "heterogeneous"};
  TrainConfig train_defaults;
  std::map<std::string, json> train_overrides;  // keyed by regime name, e.g. "homogeneous-pc"

  std::optional<double> eval_delta;
  std::vector<double> ap_thresholds = {0.3, 0.5, 0.7};

  static ExperimentConfig defaults();
  json to_json() const;
  static ExperimentConfig from_json(const json& j);
  std::string hash() const;
};

struct RunOptions {
  std::set<std::string> stages;  // empty = all: dataset, train, assemble, infer, eval, report
  bool force = false;
  std::optional<std::string> out_dir_override;  // placement only; not part of the config hash
};

struct RunResult {
  bool success = false;
  std::string failed_stage;
  std::string message;
  std::string dir;
};

// dataset -> train (requested regimes) -> assemble -> infer -> eval -> report.
// Completed stages are skipped on rerun unless forced; failures keep partial
// results and mark the failing stage in state.json.
RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

// Three-column regime comparison (plus deltas) built from a run's metrics.
std::string render_comparison(const std::string& run_dir);

// Runs the gated pipeline for every (sample in subset) x task and collects
// the prediction records; counters accumulate adapter invocations.
std::vector<PredictionRecord> run_inference(const CrashChatModel& model,
                                            const DatasetBundle& data, Subset subset,
                                            const std::vector<TaskId>& tasks,
                                            InvocationCounters* counters = nullptr);

std::string default_out_root();

}  // namespace crashchat
