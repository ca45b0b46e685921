#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crashchat/datasetkit.hpp"
#include "crashchat/model.hpp"

namespace crashchat {

struct Regime {
  enum class Kind { Independent, Homogeneous, Heterogeneous };

  Kind kind = Kind::Heterogeneous;
  std::vector<TaskId> task_set;
  TaskGroup target_group = TaskGroup::Lc;

  static Regime independent(TaskId task);
  static Regime homogeneous(TaskGroup group);
  // trains on all six tasks but updates only the Lc parameter set; the
  // perception tasks act as auxiliary objectives through the Lc adapter
  static Regime heterogeneous();

  std::optional<std::string> validate() const;
  bool contains(TaskId task) const;
  std::string kind_name() const;
  std::string name() const;        // e.g. "independent-f", "homogeneous-pc"
  std::string task_codes() const;  // e.g. "abcdef"
};

struct TrainConfig {
  Regime regime;
  int epochs = 10;
  int batch_size = 8;
  double learning_rate = 2e-3;
  std::uint64_t seed = 7;
  std::map<char, double> task_sampling_weights;  // by task code, default 1.0
  bool answer_only_loss = true;

  std::optional<std::string> validate() const;
  json to_json() const;
  static TrainConfig from_json(const json& j);
};

struct TrainExample {
  const QAPair* qa = nullptr;
  const VideoSample* video = nullptr;
};

// Adam state for one group block.
struct SftState {
  std::vector<double> m, v;
  long long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void reset(std::size_t size);
};

struct SftStepResult {
  double loss = 0.0;  // mean NLL per supervised token over the batch
  int supervised_tokens = 0;
  // per-task (summed NLL, token count), for logging
  std::map<char, std::pair<double, int>> per_task;
};

// One optimizer step. Only the target group's projector and adapter move;
// a non-finite loss aborts the run.
SftStepResult sft_step(CrashChatModel& model, const std::vector<TrainExample>& batch,
                       TaskGroup group, SftState& state, const TrainConfig& cfg);

struct EpochLogRow {
  int epoch = 0;
  std::string task;   // task code or "all"
  std::string split;  // "train" or "val"
  double loss = 0.0;
};

struct TrainOutcome {
  CrashChatModel model;  // parameters from the best validation epoch
  std::vector<EpochLogRow> log;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

TrainOutcome train_regime(const CrashChatModel& init_model, const TrainConfig& cfg,
                          const DatasetBundle& data);

void write_train_log_csv(const std::string& path, const std::vector<EpochLogRow>& rows);

// Deployable pair: Lc block from the heterogeneous checkpoint, Pc block
// from the homogeneous perception checkpoint. Role or config mismatches
// are errors.
void assemble_crashchat(const std::string& hetero_path, const std::string& homo_pc_path,
                        const std::string& out_path);

}  // namespace crashchat
