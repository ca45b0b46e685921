#include "crashchat/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "crashchat/kernels.hpp"

namespace crashchat {

Regime Regime::independent(TaskId task) {
  Regime r;
  r.kind = Kind::Independent;
  r.task_set = {task};
  r.target_group = group_of(task);
  return r;
}

Regime Regime::homogeneous(TaskGroup group) {
  Regime r;
  r.kind = Kind::Homogeneous;
  r.task_set = tasks_of(group);
  r.target_group = group;
  return r;
}

Regime Regime::heterogeneous() {
  Regime r;
  r.kind = Kind::Heterogeneous;
  r.task_set.assign(kAllTasks.begin(), kAllTasks.end());
  r.target_group = TaskGroup::Lc;
  return r;
}

std::optional<std::string> Regime::validate() const {
  if (task_set.empty()) return "task set must be non-empty";
  switch (kind) {
    case Kind::Independent:
      if (task_set.size() != 1) return "independent regime takes exactly one task";
      if (group_of(task_set[0]) != target_group) return "target group must match the task's group";
      break;
    case Kind::Homogeneous:
      if (task_set != tasks_of(target_group)) return "homogeneous regime takes one full task group";
      break;
    case Kind::Heterogeneous:
      if (task_set.size() != kAllTasks.size()) return "heterogeneous regime takes all six tasks";
      if (target_group != TaskGroup::Lc) return "heterogeneous regime updates the Lc set";
      break;
  }
  return std::nullopt;
}

bool Regime::contains(TaskId task) const {
  return std::find(task_set.begin(), task_set.end(), task) != task_set.end();
}

std::string Regime::kind_name() const {
  switch (kind) {
    case Kind::Independent: return "independent";
    case Kind::Homogeneous: return "homogeneous";
    case Kind::Heterogeneous: return "heterogeneous";
  }
  return "?";
}

std::string Regime::name() const {
  switch (kind) {
    case Kind::Independent: return "independent-" + std::string(1, task_code(task_set[0]));
    case Kind::Homogeneous: return "homogeneous-" + group_name(target_group);
    case Kind::Heterogeneous: return "heterogeneous";
  }
  return "?";
}

std::string Regime::task_codes() const {
  std::string codes;
  for (TaskId t : task_set) codes.push_back(task_code(t));
  return codes;
}

std::optional<std::string> TrainConfig::validate() const {
  if (auto err = regime.validate()) return err;
  if (epochs < 1) return "epochs must be at least 1";
  if (batch_size < 1) return "batchSize must be at least 1";
  if (!(learning_rate > 0.0)) return "learningRate must be positive";
  for (const auto& [code, w] : task_sampling_weights)
    if (!(w > 0.0)) return std::string("sampling weight for task ") + code + " must be positive";
  return std::nullopt;
}

json TrainConfig::to_json() const {
  json weights = json::object();
  for (const auto& [code, w] : task_sampling_weights) weights[std::string(1, code)] = w;
  return json{{"regime", regime.kind_name()},
              {"group", group_name(regime.target_group)},
              {"tasks", regime.task_codes()},
              {"epochs", epochs},
              {"batchSize", batch_size},
              {"learningRate", learning_rate},
              {"seed", seed},
              {"taskSamplingWeights", weights},
              {"answerOnlyLoss", answer_only_loss}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig cfg;
  const std::string kind = j.value("regime", "heterogeneous");
  if (kind == "independent") {
    cfg.regime = Regime::independent(task_from_code(j.at("tasks").get<std::string>().at(0)));
  } else if (kind == "homogeneous") {
    cfg.regime = Regime::homogeneous(group_from_name(j.value("group", "lc")));
  } else if (kind == "heterogeneous") {
    cfg.regime = Regime::heterogeneous();
  } else {
    throw std::runtime_error("unknown regime: " + kind);
  }
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batchSize", cfg.batch_size);
  cfg.learning_rate = j.value("learningRate", cfg.learning_rate);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("taskSamplingWeights"))
    for (const auto& [key, value] : j.at("taskSamplingWeights").items())
      cfg.task_sampling_weights[key.at(0)] = value.get<double>();
  cfg.answer_only_loss = j.value("answerOnlyLoss", cfg.answer_only_loss);
  return cfg;
}

void SftState::reset(std::size_t size) {
  m.assign(size, 0.0);
  v.assign(size, 0.0);
  step = 0;
}

SftStepResult sft_step(CrashChatModel& model, const std::vector<TrainExample>& batch,
                       TaskGroup group, SftState& state, const TrainConfig& cfg) {
  if (batch.empty()) throw std::runtime_error("sft_step: empty batch");
  for (const auto& ex : batch)
    if (!cfg.regime.contains(ex.qa->task))
      throw std::runtime_error(std::string("sft_step: task ") + task_code(ex.qa->task) +
                               " is outside the regime's task set");

  auto& params = model.params_of(group);
  if (state.m.size() != params.size()) state.reset(params.size());

  std::vector<double> grads(params.size(), 0.0);
  SftStepResult result;
  double loss_sum = 0.0;
  for (const auto& ex : batch) {
    int tokens = 0;
    const double loss = model.loss_and_gradients(*ex.video, ex.qa->question,
                                                 ex.qa->reference_answer, group, &grads, &tokens,
                                                 cfg.answer_only_loss);
    loss_sum += loss;
    result.supervised_tokens += tokens;
    auto& acc = result.per_task[task_code(ex.qa->task)];
    acc.first += loss;
    acc.second += tokens;
  }

  if (result.supervised_tokens == 0) throw std::runtime_error("sft_step: no supervised tokens");
  result.loss = loss_sum / result.supervised_tokens;
  if (!std::isfinite(result.loss)) {
    std::ostringstream msg;
    msg << "sft_step: non-finite loss " << result.loss << " at optimizer step "
        << (state.step + 1) << " (lr=" << cfg.learning_rate << ", batch of " << batch.size()
        << ")";
    throw std::runtime_error(msg.str());
  }

  const double scale = 1.0 / result.supervised_tokens;
  for (double& g : grads) g *= scale;

  ++state.step;
  const double bias1 = std::pow(state.beta1, static_cast<double>(state.step));
  const double bias2 = std::pow(state.beta2, static_cast<double>(state.step));
  kernels::adam_step(params.data(), grads.data(), state.m.data(), state.v.data(), params.size(),
                     cfg.learning_rate, state.beta1, state.beta2, state.eps, bias1, bias2);
  return result;
}

namespace {

std::vector<TrainExample> collect_examples(const DatasetBundle& data, const Regime& regime,
                                           Subset subset) {
  std::vector<TrainExample> examples;
  for (const QAPair* qa : data.qa_in(subset)) {
    if (!regime.contains(qa->task)) continue;
    const VideoSample* video = data.find(qa->video_id);
    if (!video) throw std::runtime_error("no sample for video " + qa->video_id);
    examples.push_back({qa, video});
  }
  return examples;
}

// token-weighted mean loss per task plus overall, forward passes only
std::map<std::string, double> eval_loss(const CrashChatModel& model,
                                        const std::vector<TrainExample>& examples,
                                        TaskGroup group, bool answer_only) {
  std::map<char, std::pair<double, int>> per_task;
  double loss_sum = 0.0;
  int token_sum = 0;
  for (const auto& ex : examples) {
    int tokens = 0;
    const double loss = model.loss_and_gradients(*ex.video, ex.qa->question,
                                                 ex.qa->reference_answer, group, nullptr, &tokens,
                                                 answer_only);
    loss_sum += loss;
    token_sum += tokens;
    auto& acc = per_task[task_code(ex.qa->task)];
    acc.first += loss;
    acc.second += tokens;
  }
  std::map<std::string, double> out;
  for (const auto& [code, acc] : per_task)
    out[std::string(1, code)] = acc.second > 0 ? acc.first / acc.second : 0.0;
  out["all"] = token_sum > 0 ? loss_sum / token_sum : 0.0;
  return out;
}

}  // namespace

TrainOutcome train_regime(const CrashChatModel& init_model, const TrainConfig& cfg,
                          const DatasetBundle& data) {
  if (auto err = cfg.validate()) throw std::runtime_error("invalid train config: " + *err);

  const std::vector<TrainExample> train_examples =
      collect_examples(data, cfg.regime, Subset::Train);
  const std::vector<TrainExample> val_examples = collect_examples(data, cfg.regime, Subset::Val);
  for (TaskId task : cfg.regime.task_set) {
    const bool present = std::any_of(train_examples.begin(), train_examples.end(),
                                     [task](const TrainExample& ex) { return ex.qa->task == task; });
    if (!present)
      throw std::runtime_error(std::string("no training data for task ") + task_code(task));
  }

  TrainOutcome outcome;
  outcome.model = init_model;
  CrashChatModel working = init_model;
  const TaskGroup group = cfg.regime.target_group;
  SftState state;
  state.reset(working.params_of(group).size());

  std::vector<double> best_block = working.params_of(group);
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // expand by sampling weights, then shuffle deterministically
    Rng rng(cfg.seed ^ (0xA24BAED4963EE407ULL * static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < train_examples.size(); ++i) {
      double w = 1.0;
      auto it = cfg.task_sampling_weights.find(task_code(train_examples[i].qa->task));
      if (it != cfg.task_sampling_weights.end()) w = it->second;
      const int copies = static_cast<int>(std::floor(w));
      for (int c = 0; c < copies; ++c) order.push_back(i);
      if (rng.uniform() < w - copies) order.push_back(i);
    }
    rng.shuffle(order);

    std::map<char, std::pair<double, int>> train_acc;
    double train_loss_sum = 0.0;
    int train_token_sum = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      std::vector<TrainExample> batch;
      for (std::size_t i = at; i < std::min(order.size(), at + cfg.batch_size); ++i)
        batch.push_back(train_examples[order[i]]);
      const SftStepResult step = sft_step(working, batch, group, state, cfg);
      for (const auto& [code, acc] : step.per_task) {
        train_acc[code].first += acc.first;
        train_acc[code].second += acc.second;
        train_loss_sum += acc.first;
        train_token_sum += acc.second;
      }
    }

    for (const auto& [code, acc] : train_acc)
      outcome.log.push_back(
          {epoch, std::string(1, code), "train", acc.second > 0 ? acc.first / acc.second : 0.0});
    outcome.log.push_back(
        {epoch, "all", "train", train_token_sum > 0 ? train_loss_sum / train_token_sum : 0.0});

    const auto val_losses =
        eval_loss(working, val_examples, group, cfg.answer_only_loss);
    for (const auto& [task, loss] : val_losses)
      if (task != "all") outcome.log.push_back({epoch, task, "val", loss});
    const double val_all = val_losses.at("all");
    outcome.log.push_back({epoch, "all", "val", val_all});

    if (val_examples.empty() || val_all < best_val) {
      best_val = val_examples.empty() ? 0.0 : val_all;
      best_epoch = epoch;
      best_block = working.params_of(group);
    }
  }

  outcome.model.params_of(group) = std::move(best_block);
  outcome.best_epoch = best_epoch;
  outcome.best_val_loss = best_val;
  return outcome;
}

void write_train_log_csv(const std::string& path, const std::vector<EpochLogRow>& rows) {
  std::ostringstream out;
  out << "epoch,task,split,loss\n";
  for (const auto& row : rows) {
    char loss_buf[32];
    std::snprintf(loss_buf, sizeof(loss_buf), "%.6f", row.loss);
    out << row.epoch << "," << row.task << "," << row.split << "," << loss_buf << "\n";
  }
  write_text_file(path, out.str());
}

void assemble_crashchat(const std::string& hetero_path, const std::string& homo_pc_path,
                        const std::string& out_path) {
  RawCheckpoint hetero = read_checkpoint_raw(hetero_path);
  RawCheckpoint homo = read_checkpoint_raw(homo_pc_path);

  const auto hetero_prov = CheckpointProvenance::from_json(hetero.meta.value("provenance", json::object()));
  const auto homo_prov = CheckpointProvenance::from_json(homo.meta.value("provenance", json::object()));
  if (hetero_prov.regime != "heterogeneous")
    throw std::runtime_error("assemble: first checkpoint must come from the heterogeneous regime, got '" +
                             hetero_prov.regime + "'");
  if (homo_prov.regime != "homogeneous" || homo_prov.group != "pc")
    throw std::runtime_error("assemble: second checkpoint must come from the homogeneous Pc regime, got '" +
                             homo_prov.regime + "/" + homo_prov.group + "'");
  if (hetero.meta.at("config") != homo.meta.at("config"))
    throw std::runtime_error("assemble: checkpoints disagree on the base config");
  if (hetero.base != homo.base)
    throw std::runtime_error("assemble: checkpoints carry different frozen base weights");

  RawCheckpoint out;
  out.meta = hetero.meta;
  out.meta["provenance"] =
      CheckpointProvenance{"assembled", "lc+pc", "abcdef"}.to_json();
  out.base = std::move(hetero.base);
  out.lc = std::move(hetero.lc);
  out.pc = std::move(homo.pc);
  write_checkpoint_raw(out, out_path);
}

}  // namespace crashchat
