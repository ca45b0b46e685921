// End-to-end acceptance suite. Each check prints one pass/fail line; the
// binary exits non-zero if any check fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "crashchat/datasetkit.hpp"
#include "crashchat/experiment.hpp"
#include "crashchat/metrics.hpp"
#include "crashchat/model.hpp"
#include "crashchat/pipeline.hpp"
#include "crashchat/templates.hpp"
#include "crashchat/training.hpp"

using namespace crashchat;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool condition, const std::string& message) {
  if (!condition) throw CheckFailure(message);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return std::string(buf);
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// artifacts shared between checks
struct Context {
  fs::path tmp;
  std::optional<IngestResult> manifest_ingest;
  std::optional<DatasetBundle> desk_data;     // 200/200 synthetic bundle
  std::optional<LoadedCheckpoint> assembled;  // trained adapter pair
  std::string details;                        // per-check annotation
};

json manifest_entry(int index, bool positive) {
  char id[32];
  std::snprintf(id, sizeof(id), "%s-%06d", positive ? "p" : "n", index);
  json entry = {{"videoId", id},
                {"label", positive},
                {"source", positive ? "MM-AU" : (index % 2 ? "Nexar" : "D2City")},
                {"fps", 1.0},
                {"featureDim", 4}};
  if (positive) {
    entry["annotation"] = {{"preCrashStart", 0.5}, {"crashStart", 1.0}, {"crashEnd", 2.0},
                           {"duration", 4.0},      {"tolerance", 0.5}};
    entry["descriptionText"] = "A car collides with a truck near an intersection.";
    entry["causeText"] = "The car ran a red light before the collision.";
    entry["preventionText"] =
        "The crash could have been avoided if the driver had reduced speed earlier.";
  } else {
    entry["durationSeconds"] = 4.0;
  }
  return entry;
}

// -------------------------------------------------------------------------
// dataset arithmetic: 11,322 positives + 7,063 negatives -> 18,385 samples
// and 96,184 QA pairs, in under a minute
void check_dataset_arithmetic(Context& ctx) {
  const auto start = Clock::now();
  const fs::path manifest_path = ctx.tmp / "full_manifest.jsonl";
  {
    std::vector<json> rows;
    rows.reserve(18385);
    for (int i = 0; i < 11322; ++i) rows.push_back(manifest_entry(i, true));
    for (int i = 0; i < 7063; ++i) rows.push_back(manifest_entry(i, false));
    write_jsonl_file(manifest_path.string(), rows);
  }

  IngestResult result = ingest_manifest(manifest_path.string());
  require(result.errors.empty(), "manifest ingest produced unexpected error records");
  require(result.samples.size() == 18385,
          "expected 18385 samples, got " + std::to_string(result.samples.size()));

  const std::vector<QAPair> qa = build_qa_pairs(result.samples, result.texts);
  require(qa.size() == 96184, "expected 96184 QA pairs, got " + std::to_string(qa.size()));

  const double elapsed = seconds_since(start);
  require(elapsed < 60.0, "took " + fmt(elapsed) + " s, budget is 60 s");
  ctx.manifest_ingest = std::move(result);
  ctx.details = "18385 samples, 96184 pairs in " + fmt(elapsed) + " s";
}

// -------------------------------------------------------------------------
// pre-crash IoU against an independently coded piecewise evaluator,
// bitwise over 10,000 random tuples, with all branches and both closed
// boundaries exercised
double precrash_iou_independent(double t_hat, double t_ar, double t_ai, double T, double delta) {
  if (t_hat >= 0.0 && t_hat < t_ar - delta) return 0.0;
  if (t_hat >= t_ai && t_hat < T) return 0.0;
  if (t_hat <= t_ar) return 1.0;  // inside [t_ar - delta, t_ar]
  return (t_hat - t_ai) / (t_ar - t_ai);
}

void check_precrash_iou_oracle(Context& ctx) {
  Rng rng(20260811);
  long long band_hits = 0, middle_hits = 0, zero_hits = 0;

  const auto compare_one = [&](double t_hat, double t_ar, double t_ai, double T, double delta) {
    TemporalAnnotation ann;
    ann.pre_crash_start = t_ar;
    ann.crash_start = t_ai;
    ann.crash_end = std::min(T, t_ai + 0.5);
    ann.duration = T;
    ann.tolerance = delta;
    const double got = metrics::precrash_iou(t_hat, ann);
    const double want = precrash_iou_independent(t_hat, t_ar, t_ai, T, delta);
    require(std::memcmp(&got, &want, sizeof(double)) == 0,
            "mismatch at t_hat=" + fmt(t_hat) + " t_ar=" + fmt(t_ar) + " t_ai=" + fmt(t_ai) +
                " delta=" + fmt(delta) + ": " + fmt(got) + " vs " + fmt(want));
    if (got == 1.0 && t_hat <= t_ar) ++band_hits;
    else if (got == 0.0) ++zero_hits;
    else ++middle_hits;
  };

  for (int i = 0; i < 10000; ++i) {
    const double T = rng.uniform(4.0, 60.0);
    const double t_ai = rng.uniform(0.5, T);
    const double t_ar = (i % 17 == 0) ? t_ai : rng.uniform(0.0, t_ai);  // include t_ar == t_ai
    const double delta = rng.uniform(1e-6, 2.0);
    const double t_hat = rng.uniform(0.0, T);
    compare_one(t_hat, t_ar, t_ai, T, delta);
  }

  // closed boundaries: exactly t_ar - delta scores 1, exactly t_ai scores 0
  TemporalAnnotation ann{5.0, 8.0, 9.0, 12.0, 0.5};
  require(metrics::precrash_iou(4.5, ann) == 1.0, "t_ar - delta must score 1");
  require(metrics::precrash_iou(8.0, ann) == 0.0, "t_ai must score 0");
  compare_one(4.5, 5.0, 8.0, 12.0, 0.5);
  compare_one(8.0, 5.0, 8.0, 12.0, 0.5);

  require(band_hits > 0 && middle_hits > 0 && zero_hits > 0,
          "random tuples did not cover all three branches");
  ctx.details = "10002 tuples bitwise-equal; branch hits " + std::to_string(band_hits) + "/" +
                std::to_string(middle_hits) + "/" + std::to_string(zero_hits);
}

// -------------------------------------------------------------------------
// text/threshold metric oracles

// Exhaustive LCS: every subsequence of a (as a bitmask, longest first) is
// tested for containment in b; the first hit is the LCS length.
int lcs_by_enumeration(const int* a, int la, const int* b, int lb,
                       const std::vector<std::pair<int, int>>& masks_desc) {
  for (const auto& [count, mask] : masks_desc) {
    if (count > lb) continue;
    if (count == 0) return 0;
    int bi = 0;
    int matched = 0;
    for (int i = 0; i < la && bi < lb; ++i) {
      if (!((mask >> i) & 1)) continue;
      while (bi < lb && b[bi] != a[i]) ++bi;
      if (bi == lb) break;
      ++matched;
      ++bi;
    }
    if (matched == count) return count;
  }
  return 0;
}

std::vector<std::vector<std::pair<int, int>>> subsequence_masks_by_length(int max_len) {
  std::vector<std::vector<std::pair<int, int>>> table(static_cast<std::size_t>(max_len) + 1);
  for (int len = 0; len <= max_len; ++len) {
    auto& masks = table[static_cast<std::size_t>(len)];
    for (int mask = 0; mask < (1 << len); ++mask)
      masks.emplace_back(__builtin_popcount(static_cast<unsigned>(mask)), mask);
    std::stable_sort(masks.begin(), masks.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
  }
  return table;
}

void check_metric_oracles(Context& ctx) {
  // ROUGE-L: DP equals brute-force LCS enumeration for every pair of
  // sequences of length <= 8 over a 3-token alphabet
  const std::vector<std::string> words = {"x", "y", "z"};
  std::vector<std::vector<int>> sequences;
  sequences.push_back({});
  for (int len = 1; len <= 8; ++len) {
    std::vector<int> seq(static_cast<std::size_t>(len), 0);
    while (true) {
      sequences.push_back(seq);
      int at = len - 1;
      while (at >= 0 && seq[at] == 2) seq[at--] = 0;
      if (at < 0) break;
      ++seq[at];
    }
  }
  const auto start = Clock::now();
  const auto masks = subsequence_masks_by_length(8);
  std::vector<std::vector<std::string>> as_tokens(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i)
    for (int v : sequences[i]) as_tokens[i].push_back(words[static_cast<std::size_t>(v)]);

  const long long total = static_cast<long long>(sequences.size());
  long long mismatches = 0;
#pragma omp parallel for schedule(dynamic, 16) reduction(+ : mismatches)
  for (long long ai = 0; ai < total; ++ai) {
    for (long long bi = ai; bi < total; ++bi) {  // the LCS is symmetric
      const auto& a = sequences[ai];
      const auto& b = sequences[bi];
      const int lcs = lcs_by_enumeration(a.data(), static_cast<int>(a.size()), b.data(),
                                         static_cast<int>(b.size()), masks[a.size()]);
      double expected;
      if (a.empty() && b.empty()) expected = 1.0;
      else if (a.empty() || b.empty() || lcs == 0) expected = 0.0;
      else {
        const double p = static_cast<double>(lcs) / a.size();
        const double rec = static_cast<double>(lcs) / b.size();
        expected = 2.0 * p * rec / (p + rec);
      }
      if (metrics::rouge_l_tokens(as_tokens[ai], as_tokens[bi]) != expected) ++mismatches;
    }
  }
  require(mismatches == 0, std::to_string(mismatches) + " ROUGE-L disagreements");
  const double rouge_seconds = seconds_since(start);

  // BLEU identity
  Rng rng(44);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> sentence(static_cast<std::size_t>(rng.uniform_int(4, 20)));
    for (auto& w : sentence) w = words[static_cast<std::size_t>(rng.uniform_int(0, 2))];
    const double value = metrics::bleu_tokens(sentence, sentence);
    require(std::abs(value - 1.0) <= 1e-9, "BLEU identity violated: " + fmt(value));
  }

  // AP monotone non-increasing in the threshold over 1,000 random score sets
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> ious(static_cast<std::size_t>(rng.uniform_int(1, 50)));
    for (double& v : ious) v = rng.uniform();
    const double a30 = metrics::average_precision_at(ious, 0.30);
    const double a50 = metrics::average_precision_at(ious, 0.50);
    const double a70 = metrics::average_precision_at(ious, 0.70);
    require(a30 >= a50 && a50 >= a70, "AP not monotone");
  }
  ctx.details = "ROUGE-L exhaustive over " + std::to_string(total) + " sequences in " +
                fmt(rouge_seconds) + " s; BLEU and AP oracles clean";
}

// -------------------------------------------------------------------------
// adapter/backbone invariants
VideoSample synthetic_probe_video(std::uint64_t seed) {
  VideoSample s;
  s.video_id = "probe";
  s.fps = 4.0;
  s.frames.frame_count = 32;
  s.frames.dim = 32;
  s.frames.data.resize(32 * 32);
  Rng rng(seed);
  for (double& v : s.frames.data) v = rng.normal(0.0, 0.4);
  s.label = true;
  s.annotation = TemporalAnnotation{1.5, 2.5, 5.0, 8.0, 0.5};
  return s;
}

int rank_by_elimination(std::vector<double> m, int rows, int cols) {
  int rank = 0;
  for (int col = 0; col < cols && rank < rows; ++col) {
    int pivot = -1;
    double best = 1e-9;
    for (int row = rank; row < rows; ++row) {
      const double v = std::abs(m[static_cast<std::size_t>(row) * cols + col]);
      if (v > best) {
        best = v;
        pivot = row;
      }
    }
    if (pivot < 0) continue;
    for (int c = 0; c < cols; ++c)
      std::swap(m[static_cast<std::size_t>(rank) * cols + c],
                m[static_cast<std::size_t>(pivot) * cols + c]);
    const double lead = m[static_cast<std::size_t>(rank) * cols + col];
    for (int row = rank + 1; row < rows; ++row) {
      const double f = m[static_cast<std::size_t>(row) * cols + col] / lead;
      for (int c = col; c < cols; ++c)
        m[static_cast<std::size_t>(row) * cols + c] -=
            f * m[static_cast<std::size_t>(rank) * cols + c];
    }
    ++rank;
  }
  return rank;
}

DatasetBundle small_bundle(int pos, int neg, std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.num_positive = pos;
  cfg.num_negative = neg;
  cfg.seed = seed;
  const SyntheticResult synth = generate_synthetic(cfg);
  DatasetBundle data;
  data.samples = synth.samples;
  data.texts = synth.texts;
  data.qa = build_qa_pairs(data.samples, data.texts);
  data.split = stratified_split(data.samples, SplitSpec{}).index;
  return data;
}

void check_adapter_invariants(Context& ctx) {
  BackboneConfig cfg;  // default width: d_l = 64
  cfg.init_seed = 31337;
  require(cfg.d_l == 64, "default language width changed");
  const CrashChatModel model = CrashChatModel::init(cfg);
  const VideoSample probe = synthetic_probe_video(1);

  // (i) zero-initialized B: adapted forward equals the frozen forward
  {
    const VideoTokens zv = model.encode_video(probe);
    const MultimodalSequence seq =
        model.assemble(model.project(zv, TaskGroup::Lc), zv.count,
                       Tokenizer::instance().encode(text::question_for(TaskId::Recognition)));
    const std::vector<double> base_logits = model.forward_adapted(seq, TaskGroup::Lc);

    CrashChatModel scrambled = model;
    Rng rng(2);
    for (const auto& slot : scrambled.group_layout.slot)
      for (int i = 0; i < cfg.rank * cfg.d_l; ++i)
        scrambled.params_of(TaskGroup::Lc)[slot.a + i] = rng.normal(0.0, 0.7);
    const std::vector<double> scrambled_logits = scrambled.forward_adapted(seq, TaskGroup::Lc);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < base_logits.size(); ++i)
      max_diff = std::max(max_diff, std::abs(base_logits[i] - scrambled_logits[i]));
    require(max_diff < 1e-6, "zero-B forward deviates by " + fmt(max_diff));
  }

  // (ii) a full training run leaves the base weights byte-identical
  {
    const DatasetBundle data = small_bundle(10, 10, 9);
    TrainConfig tc;
    tc.regime = Regime::heterogeneous();
    tc.epochs = 2;
    tc.seed = 3;
    const TrainOutcome outcome = train_regime(model, tc, data);
    require(outcome.model.base.size() == model.base.size() &&
                std::memcmp(outcome.model.base.data(), model.base.data(),
                            model.base.size() * sizeof(double)) == 0,
            "base weights changed during training");
  }

  // (iii) analytic gradients match central finite differences at d_l = 64
  {
    CrashChatModel grad_model = model;
    Rng rng(5);
    auto& params = grad_model.params_of(TaskGroup::Lc);
    for (const auto& slot : grad_model.group_layout.slot)
      for (int i = 0; i < cfg.d_l * cfg.rank; ++i) params[slot.b + i] = rng.normal(0.0, 0.05);

    const std::string question = text::question_for(TaskId::Description);
    const std::string answer = "A car collides with a truck near an intersection.";
    std::vector<double> grads(grad_model.group_layout.total, 0.0);
    grad_model.loss_and_gradients(probe, question, answer, TaskGroup::Lc, &grads, nullptr);

    std::vector<std::size_t> probes = {grad_model.group_layout.proj_w + 17,
                                       grad_model.group_layout.proj_b + 2};
    for (const std::size_t s : {std::size_t{0}, std::size_t{7}, std::size_t{15}}) {
      probes.push_back(grad_model.group_layout.slot[s].a + 33);
      probes.push_back(grad_model.group_layout.slot[s].b + 75);
    }
    double worst = 0.0;
    for (const std::size_t idx : probes) {
      const double keep = params[idx];
      const double h = 1e-5 * (1.0 + std::abs(keep));
      params[idx] = keep + h;
      const double up =
          grad_model.loss_and_gradients(probe, question, answer, TaskGroup::Lc, nullptr, nullptr);
      params[idx] = keep - h;
      const double down =
          grad_model.loss_and_gradients(probe, question, answer, TaskGroup::Lc, nullptr, nullptr);
      params[idx] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double rel =
          std::abs(grads[idx] - fd) / std::max({std::abs(grads[idx]), std::abs(fd), 1e-8});
      worst = std::max(worst, rel);
    }
    require(worst < 1e-4, "finite-difference relative error " + fmt(worst));
    ctx.details = "gradcheck worst rel err " + fmt(worst);
  }

  // (iv) the effective update B*A has rank at most r on every adapted layer
  {
    CrashChatModel ranked = model;
    Rng rng(6);
    auto& params = ranked.params_of(TaskGroup::Pc);
    for (const auto& slot : ranked.group_layout.slot) {
      for (int i = 0; i < cfg.rank * cfg.d_l; ++i) params[slot.a + i] = rng.normal();
      for (int i = 0; i < cfg.d_l * cfg.rank; ++i) params[slot.b + i] = rng.normal();
    }
    for (const auto& slot : ranked.group_layout.slot) {
      std::vector<double> update(static_cast<std::size_t>(cfg.d_l) * cfg.d_l, 0.0);
      for (int row = 0; row < cfg.d_l; ++row)
        for (int col = 0; col < cfg.d_l; ++col) {
          double acc = 0.0;
          for (int i = 0; i < cfg.rank; ++i)
            acc += params[slot.b + static_cast<std::size_t>(row) * cfg.rank + i] *
                   params[slot.a + static_cast<std::size_t>(i) * cfg.d_l + col];
          update[static_cast<std::size_t>(row) * cfg.d_l + col] = acc;
        }
      const int r = rank_by_elimination(update, cfg.d_l, cfg.d_l);
      require(r <= cfg.rank, "update rank " + std::to_string(r) + " exceeds " +
                                 std::to_string(cfg.rank));
    }
  }
}

// -------------------------------------------------------------------------
// desk-scale learnability on the default synthetic dataset
void check_synthetic_learnability(Context& ctx) {
  const auto start = Clock::now();

  SyntheticConfig synth;  // 200 positive / 200 negative defaults
  synth.seed = 11;
  const SyntheticResult generated = generate_synthetic(synth);
  DatasetBundle data;
  data.samples = generated.samples;
  data.texts = generated.texts;
  data.qa = build_qa_pairs(data.samples, data.texts);
  SplitSpec split_spec;
  split_spec.seed = 5;
  data.split = stratified_split(data.samples, split_spec).index;

  BackboneConfig model_cfg;
  model_cfg.init_seed = 2026;
  const CrashChatModel init_model = CrashChatModel::init(model_cfg);

  TrainConfig hetero_cfg;
  hetero_cfg.regime = Regime::heterogeneous();
  hetero_cfg.epochs = 8;
  hetero_cfg.learning_rate = 4e-3;
  hetero_cfg.seed = 7;
  const TrainOutcome hetero = train_regime(init_model, hetero_cfg, data);

  TrainConfig pc_cfg;
  pc_cfg.regime = Regime::homogeneous(TaskGroup::Pc);
  pc_cfg.epochs = 20;
  pc_cfg.learning_rate = 5e-3;
  pc_cfg.seed = 7;
  const TrainOutcome homo_pc = train_regime(init_model, pc_cfg, data);

  const fs::path hetero_path = ctx.tmp / "desk_hetero.ckpt";
  const fs::path pc_path = ctx.tmp / "desk_homo_pc.ckpt";
  const fs::path assembled_path = ctx.tmp / "desk_crashchat.ckpt";
  save_checkpoint(hetero.model, {"heterogeneous", "lc", "abcdef"}, hetero_path.string());
  save_checkpoint(homo_pc.model, {"homogeneous", "pc", "ef"}, pc_path.string());
  assemble_crashchat(hetero_path.string(), pc_path.string(), assembled_path.string());
  LoadedCheckpoint assembled = load_checkpoint(assembled_path.string());

  const std::vector<PredictionRecord> preds = run_inference(
      assembled.model, data, Subset::Test, {TaskId::Recognition, TaskId::CrashLocalization});
  const metrics::MetricsReport report = metrics::evaluate_run(preds, data, metrics::EvalConfig{});

  const double f1 = report.recognition.report.positive.f1;
  const double miou = report.crash_localization.miou;
  const double elapsed = seconds_since(start);

  ctx.desk_data = std::move(data);
  ctx.assembled = std::move(assembled);
  ctx.details = "recognition F1 " + fmt(f1) + ", crash-localization mIoU " + fmt(miou) + ", " +
                fmt(elapsed / 60.0) + " min";

  require(f1 >= 0.95, "recognition F1 " + fmt(f1) + " below 0.95");
  require(miou >= 0.6, "crash-localization mIoU " + fmt(miou) + " below 0.6");
  require(elapsed <= 20.0 * 60.0, "took " + fmt(elapsed / 60.0) + " min, budget is 20");
}

// -------------------------------------------------------------------------
// gating contract: Pc invocations == localization queries whose stage-1
// recognition said yes; an all-negative split drives the count to zero
void check_gating_contract(Context& ctx) {
  require(ctx.desk_data.has_value() && ctx.assembled.has_value(),
          "learnability artifacts unavailable");
  const DatasetBundle& data = *ctx.desk_data;
  const CrashChatModel& model = ctx.assembled->model;

  InvocationCounters counters;
  const std::vector<PredictionRecord> preds =
      run_inference(model, data, Subset::Test,
                    {TaskId::Recognition, TaskId::CrashLocalization,
                     TaskId::PreCrashLocalization},
                    &counters);

  long long positives_detected = 0;
  for (const auto& rec : preds)
    if (rec.task == TaskId::Recognition && rec.parsed.kind == ParsedAnswer::Kind::Boolean &&
        rec.parsed.bool_value)
      ++positives_detected;

  // two localization queries per video, each gated by the same verdict
  const long long expected = 2 * positives_detected;
  require(counters.pc_stage2 == expected,
          "Pc invocations " + std::to_string(counters.pc_stage2) + " != expected " +
              std::to_string(expected));

  const long long queries = static_cast<long long>(data.samples_in(Subset::Test).size()) * 3;
  require(counters.lc_stage1 == queries, "stage-1 count " + std::to_string(counters.lc_stage1) +
                                             " != one per query " + std::to_string(queries));

  // all-negative split
  SyntheticConfig neg_cfg;
  neg_cfg.num_positive = 0;
  neg_cfg.num_negative = 30;
  neg_cfg.seed = 77;
  const SyntheticResult negatives = generate_synthetic(neg_cfg);
  DatasetBundle neg_data;
  neg_data.samples = negatives.samples;
  for (const auto& s : neg_data.samples) neg_data.split[s.video_id] = Subset::Test;

  InvocationCounters neg_counters;
  run_inference(model, neg_data, Subset::Test,
                {TaskId::CrashLocalization, TaskId::PreCrashLocalization}, &neg_counters);
  require(neg_counters.pc_stage2 == 0,
          "all-negative split triggered " + std::to_string(neg_counters.pc_stage2) +
              " Pc invocations");
  ctx.details = "pc=" + std::to_string(counters.pc_stage2) + " == 2 x " +
                std::to_string(positives_detected) + " detections; all-negative split pc=0";
}

// -------------------------------------------------------------------------
// regime parameter discipline
void check_regime_discipline(Context& ctx) {
  BackboneConfig cfg;
  cfg.init_seed = 515;
  const CrashChatModel init_model = CrashChatModel::init(cfg);
  const DatasetBundle data = small_bundle(10, 10, 21);

  auto block_equal = [](const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  };

  TrainConfig hetero_cfg;
  hetero_cfg.regime = Regime::heterogeneous();
  hetero_cfg.epochs = 2;
  const TrainOutcome hetero = train_regime(init_model, hetero_cfg, data);
  require(block_equal(hetero.model.params_of(TaskGroup::Pc), init_model.params_of(TaskGroup::Pc)),
          "heterogeneous run touched the Pc block");
  require(!block_equal(hetero.model.params_of(TaskGroup::Lc), init_model.params_of(TaskGroup::Lc)),
          "heterogeneous run did not train the Lc block");

  TrainConfig ind_cfg;
  ind_cfg.regime = Regime::independent(TaskId::PreCrashLocalization);
  ind_cfg.epochs = 2;
  const TrainOutcome independent = train_regime(init_model, ind_cfg, data);
  require(block_equal(independent.model.params_of(TaskGroup::Lc),
                      init_model.params_of(TaskGroup::Lc)),
          "independent task-f run touched the Lc block");
  require(!block_equal(independent.model.params_of(TaskGroup::Pc),
                       init_model.params_of(TaskGroup::Pc)),
          "independent task-f run did not train the Pc block");
  ctx.details = "Pc frozen under heterogeneous; Lc frozen under independent-f";
}

// -------------------------------------------------------------------------
// run-level determinism: identical config and seed, byte-identical metrics
void check_run_determinism(Context& ctx) {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  cfg.seed = 909;
  cfg.out_dir = (ctx.tmp / "det_config_dir").string();
  cfg.synthetic.num_positive = 12;
  cfg.synthetic.num_negative = 12;
  cfg.synthetic.feature_dim = 16;
  cfg.synthetic.seed = 909;
  cfg.model.input_feature_dim = 16;
  cfg.model.d_v = 16;
  cfg.model.d_l = 32;
  cfg.model.layers = 2;
  cfg.model.heads = 2;
  cfg.model.mlp_hidden = 64;
  cfg.model.max_seq_len = 64;
  cfg.model.rank = 4;
  cfg.model.init_seed = 909;
  cfg.regimes = {"homogeneous", "heterogeneous"};
  cfg.train_defaults.epochs = 1;

  RunOptions a, b;
  a.out_dir_override = (ctx.tmp / "det_run_a").string();
  b.out_dir_override = (ctx.tmp / "det_run_b").string();
  const RunResult ra = run_experiment(cfg, a);
  require(ra.success, "first run failed at " + ra.failed_stage + ": " + ra.message);
  const RunResult rb = run_experiment(cfg, b);
  require(rb.success, "second run failed at " + rb.failed_stage + ": " + rb.message);

  int compared = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(*a.out_dir_override) / "metrics")) {
    if (entry.path().extension() != ".json") continue;
    const std::string name = entry.path().filename().string();
    const std::string lhs = read_text_file(entry.path().string());
    const std::string rhs =
        read_text_file((fs::path(*b.out_dir_override) / "metrics" / name).string());
    require(lhs == rhs, "metrics differ between runs: " + name);
    ++compared;
  }
  require(compared >= 3, "too few metrics files compared");
  ctx.details = std::to_string(compared) + " metrics files byte-identical";
}

// -------------------------------------------------------------------------
// stratified split balance on the full-size manifest
void check_stratified_split(Context& ctx) {
  require(ctx.manifest_ingest.has_value(), "manifest artifacts unavailable");
  const auto& samples = ctx.manifest_ingest->samples;

  SplitSpec spec;
  spec.seed = 5;
  const SplitResult split = stratified_split(samples, spec);
  require(split.index.size() == samples.size(), "split is not a partition");

  const double global_fraction = 11322.0 / 18385.0;
  std::ostringstream detail;
  for (const Subset subset : {Subset::Train, Subset::Val, Subset::Test}) {
    long long pos = 0, total = 0;
    for (const auto& s : samples) {
      if (split.index.at(s.video_id) != subset) continue;
      ++total;
      if (s.label) ++pos;
    }
    require(total > 0, "empty subset");
    const double fraction = static_cast<double>(pos) / total;
    require(std::abs(fraction - global_fraction) <= 1.0 / total,
            subset_name(subset) + " positive fraction " + fmt(fraction) +
                " deviates beyond one sample from " + fmt(global_fraction));
    detail << subset_name(subset) << "=" << total << " (" << fmt(fraction) << ") ";
  }
  ctx.details = detail.str() + "| global " + fmt(global_fraction);
}

}  // namespace

int main() {
  Context ctx;
  ctx.tmp = fs::path("acceptance_tmp");
  fs::remove_all(ctx.tmp);
  fs::create_directories(ctx.tmp);

  const std::vector<std::pair<std::string, std::function<void(Context&)>>> checks = {
      {"dataset_arithmetic", check_dataset_arithmetic},
      {"precrash_iou_oracle", check_precrash_iou_oracle},
      {"metric_oracles", check_metric_oracles},
      {"adapter_invariants", check_adapter_invariants},
      {"synthetic_learnability", check_synthetic_learnability},
      {"gating_contract", check_gating_contract},
      {"regime_parameter_discipline", check_regime_discipline},
      {"run_determinism", check_run_determinism},
      {"stratified_split_balance", check_stratified_split},
  };

  int failures = 0;
  for (const auto& [name, run] : checks) {
    const auto start = Clock::now();
    ctx.details.clear();
    try {
      run(ctx);
      std::printf("[PASS] %-28s %7.1fs  %s\n", name.c_str(), seconds_since(start),
                  ctx.details.c_str());
    } catch (const std::exception& e) {
      ++failures;
      std::printf("[FAIL] %-28s %7.1fs  %s\n", name.c_str(), seconds_since(start), e.what());
    }
    std::fflush(stdout);
  }

  fs::remove_all(ctx.tmp);
  if (failures > 0) {
    std::printf("%d of %zu acceptance checks failed\n", failures, checks.size());
    return 1;
  }
  std::printf("all %zu acceptance checks passed\n", checks.size());
  return 0;
}
