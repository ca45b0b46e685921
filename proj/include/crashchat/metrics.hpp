#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crashchat/datasetkit.hpp"
#include "crashchat/schema.hpp"

namespace crashchat::metrics {

struct ClassMetrics {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  bool zero_division = false;  // some component defaulted to 0
  long long tp = 0, fp = 0, fn = 0;
};

struct ClassificationReport {
  ClassMetrics positive;
  ClassMetrics negative;
  long long missing = 0;  // labeled videos without a prediction, scored as negative
};

ClassificationReport classification_metrics(const std::vector<PredictionRecord>& preds,
                                            const std::map<std::string, bool>& labels);

double interval_iou(const TimeInterval& pred, const TimeInterval& truth);

// Piecewise pre-crash IoU with tolerance delta taken from the annotation:
// 1 on [t_ar - delta, t_ar]; (t_hat - t_ai)/(t_ar - t_ai) on (t_ar, t_ai);
// 0 elsewhere.
double precrash_iou(double t_hat, const TemporalAnnotation& ann);

// Fraction of per-video IoUs at or above tau. Throws on an empty set.
double average_precision_at(const std::vector<double>& ious, double tau);

// Smoothed BLEU-4: uniform weights over the usable n-gram orders, brevity
// penalty, epsilon for zero n-gram matches.
double bleu_tokens(const std::vector<std::string>& candidate,
                   const std::vector<std::string>& reference);
double bleu(const std::string& candidate, const std::string& reference);

// ROUGE-L F-measure (beta = 1) via longest common subsequence.
double rouge_l_tokens(const std::vector<std::string>& candidate,
                      const std::vector<std::string>& reference);
double rouge_l(const std::string& candidate, const std::string& reference);

// Pluggable sentence-embedding slot; no default model ships.
struct EmbeddingProvider {
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<double> embed(const std::string& text) = 0;
};

// Cosine similarity of the two embeddings mapped onto [0, 1].
double embedding_score(const std::string& candidate, const std::string& reference,
                       EmbeddingProvider& provider);

struct EvalConfig {
  Subset subset = Subset::Test;
  std::optional<double> delta_override;  // pre-crash tolerance, else per-annotation
  std::vector<double> ap_thresholds = {0.3, 0.5, 0.7};
  EmbeddingProvider* embedding = nullptr;
};

struct RecognitionSection {
  bool evaluated = false;
  ClassificationReport report;
};

struct TextSection {
  bool evaluated = false;
  double bleu = 0.0;
  double rouge_l = 0.0;
  std::optional<double> bert;
  long long count = 0;
  long long missing = 0;
};

struct TemporalSection {
  bool evaluated = false;
  std::map<std::string, double> per_video;
  double miou = 0.0;
  std::map<std::string, double> ap;  // "AP@30" etc.
  long long parse_failures = 0;
  long long missing = 0;
};

struct MetricsReport {
  RecognitionSection recognition;
  std::map<char, TextSection> text;  // tasks b, c, d
  TemporalSection crash_localization;
  TemporalSection precrash_localization;
  long long prediction_count = 0;
  std::string config_hash;

  json to_json() const;
  std::string to_table() const;
};

// Aggregates one prediction file against the dataset's reference answers
// and annotations. Positives without a usable localization answer score
// IoU 0; labeled videos without a recognition answer count as negative.
MetricsReport evaluate_run(const std::vector<PredictionRecord>& preds, const DatasetBundle& data,
                           const EvalConfig& cfg);

std::string ap_key(double tau);

}  // namespace crashchat::metrics
