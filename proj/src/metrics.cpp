#include "crashchat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "crashchat/tokenizer.hpp"

namespace crashchat::metrics {

namespace {
constexpr double kBleuEpsilon = 1e-9;
}

ClassificationReport classification_metrics(const std::vector<PredictionRecord>& preds,
                                            const std::map<std::string, bool>& labels) {
  std::map<std::string, std::optional<bool>> predicted;
  for (const auto& [id, label] : labels) {
    (void)label;
    predicted[id] = std::nullopt;
  }
  for (const auto& rec : preds) {
    if (rec.task != TaskId::Recognition) continue;
    auto it = predicted.find(rec.video_id);
    if (it == predicted.end()) continue;
    if (rec.parsed.kind == ParsedAnswer::Kind::Boolean) it->second = rec.parsed.bool_value;
  }

  ClassificationReport report;
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& [id, label] : labels) {
    bool pred = false;  // missing or unparseable counts as the negative class
    const auto& slot = predicted.at(id);
    if (slot.has_value()) {
      pred = *slot;
    } else {
      ++report.missing;
    }
    if (pred && label) ++tp;
    else if (pred && !label) ++fp;
    else if (!pred && label) ++fn;
    else ++tn;
  }

  auto fill = [](ClassMetrics& m, long long tp_, long long fp_, long long fn_) {
    m.tp = tp_;
    m.fp = fp_;
    m.fn = fn_;
    if (tp_ + fn_ > 0) {
      m.recall = static_cast<double>(tp_) / (tp_ + fn_);
    } else {
      m.zero_division = true;
    }
    if (tp_ + fp_ > 0) {
      m.precision = static_cast<double>(tp_) / (tp_ + fp_);
    } else {
      m.zero_division = true;
    }
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.zero_division = true;
    }
  };
  fill(report.positive, tp, fp, fn);
  fill(report.negative, tn, fn, fp);
  return report;
}

double interval_iou(const TimeInterval& pred, const TimeInterval& truth) {
  const double inter =
      std::max(0.0, std::min(pred.end, truth.end) - std::max(pred.start, truth.start));
  const double uni = (pred.end - pred.start) + (truth.end - truth.start) - inter;
  if (uni <= 0.0) {
    // both degenerate: match only the identical point
    return (truth.start == truth.end && pred.start == truth.start && pred.end == truth.end) ? 1.0
                                                                                            : 0.0;
  }
  return inter / uni;
}

double precrash_iou(double t_hat, const TemporalAnnotation& ann) {
  const double t_ar = ann.pre_crash_start;
  const double t_ai = ann.crash_start;
  const double delta = ann.tolerance;
  if (t_hat >= t_ar - delta && t_hat <= t_ar) return 1.0;
  if (t_hat > t_ar && t_hat < t_ai) return (t_hat - t_ai) / (t_ar - t_ai);
  return 0.0;
}

double average_precision_at(const std::vector<double>& ious, double tau) {
  if (ious.empty()) throw std::runtime_error("average_precision_at: empty IoU set");
  long long hits = 0;
  for (double iou : ious)
    if (iou >= tau) ++hits;
  return static_cast<double>(hits) / ious.size();
}

double bleu_tokens(const std::vector<std::string>& candidate,
                   const std::vector<std::string>& reference) {
  const int c = static_cast<int>(candidate.size());
  const int r = static_cast<int>(reference.size());
  if (c == 0) return 0.0;

  double log_sum = 0.0;
  int used_orders = 0;
  for (int n = 1; n <= 4; ++n) {
    const int possible = c - n + 1;
    if (possible <= 0 || r - n + 1 <= 0) continue;
    std::map<std::vector<std::string>, int> ref_counts;
    for (int i = 0; i + n <= r; ++i)
      ++ref_counts[std::vector<std::string>(reference.begin() + i, reference.begin() + i + n)];
    std::map<std::vector<std::string>, int> cand_counts;
    for (int i = 0; i + n <= c; ++i)
      ++cand_counts[std::vector<std::string>(candidate.begin() + i, candidate.begin() + i + n)];
    long long matches = 0;
    for (const auto& [gram, count] : cand_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matches += std::min(count, it->second);
    }
    const double p =
        matches > 0 ? static_cast<double>(matches) / possible : kBleuEpsilon / possible;
    log_sum += std::log(p);
    ++used_orders;
  }
  if (used_orders == 0) return 0.0;

  const double brevity = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / c);
  return brevity * std::exp(log_sum / used_orders);
}

double bleu(const std::string& candidate, const std::string& reference) {
  return bleu_tokens(Tokenizer::split_text(candidate), Tokenizer::split_text(reference));
}

double rouge_l_tokens(const std::vector<std::string>& candidate,
                      const std::vector<std::string>& reference) {
  const std::size_t c = candidate.size();
  const std::size_t r = reference.size();
  if (c == 0 && r == 0) return 1.0;
  if (c == 0 || r == 0) return 0.0;

  std::vector<int> prev(r + 1, 0), cur(r + 1, 0);
  for (std::size_t i = 1; i <= c; ++i) {
    for (std::size_t j = 1; j <= r; ++j) {
      if (candidate[i - 1] == reference[j - 1]) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  const double lcs = prev[r];
  if (lcs == 0.0) return 0.0;
  const double p = lcs / c;
  const double rec = lcs / r;
  return 2.0 * p * rec / (p + rec);
}

double rouge_l(const std::string& candidate, const std::string& reference) {
  return rouge_l_tokens(Tokenizer::split_text(candidate), Tokenizer::split_text(reference));
}

double embedding_score(const std::string& candidate, const std::string& reference,
                       EmbeddingProvider& provider) {
  const std::vector<double> a = provider.embed(candidate);
  const std::vector<double> b = provider.embed(reference);
  if (a.size() != b.size() || a.empty())
    throw std::runtime_error("embedding provider returned mismatched vectors");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double cosine = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(0.5 * (1.0 + cosine), 0.0, 1.0);
}

std::string ap_key(double tau) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "AP@%d", static_cast<int>(std::lround(tau * 100)));
  return std::string(buf);
}

MetricsReport evaluate_run(const std::vector<PredictionRecord>& preds, const DatasetBundle& data,
                           const EvalConfig& cfg) {
  MetricsReport report;
  report.prediction_count = static_cast<long long>(preds.size());

  const std::vector<const VideoSample*> subset_samples = data.samples_in(cfg.subset);

  // aggregation is order-invariant: predictions index by (task, video)
  std::map<std::pair<char, std::string>, const PredictionRecord*> by_key;
  for (const auto& rec : preds) {
    const auto key = std::make_pair(task_code(rec.task), rec.video_id);
    if (!by_key.count(key)) by_key[key] = &rec;
  }
  auto find_pred = [&by_key](TaskId task, const std::string& id) -> const PredictionRecord* {
    auto it = by_key.find(std::make_pair(task_code(task), id));
    return it == by_key.end() ? nullptr : it->second;
  };

  std::map<std::pair<char, std::string>, const QAPair*> refs;
  for (const auto& qa : data.qa) refs[{task_code(qa.task), qa.video_id}] = &qa;

  // recognition
  {
    std::map<std::string, bool> labels;
    std::vector<PredictionRecord> rec_preds;
    bool any = false;
    for (const VideoSample* s : subset_samples) {
      labels[s->video_id] = s->label;
      if (const PredictionRecord* p = find_pred(TaskId::Recognition, s->video_id)) {
        rec_preds.push_back(*p);
        any = true;
      }
    }
    if (any && !labels.empty()) {
      report.recognition.evaluated = true;
      report.recognition.report = classification_metrics(rec_preds, labels);
    }
  }

  // description / causal / prevention
  for (TaskId task :
       {TaskId::Description, TaskId::CausalReasoning, TaskId::PreventionReasoning}) {
    TextSection section;
    double bleu_sum = 0.0, rouge_sum = 0.0, bert_sum = 0.0;
    for (const VideoSample* s : subset_samples) {
      auto ref_it = refs.find({task_code(task), s->video_id});
      if (ref_it == refs.end()) continue;
      const PredictionRecord* p = find_pred(task, s->video_id);
      if (!p) {
        ++section.missing;
        ++section.count;  // missing answers score zero
        continue;
      }
      const std::string& reference = ref_it->second->reference_answer;
      bleu_sum += bleu(p->raw_text, reference);
      rouge_sum += rouge_l(p->raw_text, reference);
      if (cfg.embedding) bert_sum += embedding_score(p->raw_text, reference, *cfg.embedding);
      ++section.count;
    }
    if (section.count > section.missing) {
      section.evaluated = true;
      section.bleu = bleu_sum / section.count;
      section.rouge_l = rouge_sum / section.count;
      if (cfg.embedding) section.bert = bert_sum / section.count;
    }
    report.text[task_code(task)] = section;
  }

  // temporal grounding over the positive videos of the subset
  for (TaskId task : {TaskId::CrashLocalization, TaskId::PreCrashLocalization}) {
    TemporalSection section;
    std::vector<double> ious;
    bool any_pred = false;
    for (const VideoSample* s : subset_samples) {
      if (!s->label || !s->annotation) continue;
      TemporalAnnotation ann = *s->annotation;
      if (cfg.delta_override) ann.tolerance = *cfg.delta_override;

      const PredictionRecord* p = find_pred(task, s->video_id);
      double iou = 0.0;
      if (!p) {
        ++section.missing;
      } else {
        any_pred = true;
        if (task == TaskId::CrashLocalization &&
            p->parsed.kind == ParsedAnswer::Kind::Interval) {
          iou = interval_iou(p->parsed.interval, {ann.crash_start, ann.crash_end});
        } else if (task == TaskId::PreCrashLocalization &&
                   p->parsed.kind == ParsedAnswer::Kind::Point) {
          iou = precrash_iou(p->parsed.point, ann);
        } else {
          ++section.parse_failures;  // gated-out or unparseable answers score zero
        }
      }
      section.per_video[s->video_id] = iou;
      ious.push_back(iou);
    }
    if (any_pred && !ious.empty()) {
      section.evaluated = true;
      double sum = 0.0;
      for (double v : ious) sum += v;
      section.miou = sum / ious.size();
      for (double tau : cfg.ap_thresholds) section.ap[ap_key(tau)] = average_precision_at(ious, tau);
    }
    (task == TaskId::CrashLocalization ? report.crash_localization
                                       : report.precrash_localization) = section;
  }

  return report;
}

json MetricsReport::to_json() const {
  json tasks = json::object();

  json rec = json::object();
  rec["evaluated"] = recognition.evaluated;
  rec["Rec"] = recognition.evaluated ? json(recognition.report.positive.recall) : json();
  rec["Pre"] = recognition.evaluated ? json(recognition.report.positive.precision) : json();
  rec["F1"] = recognition.evaluated ? json(recognition.report.positive.f1) : json();
  if (recognition.evaluated) {
    rec["positiveClass"] = {{"recall", recognition.report.positive.recall},
                            {"precision", recognition.report.positive.precision},
                            {"f1", recognition.report.positive.f1},
                            {"tp", recognition.report.positive.tp},
                            {"fp", recognition.report.positive.fp},
                            {"fn", recognition.report.positive.fn},
                            {"zeroDivision", recognition.report.positive.zero_division}};
    rec["negativeClass"] = {{"recall", recognition.report.negative.recall},
                            {"precision", recognition.report.negative.precision},
                            {"f1", recognition.report.negative.f1},
                            {"zeroDivision", recognition.report.negative.zero_division}};
    rec["missingPredictions"] = recognition.report.missing;
  }
  tasks["recognition"] = rec;

  const std::map<char, std::string> text_names = {{'b', "description"},
                                                  {'c', "causalReasoning"},
                                                  {'d', "preventionReasoning"}};
  for (const auto& [code, name] : text_names) {
    json section = json::object();
    auto it = text.find(code);
    const bool evaluated = it != text.end() && it->second.evaluated;
    section["evaluated"] = evaluated;
    section["BLEU"] = evaluated ? json(it->second.bleu) : json();
    section["ROUGE"] = evaluated ? json(it->second.rouge_l) : json();
    section["BERT"] = (evaluated && it->second.bert) ? json(*it->second.bert) : json();
    if (evaluated) {
      section["count"] = it->second.count;
      section["missingPredictions"] = it->second.missing;
    }
    tasks[name] = section;
  }

  auto temporal_json = [](const TemporalSection& section) {
    json out = json::object();
    out["evaluated"] = section.evaluated;
    out["mIoU"] = section.evaluated ? json(section.miou) : json();
    for (const auto& [key, value] : section.ap) out[key] = value;
    if (!section.evaluated)
      for (const auto& key : {"AP@30", "AP@50", "AP@70"})
        if (!out.contains(key)) out[key] = json();
    if (section.evaluated) {
      out["parseFailures"] = section.parse_failures;
      out["missingPredictions"] = section.missing;
      out["videos"] = section.per_video.size();
    }
    return out;
  };
  tasks["crashLocalization"] = temporal_json(crash_localization);
  tasks["preCrashLocalization"] = temporal_json(precrash_localization);

  json out = {{"tasks", tasks}, {"predictionCount", prediction_count}};
  out["configHash"] = config_hash;
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return std::string(buf);
}

void table_row(std::ostringstream& out, const std::string& name, const json& value) {
  out << "  " << name;
  for (std::size_t i = name.size(); i < 8; ++i) out << ' ';
  if (value.is_null()) {
    out << "      -\n";
  } else {
    out << fmt(value.get<double>()) << "\n";
  }
}

}  // namespace

std::string MetricsReport::to_table() const {
  const json j = to_json();
  const json& tasks = j.at("tasks");
  std::ostringstream out;
  const std::vector<std::pair<std::string, std::vector<std::string>>> sections = {
      {"Crash Recognition", {"Rec", "Pre", "F1"}},
      {"Crash Description", {"BLEU", "ROUGE", "BERT"}},
      {"Causal Reasoning", {"BLEU", "ROUGE", "BERT"}},
      {"Prevention Reasoning", {"BLEU", "ROUGE", "BERT"}},
      {"Crash Localization", {"mIoU", "AP@30", "AP@50", "AP@70"}},
      {"Pre-crash Localization", {"mIoU", "AP@30", "AP@50", "AP@70"}},
  };
  const std::vector<std::string> keys = {"recognition",         "description",
                                         "causalReasoning",     "preventionReasoning",
                                         "crashLocalization",   "preCrashLocalization"};
  for (std::size_t s = 0; s < sections.size(); ++s) {
    out << sections[s].first << "\n";
    const json& section = tasks.at(keys[s]);
    if (!section.value("evaluated", false)) {
      out << "  (not evaluated)\n";
      continue;
    }
    for (const auto& metric : sections[s].second)
      table_row(out, metric, section.contains(metric) ? section.at(metric) : json());
  }
  return out.str();
}

}  // namespace crashchat::metrics
