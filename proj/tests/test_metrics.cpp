#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "crashchat/common.hpp"
#include "crashchat/metrics.hpp"
#include "crashchat/templates.hpp"
#include "crashchat/tokenizer.hpp"

using namespace crashchat;
using namespace crashchat::metrics;

namespace {

PredictionRecord rec_pred(const std::string& id, bool value) {
  PredictionRecord rec;
  rec.video_id = id;
  rec.task = TaskId::Recognition;
  rec.parsed = ParsedAnswer::boolean(value);
  return rec;
}

// independent smoothed BLEU-4 evaluation via direct n-gram counting
double bleu_by_hand(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty()) return 0.0;
  double log_sum = 0.0;
  int used = 0;
  for (int n = 1; n <= 4; ++n) {
    const int possible = static_cast<int>(cand.size()) - n + 1;
    const int ref_possible = static_cast<int>(ref.size()) - n + 1;
    if (possible <= 0 || ref_possible <= 0) continue;
    std::map<std::string, int> ref_counts, cand_counts;
    auto key = [](const std::vector<std::string>& v, int at, int n_) {
      std::string k;
      for (int i = 0; i < n_; ++i) k += v[at + i] + "\x1f";
      return k;
    };
    for (int i = 0; i < ref_possible; ++i) ++ref_counts[key(ref, i, n)];
    for (int i = 0; i < possible; ++i) ++cand_counts[key(cand, i, n)];
    int matches = 0;
    for (const auto& [gram, count] : cand_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matches += std::min(count, it->second);
    }
    log_sum += std::log(matches > 0 ? double(matches) / possible : 1e-9 / possible);
    ++used;
  }
  if (used == 0) return 0.0;
  const double bp =
      cand.size() >= ref.size() ? 1.0 : std::exp(1.0 - double(ref.size()) / cand.size());
  return bp * std::exp(log_sum / used);
}

// exponential-time LCS: enumerate subsequence lengths from the top
int lcs_brute_force(const std::vector<int>& a, const std::vector<int>& b) {
  const int n = static_cast<int>(a.size());
  auto is_subsequence = [&b](const std::vector<int>& s) {
    std::size_t at = 0;
    for (std::size_t i = 0; i < b.size() && at < s.size(); ++i)
      if (b[i] == s[at]) ++at;
    return at == s.size();
  };
  for (int len = std::min<int>(n, static_cast<int>(b.size())); len >= 1; --len) {
    // all index subsets of a with the given size
    std::vector<int> pick(len);
    std::function<bool(int, int)> search = [&](int from, int depth) {
      if (depth == len) {
        std::vector<int> s(len);
        for (int i = 0; i < len; ++i) s[i] = a[pick[i]];
        return is_subsequence(s);
      }
      for (int i = from; i < n; ++i) {
        pick[depth] = i;
        if (search(i + 1, depth + 1)) return true;
      }
      return false;
    };
    if (search(0, 0)) return len;
  }
  return 0;
}

TemporalAnnotation ann_575() { return TemporalAnnotation{5.0, 8.0, 10.0, 12.0, 0.5}; }

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("classification on a perfect predictor") {
    std::map<std::string, bool> labels = {{"a", true}, {"b", false}, {"c", true}};
    const auto report = classification_metrics(
        {rec_pred("a", true), rec_pred("b", false), rec_pred("c", true)}, labels);
    CHECK(report.positive.recall == doctest::Approx(1.0));
    CHECK(report.positive.precision == doctest::Approx(1.0));
    CHECK(report.positive.f1 == doctest::Approx(1.0));
    CHECK(report.missing == 0);
  }

  TEST_CASE("no positives predicted: recall zero, precision flagged") {
    std::map<std::string, bool> labels = {{"a", true}, {"b", false}};
    const auto report =
        classification_metrics({rec_pred("a", false), rec_pred("b", false)}, labels);
    CHECK(report.positive.recall == 0.0);
    CHECK(report.positive.precision == 0.0);
    CHECK(report.positive.zero_division);
  }

  TEST_CASE("confusion counts reproduce the standard formulas") {
    // TP=97, FN=3, FP=1
    std::map<std::string, bool> labels;
    std::vector<PredictionRecord> preds;
    int id = 0;
    auto add = [&](bool label, bool pred, int count) {
      for (int i = 0; i < count; ++i, ++id) {
        labels["v" + std::to_string(id)] = label;
        preds.push_back(rec_pred("v" + std::to_string(id), pred));
      }
    };
    add(true, true, 97);
    add(true, false, 3);
    add(false, true, 1);
    add(false, false, 99);
    const auto report = classification_metrics(preds, labels);
    CHECK(report.positive.recall == doctest::Approx(0.97));
    CHECK(report.positive.precision == doctest::Approx(97.0 / 98.0));
    const double f1 = 2.0 * 0.97 * (97.0 / 98.0) / (0.97 + 97.0 / 98.0);
    CHECK(report.positive.f1 == doctest::Approx(f1));
  }

  TEST_CASE("missing predictions count as the negative class") {
    std::map<std::string, bool> labels = {{"a", true}, {"b", true}};
    const auto report = classification_metrics({rec_pred("a", true)}, labels);
    CHECK(report.missing == 1);
    CHECK(report.positive.recall == doctest::Approx(0.5));
  }

  TEST_CASE("interval IoU basics") {
    CHECK(interval_iou({3.0, 5.0}, {3.0, 5.0}) == doctest::Approx(1.0));
    CHECK(interval_iou({0.0, 1.0}, {2.0, 3.0}) == 0.0);
    CHECK(interval_iou({2.0, 6.0}, {4.0, 8.0}) == doctest::Approx(2.0 / 6.0));

    // degenerate truth matches only the identical point
    CHECK(interval_iou({2.0, 2.0}, {2.0, 2.0}) == 1.0);
    CHECK(interval_iou({2.0, 3.0}, {2.0, 2.0}) == 0.0);
    CHECK(interval_iou({1.0, 1.0}, {2.0, 2.0}) == 0.0);

    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
      TimeInterval x{rng.uniform(0, 10), 0};
      x.end = x.start + rng.uniform(0, 5);
      TimeInterval y{rng.uniform(0, 10), 0};
      y.end = y.start + rng.uniform(0, 5);
      const double xy = interval_iou(x, y);
      CHECK(xy == interval_iou(y, x));
      CHECK(xy >= 0.0);
      CHECK(xy <= 1.0);
    }
  }

  TEST_CASE("pre-crash IoU follows the three branches with closed boundaries") {
    TemporalAnnotation ann{5.0, 8.0, 10.0, 12.0, 0.5};
    CHECK(precrash_iou(4.7, ann) == 1.0);                       // tolerance band
    CHECK(precrash_iou(6.5, ann) == doctest::Approx(0.5));      // (6.5-8)/(5-8)
    CHECK(precrash_iou(4.0, ann) == 0.0);                       // before t_ar - delta
    CHECK(precrash_iou(8.0, ann) == 0.0);                       // at t_ai, zero branch
    CHECK(precrash_iou(4.5, ann) == 1.0);                       // boundary t_ar - delta
    CHECK(precrash_iou(5.0, ann) == 1.0);                       // boundary t_ar
    CHECK(precrash_iou(11.9, ann) == 0.0);
  }

  TEST_CASE("pre-crash IoU piecewise exhaustiveness over a dense sweep") {
    const TemporalAnnotation ann = ann_575();
    for (int i = 0; i < 12000; ++i) {
      const double t = i * (ann.duration / 12000.0);
      const bool in_band = t >= ann.pre_crash_start - ann.tolerance && t <= ann.pre_crash_start;
      const bool in_middle = t > ann.pre_crash_start && t < ann.crash_start;
      const bool in_zero = (t >= 0.0 && t < ann.pre_crash_start - ann.tolerance) ||
                           (t >= ann.crash_start && t < ann.duration);
      CHECK(int(in_band) + int(in_middle) + int(in_zero) == 1);
      const double value = precrash_iou(t, ann);
      if (in_band) CHECK(value == 1.0);
      if (in_middle)
        CHECK(value ==
              doctest::Approx((t - ann.crash_start) / (ann.pre_crash_start - ann.crash_start)));
      if (in_zero) CHECK(value == 0.0);
    }
  }

  TEST_CASE("pre-crash IoU strictly decreases across the middle branch") {
    const TemporalAnnotation ann = ann_575();
    double prev = 1.0;
    for (int i = 1; i < 100; ++i) {
      const double t = ann.pre_crash_start + i * (ann.crash_start - ann.pre_crash_start) / 100.0;
      const double value = precrash_iou(t, ann);
      CHECK(value < prev);
      prev = value;
    }
  }

  TEST_CASE("zero tolerance reduces the band to a single point") {
    TemporalAnnotation ann = ann_575();
    ann.tolerance = 1e-300;  // tolerance must stay positive
    CHECK(precrash_iou(ann.pre_crash_start, ann) == 1.0);
    CHECK(precrash_iou(ann.pre_crash_start - 0.01, ann) == 0.0);
  }

  TEST_CASE("vanishing pre-crash phase keeps only the band") {
    TemporalAnnotation ann{5.0, 5.0, 7.0, 12.0, 0.5};
    CHECK(precrash_iou(4.8, ann) == 1.0);
    CHECK(precrash_iou(5.0, ann) == 1.0);
    CHECK(precrash_iou(5.01, ann) == 0.0);
  }

  TEST_CASE("average precision at thresholds") {
    CHECK(average_precision_at({1.0, 1.0, 1.0}, 0.7) == doctest::Approx(1.0));
    CHECK(average_precision_at({0.8, 0.6, 0.2}, 0.5) == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS(average_precision_at({}, 0.5));

    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> ious(20);
      for (double& v : ious) v = rng.uniform();
      const double a30 = average_precision_at(ious, 0.30);
      const double a50 = average_precision_at(ious, 0.50);
      const double a70 = average_precision_at(ious, 0.70);
      CHECK(a30 >= a50);
      CHECK(a50 >= a70);
    }
  }

  TEST_CASE("BLEU identities and edges") {
    const std::vector<std::string> ten = {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
    CHECK(bleu_tokens(ten, ten) == doctest::Approx(1.0).epsilon(1e-9));

    const std::vector<std::string> other = {"k", "l", "m", "n", "o", "p", "q", "r", "s", "t"};
    CHECK(bleu_tokens(ten, other) < 1e-3);

    CHECK(bleu_tokens({}, ten) == 0.0);
    CHECK(bleu("", "anything at all here") == 0.0);
  }

  TEST_CASE("BLEU against an independent n-gram computation") {
    const auto cand = Tokenizer::split_text("the car hits the cyclist");
    const auto ref = Tokenizer::split_text("the car hits a cyclist");
    CHECK(bleu_tokens(cand, ref) == doctest::Approx(bleu_by_hand(cand, ref)).epsilon(1e-12));

    Rng rng(31);
    const std::vector<std::string> alphabet = {"car", "truck", "stops", "crash", "the", "a"};
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<std::string> c(rng.uniform_int(1, 9)), r(rng.uniform_int(1, 9));
      for (auto& w : c) w = alphabet[rng.uniform_int(0, 5)];
      for (auto& w : r) w = alphabet[rng.uniform_int(0, 5)];
      CHECK(bleu_tokens(c, r) == doctest::Approx(bleu_by_hand(c, r)).epsilon(1e-12));
    }
  }

  TEST_CASE("ROUGE-L identities and edges") {
    CHECK(rouge_l("the car stops", "the car stops") == doctest::Approx(1.0));
    CHECK(rouge_l("alpha beta", "gamma delta") == 0.0);
    CHECK(rouge_l("", "") == doctest::Approx(1.0));
    CHECK(rouge_l("", "words") == 0.0);
    CHECK(rouge_l("words", "") == 0.0);
  }

  TEST_CASE("ROUGE-L DP equals brute-force LCS on small alphabets") {
    const std::vector<std::string> alphabet = {"x", "y", "z"};
    // exhaustive over all pairs with lengths up to 4
    std::vector<std::vector<int>> sequences;
    for (int len = 0; len <= 4; ++len) {
      std::vector<int> seq(len, 0);
      while (true) {
        sequences.push_back(seq);
        int at = len - 1;
        while (at >= 0 && seq[at] == 2) seq[at--] = 0;
        if (at < 0) break;
        ++seq[at];
      }
    }
    for (const auto& a : sequences) {
      for (const auto& b : sequences) {
        std::vector<std::string> c, r;
        for (int v : a) c.push_back(alphabet[v]);
        for (int v : b) r.push_back(alphabet[v]);
        const int lcs = lcs_brute_force(a, b);
        double expected;
        if (a.empty() && b.empty()) expected = 1.0;
        else if (a.empty() || b.empty() || lcs == 0) expected = 0.0;
        else {
          const double p = double(lcs) / a.size();
          const double rec = double(lcs) / b.size();
          expected = 2.0 * p * rec / (p + rec);
        }
        CHECK(rouge_l_tokens(c, r) == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("embedding score maps cosine onto [0,1]") {
    struct BagOfChars : EmbeddingProvider {
      std::vector<double> embed(const std::string& text) override {
        std::vector<double> v(26, 0.0);
        for (char c : text)
          if (c >= 'a' && c <= 'z') v[c - 'a'] += 1.0;
        return v;
      }
    } provider;
    CHECK(embedding_score("abc", "abc", provider) == doctest::Approx(1.0));
    CHECK(embedding_score("aaa", "bbb", provider) == doctest::Approx(0.5));
  }

  TEST_CASE("evaluate_run on oracle predictions is perfect and order-invariant") {
    SyntheticConfig cfg;
    cfg.num_positive = 8;
    cfg.num_negative = 8;
    cfg.feature_dim = 8;
    cfg.seed = 3;
    const SyntheticResult synth = generate_synthetic(cfg);
    DatasetBundle data;
    data.samples = synth.samples;
    data.texts = synth.texts;
    data.qa = build_qa_pairs(data.samples, data.texts);
    for (const auto& s : data.samples) data.split[s.video_id] = Subset::Test;

    // oracle predictions straight from the reference answers
    std::vector<PredictionRecord> preds;
    for (const QAPair& qa : data.qa) {
      PredictionRecord rec;
      rec.video_id = qa.video_id;
      rec.task = qa.task;
      rec.raw_text = qa.reference_answer;
      switch (qa.task) {
        case TaskId::Recognition:
          rec.parsed = ParsedAnswer::boolean(data.find(qa.video_id)->label);
          break;
        case TaskId::CrashLocalization: {
          const auto& ann = *data.find(qa.video_id)->annotation;
          rec.parsed = ParsedAnswer::make_interval(ann.crash_start, ann.crash_end);
          break;
        }
        case TaskId::PreCrashLocalization:
          rec.parsed = ParsedAnswer::make_point(data.find(qa.video_id)->annotation->pre_crash_start);
          break;
        default:
          rec.parsed = ParsedAnswer::free_text(qa.reference_answer);
          break;
      }
      preds.push_back(rec);
    }

    EvalConfig eval_cfg;
    const MetricsReport report = evaluate_run(preds, data, eval_cfg);
    CHECK(report.recognition.report.positive.f1 == doctest::Approx(1.0));
    CHECK(report.crash_localization.miou == doctest::Approx(1.0));
    CHECK(report.precrash_localization.miou == doctest::Approx(1.0));
    CHECK(report.text.at('b').bleu == doctest::Approx(1.0));
    CHECK(report.text.at('b').rouge_l == doctest::Approx(1.0));
    CHECK_FALSE(report.text.at('b').bert.has_value());

    // shuffling the prediction file leaves every aggregate unchanged
    std::vector<PredictionRecord> shuffled = preds;
    Rng rng(8);
    rng.shuffle(shuffled);
    MetricsReport again = evaluate_run(shuffled, data, eval_cfg);
    again.config_hash = report.config_hash;
    CHECK(again.to_json().dump() == report.to_json().dump());
  }

  TEST_CASE("report schema carries exactly the published metric names") {
    DatasetBundle data;
    SyntheticConfig cfg;
    cfg.num_positive = 2;
    cfg.num_negative = 2;
    cfg.feature_dim = 8;
    const SyntheticResult synth = generate_synthetic(cfg);
    data.samples = synth.samples;
    data.texts = synth.texts;
    data.qa = build_qa_pairs(data.samples, data.texts);
    for (const auto& s : data.samples) data.split[s.video_id] = Subset::Test;

    const MetricsReport report = evaluate_run({}, data, EvalConfig{});
    const json j = report.to_json();
    const json& tasks = j.at("tasks");
    CHECK(tasks.at("recognition").contains("Rec"));
    CHECK(tasks.at("recognition").contains("Pre"));
    CHECK(tasks.at("recognition").contains("F1"));
    for (const char* name : {"description", "causalReasoning", "preventionReasoning"}) {
      CHECK(tasks.at(name).contains("BLEU"));
      CHECK(tasks.at(name).contains("ROUGE"));
      CHECK(tasks.at(name).contains("BERT"));
    }
    for (const char* name : {"crashLocalization", "preCrashLocalization"}) {
      CHECK(tasks.at(name).contains("mIoU"));
      CHECK(tasks.at(name).contains("AP@30"));
      CHECK(tasks.at(name).contains("AP@50"));
      CHECK(tasks.at(name).contains("AP@70"));
    }

    // nothing was evaluated: the table says so instead of inventing numbers
    CHECK_FALSE(tasks.at("recognition").value("evaluated", true));
    CHECK(report.to_table().find("not evaluated") != std::string::npos);
  }
}
