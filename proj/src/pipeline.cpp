#include "crashchat/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <vector>

#include "crashchat/templates.hpp"

namespace crashchat {

namespace {

std::vector<double> extract_decimals(const std::string& text) {
  std::vector<double> values;
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      std::size_t j = i;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      if (j < text.size() && text[j] == '.' && j + 1 < text.size() &&
          std::isdigit(static_cast<unsigned char>(text[j + 1]))) {
        ++j;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      }
      values.push_back(std::strtod(text.substr(i, j - i).c_str(), nullptr));
      i = j;
    } else {
      ++i;
    }
  }
  return values;
}

double clamp_time(double t, double duration, bool& clamped) {
  if (t < 0.0) {
    clamped = true;
    return 0.0;
  }
  if (duration > 0.0 && t > duration) {
    clamped = true;
    return duration;
  }
  return t;
}

std::optional<bool> leading_yes_no(const std::string& text) {
  std::size_t i = 0;
  while (i < text.size() && !std::isalpha(static_cast<unsigned char>(text[i]))) ++i;
  std::string word;
  while (i < text.size() && std::isalpha(static_cast<unsigned char>(text[i])))
    word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i++]))));
  if (word == "yes") return true;
  if (word == "no") return false;
  return std::nullopt;
}

}  // namespace

PredictionRecord parse_answer(const std::string& raw_text, TaskId task, double duration) {
  PredictionRecord rec;
  rec.task = task;
  rec.raw_text = raw_text;

  switch (task) {
    case TaskId::Recognition: {
      const auto verdict = leading_yes_no(raw_text);
      if (verdict) {
        rec.parsed = ParsedAnswer::boolean(*verdict);
      } else {
        rec.parsed = ParsedAnswer::failure();
      }
      break;
    }
    case TaskId::CrashLocalization: {
      const auto values = extract_decimals(raw_text);
      if (values.size() < 2) {
        rec.parsed = ParsedAnswer::failure();
        break;
      }
      bool clamped = false;
      double t1 = clamp_time(values[0], duration, clamped);
      double t2 = clamp_time(values[1], duration, clamped);
      if (t1 > t2) {
        std::swap(t1, t2);
        rec.flags.push_back("swapped");
      }
      if (clamped) rec.flags.push_back("clamped");
      rec.parsed = ParsedAnswer::make_interval(t1, t2);
      break;
    }
    case TaskId::PreCrashLocalization: {
      const auto values = extract_decimals(raw_text);
      if (values.empty()) {
        rec.parsed = ParsedAnswer::failure();
        break;
      }
      bool clamped = false;
      const double t = clamp_time(values[0], duration, clamped);
      if (clamped) rec.flags.push_back("clamped");
      rec.parsed = ParsedAnswer::make_point(t);
      break;
    }
    default:
      rec.parsed = ParsedAnswer::free_text(raw_text);
      break;
  }
  return rec;
}

InferenceResult infer(const VideoSample& video, TaskId task, const CrashChatModel& model,
                      InvocationCounters* counters, const DecodingConfig& decoding) {
  InferenceResult result;
  const double duration = video.duration();

  if (group_of(task) == TaskGroup::Lc) {
    // stage 1 answers the question directly and is final
    const GenerateResult gen = model.generate(video, text::question_for(task), TaskGroup::Lc,
                                              decoding);
    if (counters) ++counters->lc_stage1;
    result.stage1_text = gen.text;
    result.final = parse_answer(gen.text, task, duration);
    if (task == TaskId::Recognition) {
      if (result.final.parsed.kind == ParsedAnswer::Kind::Boolean) {
        result.stage1_positive = result.final.parsed.bool_value;
      } else {
        result.final.flags.push_back("unparseableRecognition");
      }
    }
    if (gen.truncated) result.final.flags.push_back("lengthCapReached");
  } else {
    // stage 1 answers an internal recognition prompt to drive the gate
    const GenerateResult gate = model.generate(video, text::question_for(TaskId::Recognition),
                                               TaskGroup::Lc, decoding);
    if (counters) ++counters->lc_stage1;
    result.stage1_text = gate.text;

    const PredictionRecord verdict = parse_answer(gate.text, TaskId::Recognition, duration);
    bool positive = false;
    bool unparseable = false;
    if (verdict.parsed.kind == ParsedAnswer::Kind::Boolean) {
      positive = verdict.parsed.bool_value;
    } else {
      unparseable = true;  // fail-safe: treat as negative
    }
    result.stage1_positive = positive;

    if (!positive) {
      result.final = parse_answer(text::refusal_text(), task, duration);
      result.final.flags.push_back("gatedNegative");
      if (unparseable) result.final.flags.push_back("unparseableRecognition");
    } else {
      const GenerateResult gen = model.generate(video, text::question_for(task), TaskGroup::Pc,
                                                decoding);
      if (counters) ++counters->pc_stage2;
      result.stage2_text = gen.text;
      result.final = parse_answer(gen.text, task, duration);
      if (gen.truncated) result.final.flags.push_back("lengthCapReached");
    }
  }

  result.final.video_id = video.video_id;
  return result;
}

}  // namespace crashchat
