#include "crashchat/schema.hpp"

#include <stdexcept>

namespace crashchat {

TaskGroup group_of(TaskId task) {
  switch (task) {
    case TaskId::Recognition:
    case TaskId::Description:
    case TaskId::CausalReasoning:
    case TaskId::PreventionReasoning:
      return TaskGroup::Lc;
    case TaskId::CrashLocalization:
    case TaskId::PreCrashLocalization:
      return TaskGroup::Pc;
  }
  throw std::logic_error("invalid TaskId");
}

const std::vector<TaskId>& tasks_of(TaskGroup group) {
  static const std::vector<TaskId> lc = {TaskId::Recognition, TaskId::Description,
                                         TaskId::CausalReasoning, TaskId::PreventionReasoning};
  static const std::vector<TaskId> pc = {TaskId::CrashLocalization, TaskId::PreCrashLocalization};
  return group == TaskGroup::Lc ? lc : pc;
}

char task_code(TaskId task) { return static_cast<char>(task); }

TaskId task_from_code(char code) {
  if (code < 'a' || code > 'f') throw std::runtime_error(std::string("unknown task code: ") + code);
  return static_cast<TaskId>(code);
}

std::string task_name(TaskId task) {
  switch (task) {
    case TaskId::Recognition: return "recognition";
    case TaskId::Description: return "description";
    case TaskId::CausalReasoning: return "causal_reasoning";
    case TaskId::PreventionReasoning: return "prevention_reasoning";
    case TaskId::CrashLocalization: return "crash_localization";
    case TaskId::PreCrashLocalization: return "pre_crash_localization";
  }
  return "?";
}

std::string group_name(TaskGroup group) { return group == TaskGroup::Lc ? "lc" : "pc"; }

TaskGroup group_from_name(const std::string& name) {
  if (name == "lc" || name == "Lc") return TaskGroup::Lc;
  if (name == "pc" || name == "Pc") return TaskGroup::Pc;
  throw std::runtime_error("unknown task group: " + name);
}

std::optional<std::string> TemporalAnnotation::validate() const {
  if (!(tolerance > 0.0)) return "tolerance must be positive";
  if (pre_crash_start < 0.0) return "preCrashStart must be >= 0";
  if (pre_crash_start > crash_start) return "preCrashStart must be <= crashStart";
  if (crash_start > crash_end) return "crashStart must be <= crashEnd";
  if (crash_end > duration) return "crashEnd must be <= duration";
  return std::nullopt;
}

std::string source_name(SourceDataset source) {
  switch (source) {
    case SourceDataset::MMAU: return "MM-AU";
    case SourceDataset::Nexar: return "Nexar";
    case SourceDataset::D2City: return "D2City";
    case SourceDataset::Synthetic: return "Synthetic";
  }
  return "?";
}

SourceDataset source_from_name(const std::string& name) {
  if (name == "MM-AU") return SourceDataset::MMAU;
  if (name == "Nexar") return SourceDataset::Nexar;
  if (name == "D2City") return SourceDataset::D2City;
  if (name == "Synthetic") return SourceDataset::Synthetic;
  throw std::runtime_error("unknown source dataset: " + name);
}

std::optional<std::string> VideoSample::validate() const {
  if (video_id.empty()) return "videoId must be non-empty";
  if (frames.frame_count <= 0 || frames.dim <= 0) return "frames must be non-empty";
  if (frames.data.size() != static_cast<std::size_t>(frames.frame_count) * frames.dim)
    return "frame buffer size mismatch";
  if (!(fps > 0.0)) return "fps must be positive";
  if (label && !annotation.has_value()) return "missing annotation";
  if (!label && annotation.has_value()) return "negative sample must not carry an annotation";
  if (annotation) {
    if (auto err = annotation->validate()) return err;
  }
  return std::nullopt;
}

ParsedAnswer ParsedAnswer::boolean(bool v) {
  ParsedAnswer p;
  p.kind = Kind::Boolean;
  p.bool_value = v;
  return p;
}

ParsedAnswer ParsedAnswer::make_interval(double start, double end) {
  ParsedAnswer p;
  p.kind = Kind::Interval;
  p.interval = {start, end};
  return p;
}

ParsedAnswer ParsedAnswer::make_point(double t) {
  ParsedAnswer p;
  p.kind = Kind::Point;
  p.point = t;
  return p;
}

ParsedAnswer ParsedAnswer::free_text(std::string t) {
  ParsedAnswer p;
  p.kind = Kind::FreeText;
  p.text = std::move(t);
  return p;
}

ParsedAnswer ParsedAnswer::failure() { return ParsedAnswer{}; }

bool PredictionRecord::has_flag(const std::string& name) const {
  for (const auto& f : flags)
    if (f == name) return true;
  return false;
}

std::optional<std::string> PredictionRecord::validate() const {
  if (parsed.kind == ParsedAnswer::Kind::ParseFailure) return std::nullopt;
  switch (task) {
    case TaskId::Recognition:
      if (parsed.kind != ParsedAnswer::Kind::Boolean) return "task a requires a boolean answer";
      break;
    case TaskId::CrashLocalization:
      if (parsed.kind != ParsedAnswer::Kind::Interval) return "task e requires an interval answer";
      break;
    case TaskId::PreCrashLocalization:
      if (parsed.kind != ParsedAnswer::Kind::Point) return "task f requires a point answer";
      break;
    default:
      if (parsed.kind != ParsedAnswer::Kind::FreeText) return "tasks b-d require free text";
      break;
  }
  return std::nullopt;
}

json annotation_to_json(const TemporalAnnotation& ann) {
  return json{{"preCrashStart", round_to_tenth(ann.pre_crash_start)},
              {"crashStart", round_to_tenth(ann.crash_start)},
              {"crashEnd", round_to_tenth(ann.crash_end)},
              {"duration", round_to_tenth(ann.duration)},
              {"tolerance", ann.tolerance}};
}

TemporalAnnotation annotation_from_json(const json& j) {
  TemporalAnnotation ann;
  ann.pre_crash_start = j.at("preCrashStart").get<double>();
  ann.crash_start = j.at("crashStart").get<double>();
  ann.crash_end = j.at("crashEnd").get<double>();
  ann.duration = j.at("duration").get<double>();
  ann.tolerance = j.value("tolerance", 0.5);
  return ann;
}

json sample_metadata_to_json(const VideoSample& sample) {
  json j{{"videoId", sample.video_id},
         {"label", sample.label},
         {"source", source_name(sample.source)},
         {"fps", sample.fps},
         {"frameCount", sample.frames.frame_count},
         {"featureDim", sample.frames.dim}};
  if (sample.annotation) j["annotation"] = annotation_to_json(*sample.annotation);
  return j;
}

VideoSample sample_metadata_from_json(const json& j) {
  VideoSample s;
  s.video_id = j.at("videoId").get<std::string>();
  s.label = j.at("label").get<bool>();
  s.source = source_from_name(j.at("source").get<std::string>());
  s.fps = j.at("fps").get<double>();
  s.frames.frame_count = j.at("frameCount").get<int>();
  s.frames.dim = j.at("featureDim").get<int>();
  if (j.contains("annotation") && !j.at("annotation").is_null())
    s.annotation = annotation_from_json(j.at("annotation"));
  return s;
}

json qa_to_json(const QAPair& qa) {
  return json{{"videoId", qa.video_id},
              {"task", std::string(1, task_code(qa.task))},
              {"question", qa.question},
              {"referenceAnswer", qa.reference_answer}};
}

QAPair qa_from_json(const json& j) {
  QAPair qa;
  qa.video_id = j.at("videoId").get<std::string>();
  qa.task = task_from_code(j.at("task").get<std::string>().at(0));
  qa.question = j.at("question").get<std::string>();
  qa.reference_answer = j.at("referenceAnswer").get<std::string>();
  return qa;
}

json prediction_to_json(const PredictionRecord& rec) {
  json parsed;
  switch (rec.parsed.kind) {
    case ParsedAnswer::Kind::Boolean:
      parsed = {{"kind", "boolean"}, {"value", rec.parsed.bool_value}};
      break;
    case ParsedAnswer::Kind::Interval:
      parsed = {{"kind", "interval"},
                {"start", round_to_tenth(rec.parsed.interval.start)},
                {"end", round_to_tenth(rec.parsed.interval.end)}};
      break;
    case ParsedAnswer::Kind::Point:
      parsed = {{"kind", "point"}, {"value", round_to_tenth(rec.parsed.point)}};
      break;
    case ParsedAnswer::Kind::FreeText:
      parsed = {{"kind", "freeText"}, {"text", rec.parsed.text}};
      break;
    case ParsedAnswer::Kind::ParseFailure:
      parsed = {{"kind", "parseFailure"}};
      break;
  }
  return json{{"videoId", rec.video_id},
              {"task", std::string(1, task_code(rec.task))},
              {"rawText", rec.raw_text},
              {"parsed", parsed},
              {"flags", rec.flags}};
}

PredictionRecord prediction_from_json(const json& j) {
  PredictionRecord rec;
  rec.video_id = j.at("videoId").get<std::string>();
  rec.task = task_from_code(j.at("task").get<std::string>().at(0));
  rec.raw_text = j.at("rawText").get<std::string>();
  const json& parsed = j.at("parsed");
  const std::string kind = parsed.at("kind").get<std::string>();
  if (kind == "boolean") {
    rec.parsed = ParsedAnswer::boolean(parsed.at("value").get<bool>());
  } else if (kind == "interval") {
    rec.parsed = ParsedAnswer::make_interval(parsed.at("start").get<double>(),
                                             parsed.at("end").get<double>());
  } else if (kind == "point") {
    rec.parsed = ParsedAnswer::make_point(parsed.at("value").get<double>());
  } else if (kind == "freeText") {
    rec.parsed = ParsedAnswer::free_text(parsed.at("text").get<std::string>());
  } else if (kind == "parseFailure") {
    rec.parsed = ParsedAnswer::failure();
  } else {
    throw std::runtime_error("unknown parsed answer kind: " + kind);
  }
  if (j.contains("flags")) rec.flags = j.at("flags").get<std::vector<std::string>>();
  if (auto err = rec.validate()) throw std::runtime_error(*err);
  return rec;
}

}  // namespace crashchat
