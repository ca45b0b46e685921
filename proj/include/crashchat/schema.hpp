#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "crashchat/common.hpp"

namespace crashchat {

// The six core tasks. Letter codes double as the wire format.
enum class TaskId : char {
  Recognition = 'a',
  Description = 'b',
  CausalReasoning = 'c',
  PreventionReasoning = 'd',
  CrashLocalization = 'e',
  PreCrashLocalization = 'f',
};

enum class TaskGroup { Lc, Pc };

constexpr std::array<TaskId, 6> kAllTasks = {
    TaskId::Recognition,        TaskId::Description,       TaskId::CausalReasoning,
    TaskId::PreventionReasoning, TaskId::CrashLocalization, TaskId::PreCrashLocalization,
};

TaskGroup group_of(TaskId task);
const std::vector<TaskId>& tasks_of(TaskGroup group);

char task_code(TaskId task);
TaskId task_from_code(char code);  // throws on unknown code
std::string task_name(TaskId task);
std::string group_name(TaskGroup group);
TaskGroup group_from_name(const std::string& name);

// Temporal ground truth for a positive video. pre_crash_start is the first
// visual cue of the imminent crash; crash_start is where the crash itself
// begins (i.e. the end of the pre-crash phase).
struct TemporalAnnotation {
  double pre_crash_start = 0.0;
  double crash_start = 0.0;
  double crash_end = 0.0;
  double duration = 0.0;
  double tolerance = 0.5;

  std::optional<std::string> validate() const;
};

enum class SourceDataset { MMAU, Nexar, D2City, Synthetic };

std::string source_name(SourceDataset source);
SourceDataset source_from_name(const std::string& name);

// Frame feature vectors, row-major [frame_count x dim].
struct FrameSequence {
  int frame_count = 0;
  int dim = 0;
  std::vector<double> data;

  const double* frame(int i) const { return data.data() + static_cast<std::size_t>(i) * dim; }
  double* frame(int i) { return data.data() + static_cast<std::size_t>(i) * dim; }
};

struct VideoSample {
  std::string video_id;
  FrameSequence frames;
  double fps = 0.0;
  bool label = false;  // true = contains a crash
  std::optional<TemporalAnnotation> annotation;
  SourceDataset source = SourceDataset::Synthetic;

  double duration() const { return fps > 0.0 ? frames.frame_count / fps : 0.0; }
  std::optional<std::string> validate() const;
};

struct QAPair {
  std::string video_id;
  TaskId task = TaskId::Recognition;
  std::string question;
  std::string reference_answer;
};

struct TimeInterval {
  double start = 0.0;
  double end = 0.0;
};

struct ParsedAnswer {
  enum class Kind { Boolean, Interval, Point, FreeText, ParseFailure };

  Kind kind = Kind::ParseFailure;
  bool bool_value = false;
  TimeInterval interval;
  double point = 0.0;
  std::string text;

  static ParsedAnswer boolean(bool v);
  static ParsedAnswer make_interval(double start, double end);
  static ParsedAnswer make_point(double t);
  static ParsedAnswer free_text(std::string t);
  static ParsedAnswer failure();
};

struct PredictionRecord {
  std::string video_id;
  TaskId task = TaskId::Recognition;
  std::string raw_text;
  ParsedAnswer parsed;
  std::vector<std::string> flags;

  bool has_flag(const std::string& name) const;
  // Checks that the parsed variant matches the task (parse failures allowed).
  std::optional<std::string> validate() const;
};

// JSON-lines wire format (camelCase field names).
json annotation_to_json(const TemporalAnnotation& ann);
TemporalAnnotation annotation_from_json(const json& j);

json sample_metadata_to_json(const VideoSample& sample);
// Frames are stored out of band; the returned sample has empty frames.
VideoSample sample_metadata_from_json(const json& j);

json qa_to_json(const QAPair& qa);
QAPair qa_from_json(const json& j);

json prediction_to_json(const PredictionRecord& rec);
PredictionRecord prediction_from_json(const json& j);

}  // namespace crashchat
