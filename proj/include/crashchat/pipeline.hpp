#pragma once

#include <optional>
#include <string>

#include "crashchat/model.hpp"
#include "crashchat/schema.hpp"

namespace crashchat {

// Adapter invocation counts for one evaluation run. Parallel callers keep
// their own instance and merge at the end.
struct InvocationCounters {
  long long lc_stage1 = 0;
  long long pc_stage2 = 0;

  void merge(const InvocationCounters& other) {
    lc_stage1 += other.lc_stage1;
    pc_stage2 += other.pc_stage2;
  }
};

struct InferenceResult {
  std::string stage1_text;
  bool stage1_positive = false;
  std::optional<std::string> stage2_text;  // present only for gated-in e/f queries
  PredictionRecord final;
};

// Total parser: every input yields a PredictionRecord (possibly a parse
// failure). Task a reads a leading yes/no; e/f extract decimal seconds and
// clamp them to [0, duration]; b-d pass the text through.
PredictionRecord parse_answer(const std::string& raw_text, TaskId task, double duration);

// Gated two-stage inference. Stage 1 always runs on the Lc path. For
// localization tasks the stage-1 recognition verdict decides whether the
// Pc path runs at all; a negative (or unparseable) verdict short-circuits
// to the refusal text.
InferenceResult infer(const VideoSample& video, TaskId task, const CrashChatModel& model,
                      InvocationCounters* counters = nullptr, const DecodingConfig& decoding = {});

}  // namespace crashchat
