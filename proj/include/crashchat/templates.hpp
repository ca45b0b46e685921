#pragma once

#include <string>
#include <vector>

#include "crashchat/schema.hpp"

namespace crashchat::text {

// Fixed per-task prompt templates. One question string per task, no
// paraphrase augmentation, so QA counts and parser behavior stay
// reproducible.
const std::string& question_for(TaskId task);

// Canonical timestamp answer formats (bit-exact, one decimal).
std::string interval_answer(double t1, double t2);  // crash localization
std::string point_answer(double t);                 // pre-crash localization

const std::string& recognition_answer(bool positive);
// Reference answers for description/cause/prevention questions on videos
// without a crash.
const std::string& negative_answer(TaskId task);
// Deterministic sentinel for localization queries gated out at stage 1.
const std::string& refusal_text();

const std::vector<std::string>& agent_words();
const std::vector<std::string>& location_phrases();
const std::vector<std::string>& cause_clauses();
const std::vector<std::string>& prevention_clauses();

std::string description_text(int agent_a, int agent_b, int location);
std::string cause_text(int agent_a, int cause);
std::string prevention_text(int prevention);

// Every fixed string the closed tokenizer vocabulary is built from.
std::vector<std::string> closed_vocabulary_texts();

}  // namespace crashchat::text
