#include "crashchat/templates.hpp"

#include <stdexcept>

#include "crashchat/common.hpp"

namespace crashchat::text {

const std::string& question_for(TaskId task) {
  static const std::string q_a = "Does the video contain a crash event?";
  static const std::string q_b = "Describe the crash event in the video.";
  static const std::string q_c = "What caused the crash in the video?";
  static const std::string q_d = "How could the crash have been prevented?";
  static const std::string q_e = "When does the crash occur in the video?";
  static const std::string q_f = "When do signs of an imminent crash first appear?";
  switch (task) {
    case TaskId::Recognition: return q_a;
    case TaskId::Description: return q_b;
    case TaskId::CausalReasoning: return q_c;
    case TaskId::PreventionReasoning: return q_d;
    case TaskId::CrashLocalization: return q_e;
    case TaskId::PreCrashLocalization: return q_f;
  }
  throw std::logic_error("invalid TaskId");
}

std::string interval_answer(double t1, double t2) {
  return "The crash occurs from " + format_seconds(t1) + "s to " + format_seconds(t2) + "s.";
}

std::string point_answer(double t) {
  return "Signs of an imminent crash first appear at " + format_seconds(t) + "s.";
}

const std::string& recognition_answer(bool positive) {
  static const std::string yes = "Yes, the video contains a crash event.";
  static const std::string no = "No, the video does not contain a crash event.";
  return positive ? yes : no;
}

const std::string& negative_answer(TaskId task) {
  static const std::string b = "The video shows normal driving and no crash occurs.";
  static const std::string c = "There is no crash to explain because the traffic flows normally.";
  static const std::string d = "No prevention is needed because no crash occurs in the video.";
  switch (task) {
    case TaskId::Description: return b;
    case TaskId::CausalReasoning: return c;
    case TaskId::PreventionReasoning: return d;
    default: throw std::logic_error("negative_answer only defined for tasks b-d");
  }
}

const std::string& refusal_text() {
  static const std::string t = "No crash is detected in this video.";
  return t;
}

const std::vector<std::string>& agent_words() {
  static const std::vector<std::string> v = {"car",        "truck",         "van",
                                             "bus",        "taxi",          "cyclist",
                                             "motorcyclist", "pedestrian"};
  return v;
}

const std::vector<std::string>& location_phrases() {
  static const std::vector<std::string> v = {"an intersection", "a highway ramp",
                                             "a roundabout",    "a parking lot",
                                             "a narrow street", "a merge lane"};
  return v;
}

const std::vector<std::string>& cause_clauses() {
  static const std::vector<std::string> v = {
      "ran a red light",          "followed too closely",
      "changed lanes without checking", "sped through heavy traffic",
      "ignored the stop sign",    "drifted out of its lane"};
  return v;
}

const std::vector<std::string>& prevention_clauses() {
  static const std::vector<std::string> v = {
      "kept a safe following distance",        "obeyed the traffic signal",
      "checked the mirrors before changing lanes", "reduced speed earlier",
      "yielded at the junction",               "stayed in the lane"};
  return v;
}

std::string description_text(int agent_a, int agent_b, int location) {
  const auto& agents = agent_words();
  const auto& locations = location_phrases();
  return "A " + agents[agent_a % agents.size()] + " collides with a " +
         agents[agent_b % agents.size()] + " near " + locations[location % locations.size()] + ".";
}

std::string cause_text(int agent_a, int cause) {
  const auto& agents = agent_words();
  const auto& causes = cause_clauses();
  return "The " + agents[agent_a % agents.size()] + " " + causes[cause % causes.size()] +
         " before the collision.";
}

std::string prevention_text(int prevention) {
  const auto& preventions = prevention_clauses();
  return "The crash could have been avoided if the driver had " +
         preventions[prevention % preventions.size()] + ".";
}

std::vector<std::string> closed_vocabulary_texts() {
  std::vector<std::string> texts;
  for (TaskId task : kAllTasks) texts.push_back(question_for(task));
  texts.push_back(recognition_answer(true));
  texts.push_back(recognition_answer(false));
  texts.push_back(negative_answer(TaskId::Description));
  texts.push_back(negative_answer(TaskId::CausalReasoning));
  texts.push_back(negative_answer(TaskId::PreventionReasoning));
  texts.push_back(refusal_text());
  texts.push_back(interval_answer(0.0, 0.0));
  texts.push_back(point_answer(0.0));
  for (const auto& w : agent_words()) texts.push_back(w);
  for (const auto& w : location_phrases()) texts.push_back(w);
  for (const auto& w : cause_clauses()) texts.push_back(w);
  for (const auto& w : prevention_clauses()) texts.push_back(w);
  texts.push_back(description_text(0, 0, 0));
  texts.push_back(cause_text(0, 0));
  texts.push_back(prevention_text(0));
  return texts;
}

}  // namespace crashchat::text
