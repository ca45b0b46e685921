#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crashchat/common.hpp"
#include "crashchat/schema.hpp"

namespace crashchat {

struct ReferenceTexts {
  std::string description;
  std::string cause;
  std::string prevention;
};

struct IngestError {
  std::size_t line = 0;
  std::string video_id;
  std::string reason;
};

struct IngestResult {
  std::vector<VideoSample> samples;
  std::map<std::string, ReferenceTexts> texts;
  std::vector<IngestError> errors;  // per-entry rejections, non-fatal
};

// Reads a JSON-lines manifest. Invalid entries become error records; an
// unreadable file throws. Frames come from the referenced features file
// when one is given, otherwise deterministic placeholders are generated.
IngestResult ingest_manifest(const std::string& path);

struct SyntheticConfig {
  int num_positive = 200;
  int num_negative = 200;
  double fps = 4.0;
  double duration_min = 8.0;
  double duration_max = 8.0;
  int feature_dim = 32;
  double noise_scale = 0.1;
  // [pre-crash drift magnitude, crash spike magnitude, crash noise factor]
  std::array<double, 3> anomaly_signature = {1.5, 3.0, 2.0};
  std::uint64_t seed = 11;

  std::optional<std::string> validate() const;
  json to_json() const;
  static SyntheticConfig from_json(const json& j);
};

struct SyntheticResult {
  std::vector<VideoSample> samples;
  std::map<std::string, ReferenceTexts> texts;
};

// Desk-scale stand-in videos. Positives carry a three-phase feature signal:
// noise, additive mean drift starting exactly at frame floor(t_ar*fps), and
// a spike over the crash interval. Deterministic given the seed.
SyntheticResult generate_synthetic(const SyntheticConfig& cfg);

// Six pairs per positive video (tasks a-f), four per negative (a-d).
std::vector<QAPair> build_qa_pairs(const std::vector<VideoSample>& samples,
                                   const std::map<std::string, ReferenceTexts>& texts);

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 5;

  std::optional<std::string> validate() const;
  json to_json() const;
  static SplitSpec from_json(const json& j);
};

enum class Subset { Train, Val, Test };

std::string subset_name(Subset subset);
Subset subset_from_name(const std::string& name);

struct SplitResult {
  std::map<std::string, Subset> index;
  std::vector<std::string> warnings;
};

// Per-class largest-remainder allocation; deterministic given the seed.
// A class with fewer samples than subsets goes wholly to train (warning).
SplitResult stratified_split(const std::vector<VideoSample>& samples, const SplitSpec& spec);

// ------------------------------------------------------------------ storage

struct DatasetBundle {
  std::vector<VideoSample> samples;
  std::map<std::string, ReferenceTexts> texts;
  std::vector<QAPair> qa;
  std::map<std::string, Subset> split;

  const VideoSample* find(const std::string& video_id) const;
  std::vector<const VideoSample*> samples_in(Subset subset) const;
  std::vector<const QAPair*> qa_in(Subset subset) const;
};

void write_features_file(const std::string& path, const std::vector<VideoSample>& samples);
std::map<std::string, FrameSequence> read_features_file(const std::string& path);

void save_samples(const std::string& dir, const std::vector<VideoSample>& samples,
                  const std::map<std::string, ReferenceTexts>& texts,
                  const std::string& config_hash = "");
void save_qa(const std::string& dir, const std::vector<QAPair>& qa,
             const std::string& config_hash = "");
void save_split(const std::string& dir, const std::vector<VideoSample>& samples,
                const SplitResult& split, const std::string& config_hash = "");
DatasetBundle load_dataset(const std::string& dir);

}  // namespace crashchat
