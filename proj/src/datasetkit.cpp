#include "crashchat/datasetkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "crashchat/templates.hpp"

namespace fs = std::filesystem;

namespace crashchat {

namespace {

constexpr char kFeaturesMagic[8] = {'C', 'C', 'F', 'E', '0', '0', '0', '1'};

std::uint64_t per_item_seed(std::uint64_t seed, std::uint64_t index) {
  return seed ^ (0x9E3779B97F4A7C15ULL * (index + 1));
}

double snap_half(double t) { return std::round(t * 2.0) / 2.0; }

}  // namespace

// ------------------------------------------------------------------- ingest

IngestResult ingest_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.is_open()) throw std::runtime_error("cannot open manifest: " + path);

  IngestResult result;
  std::set<std::string> seen_ids;
  std::map<std::string, std::map<std::string, FrameSequence>> feature_cache;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;

    json entry;
    try {
      entry = json::parse(line);
    } catch (const std::exception& e) {
      result.errors.push_back({line_no, "", std::string("malformed JSON: ") + e.what()});
      continue;
    }
    if (entry.is_object() && entry.value("type", "") == "header") continue;

    VideoSample sample;
    try {
      sample.video_id = entry.at("videoId").get<std::string>();
      sample.label = entry.at("label").get<bool>();
      sample.source = source_from_name(entry.value("source", "Synthetic"));
      sample.fps = entry.value("fps", 4.0);

      if (seen_ids.count(sample.video_id)) {
        result.errors.push_back({line_no, sample.video_id, "duplicate videoId"});
        continue;
      }

      if (entry.contains("annotation") && !entry.at("annotation").is_null())
        sample.annotation = annotation_from_json(entry.at("annotation"));
      if (sample.label && !sample.annotation) {
        result.errors.push_back({line_no, sample.video_id, "missing annotation"});
        continue;
      }
      if (!sample.label && sample.annotation) {
        result.errors.push_back({line_no, sample.video_id, "negative entry carries an annotation"});
        continue;
      }

      ReferenceTexts texts;
      if (sample.label) {
        if (!entry.contains("descriptionText") || !entry.contains("causeText") ||
            !entry.contains("preventionText")) {
          result.errors.push_back({line_no, sample.video_id, "positive entry missing text fields"});
          continue;
        }
        texts.description = entry.at("descriptionText").get<std::string>();
        texts.cause = entry.at("causeText").get<std::string>();
        texts.prevention = entry.at("preventionText").get<std::string>();
      }

      const double duration = sample.annotation ? sample.annotation->duration
                                                : entry.value("durationSeconds", 8.0);
      const int feature_dim = entry.value("featureDim", 32);

      if (entry.contains("featuresFile") && !entry.at("featuresFile").is_null()) {
        const std::string rel = entry.at("featuresFile").get<std::string>();
        const std::string feat_path = (fs::path(path).parent_path() / rel).string();
        auto& cache = feature_cache[feat_path];
        if (cache.empty()) cache = read_features_file(feat_path);
        auto it = cache.find(sample.video_id);
        if (it == cache.end()) {
          result.errors.push_back({line_no, sample.video_id, "no features in " + rel});
          continue;
        }
        sample.frames = it->second;
      } else {
        // deterministic placeholder frames
        sample.frames.frame_count = std::max(1, static_cast<int>(std::lround(duration * sample.fps)));
        sample.frames.dim = feature_dim;
        sample.frames.data.assign(
            static_cast<std::size_t>(sample.frames.frame_count) * feature_dim, 0.0);
      }

      if (auto err = sample.validate()) {
        result.errors.push_back({line_no, sample.video_id, *err});
        continue;
      }

      seen_ids.insert(sample.video_id);
      if (sample.label) result.texts[sample.video_id] = std::move(texts);
      result.samples.push_back(std::move(sample));
    } catch (const std::exception& e) {
      result.errors.push_back({line_no, sample.video_id, std::string("bad entry: ") + e.what()});
    }
  }
  if (in.bad()) throw std::runtime_error("failed while reading manifest: " + path);
  return result;
}

// ---------------------------------------------------------------- synthetic

std::optional<std::string> SyntheticConfig::validate() const {
  if (num_positive < 0 || num_negative < 0) return "counts must be non-negative";
  if (!(fps > 0.0)) return "fps must be positive";
  if (!(duration_min > 0.0) || duration_max < duration_min) return "bad duration range";
  if (feature_dim < 2) return "featureDim must be at least 2";
  if (noise_scale < 0.0) return "noiseScale must be non-negative";
  return std::nullopt;
}

json SyntheticConfig::to_json() const {
  return json{{"numPositive", num_positive},
              {"numNegative", num_negative},
              {"fps", fps},
              {"durationRange", {duration_min, duration_max}},
              {"featureDim", feature_dim},
              {"noiseScale", noise_scale},
              {"anomalySignature", anomaly_signature},
              {"seed", seed}};
}

SyntheticConfig SyntheticConfig::from_json(const json& j) {
  SyntheticConfig cfg;
  cfg.num_positive = j.value("numPositive", cfg.num_positive);
  cfg.num_negative = j.value("numNegative", cfg.num_negative);
  cfg.fps = j.value("fps", cfg.fps);
  if (j.contains("durationRange")) {
    cfg.duration_min = j.at("durationRange").at(0).get<double>();
    cfg.duration_max = j.at("durationRange").at(1).get<double>();
  }
  cfg.feature_dim = j.value("featureDim", cfg.feature_dim);
  cfg.noise_scale = j.value("noiseScale", cfg.noise_scale);
  if (j.contains("anomalySignature")) {
    const auto& sig = j.at("anomalySignature");
    for (std::size_t i = 0; i < cfg.anomaly_signature.size() && i < sig.size(); ++i)
      cfg.anomaly_signature[i] = sig.at(i).get<double>();
  }
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

namespace {

VideoSample make_synthetic_video(const SyntheticConfig& cfg, bool positive, int index,
                                 ReferenceTexts* texts) {
  Rng rng(per_item_seed(cfg.seed, static_cast<std::uint64_t>(index) + (positive ? 0 : 1u << 20)));

  char id_buf[48];
  std::snprintf(id_buf, sizeof(id_buf), "synthetic-%s-%05d", positive ? "pos" : "neg", index);

  VideoSample sample;
  sample.video_id = id_buf;
  sample.source = SourceDataset::Synthetic;
  sample.fps = cfg.fps;
  sample.label = positive;

  const double duration = snap_half(rng.uniform(cfg.duration_min, cfg.duration_max));
  const int frame_count = std::max(1, static_cast<int>(std::lround(duration * cfg.fps)));
  const int dim = cfg.feature_dim;

  int drift_begin = frame_count + 1, spike_begin = frame_count + 1, spike_end = frame_count + 1;
  if (positive) {
    TemporalAnnotation ann;
    ann.duration = duration;
    // crash onset and length on a 0.5 s grid, kept away from the clip edges
    const double ai_lo = snap_half(duration * 0.25);
    const double ai_hi = snap_half(duration * 0.625);
    const int ai_steps = std::max(0, static_cast<int>(std::lround((ai_hi - ai_lo) * 2.0)));
    ann.crash_start = ai_lo + 0.5 * rng.uniform_int(0, ai_steps);
    const double len = 2.0 + 0.5 * rng.uniform_int(0, 2);
    ann.crash_end = std::min(duration, ann.crash_start + len);
    const double pre = 0.5 * rng.uniform_int(1, 2);
    ann.pre_crash_start = std::max(0.0, ann.crash_start - pre);
    ann.tolerance = 0.5;
    sample.annotation = ann;

    drift_begin = static_cast<int>(std::floor(ann.pre_crash_start * cfg.fps));
    spike_begin = static_cast<int>(std::floor(ann.crash_start * cfg.fps));
    spike_end = static_cast<int>(std::floor(ann.crash_end * cfg.fps));

    const auto n_agents = static_cast<int>(text::agent_words().size());
    const int agent_a = rng.uniform_int(0, n_agents - 1);
    const int agent_b = rng.uniform_int(0, n_agents - 1);
    const int location = rng.uniform_int(0, static_cast<int>(text::location_phrases().size()) - 1);
    const int cause = rng.uniform_int(0, static_cast<int>(text::cause_clauses().size()) - 1);
    const int prevention =
        rng.uniform_int(0, static_cast<int>(text::prevention_clauses().size()) - 1);
    if (texts) {
      texts->description = text::description_text(agent_a, agent_b, location);
      texts->cause = text::cause_text(agent_a, cause);
      texts->prevention = text::prevention_text(prevention);
    }
  }

  const double drift_mag = cfg.anomaly_signature[0];
  const double spike_mag = cfg.anomaly_signature[1];
  const double spike_noise = cfg.anomaly_signature[2];
  const int half = dim / 2;

  sample.frames.frame_count = frame_count;
  sample.frames.dim = dim;
  sample.frames.data.resize(static_cast<std::size_t>(frame_count) * dim);
  for (int f = 0; f < frame_count; ++f) {
    double* row = sample.frames.frame(f);
    const bool in_drift = positive && f >= drift_begin;
    const bool in_spike = positive && f >= spike_begin && f < spike_end;
    const double noise = cfg.noise_scale * (in_spike ? spike_noise : 1.0);
    for (int i = 0; i < dim; ++i) {
      double v = rng.normal(0.0, noise);
      if (in_drift && i < half) v += drift_mag;
      if (in_spike && i >= half) v += spike_mag;
      row[i] = v;
    }
  }
  return sample;
}

}  // namespace

SyntheticResult generate_synthetic(const SyntheticConfig& cfg) {
  if (auto err = cfg.validate()) throw std::runtime_error("invalid synthetic config: " + *err);

  SyntheticResult result;
  result.samples.resize(static_cast<std::size_t>(cfg.num_positive) + cfg.num_negative);
  std::vector<ReferenceTexts> pos_texts(cfg.num_positive);

  const int total = cfg.num_positive + cfg.num_negative;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < total; ++i) {
    if (i < cfg.num_positive) {
      result.samples[i] = make_synthetic_video(cfg, true, i, &pos_texts[i]);
    } else {
      result.samples[i] = make_synthetic_video(cfg, false, i - cfg.num_positive, nullptr);
    }
  }
  for (int i = 0; i < cfg.num_positive; ++i)
    result.texts[result.samples[i].video_id] = std::move(pos_texts[i]);
  return result;
}

// ----------------------------------------------------------------- QA pairs

std::vector<QAPair> build_qa_pairs(const std::vector<VideoSample>& samples,
                                   const std::map<std::string, ReferenceTexts>& texts) {
  std::vector<QAPair> pairs;
  pairs.reserve(samples.size() * 6);

  for (const auto& sample : samples) {
    const ReferenceTexts* ref = nullptr;
    if (sample.label) {
      auto it = texts.find(sample.video_id);
      if (it == texts.end())
        throw std::runtime_error("missing reference texts for video " + sample.video_id);
      ref = &it->second;
      if (!sample.annotation)
        throw std::runtime_error("positive video without annotation: " + sample.video_id);
    }
    for (TaskId task : kAllTasks) {
      if (!sample.label && group_of(task) == TaskGroup::Pc) continue;
      QAPair qa;
      qa.video_id = sample.video_id;
      qa.task = task;
      qa.question = text::question_for(task);
      switch (task) {
        case TaskId::Recognition:
          qa.reference_answer = text::recognition_answer(sample.label);
          break;
        case TaskId::Description:
          qa.reference_answer = sample.label ? ref->description : text::negative_answer(task);
          break;
        case TaskId::CausalReasoning:
          qa.reference_answer = sample.label ? ref->cause : text::negative_answer(task);
          break;
        case TaskId::PreventionReasoning:
          qa.reference_answer = sample.label ? ref->prevention : text::negative_answer(task);
          break;
        case TaskId::CrashLocalization:
          qa.reference_answer =
              text::interval_answer(sample.annotation->crash_start, sample.annotation->crash_end);
          break;
        case TaskId::PreCrashLocalization:
          qa.reference_answer = text::point_answer(sample.annotation->pre_crash_start);
          break;
      }
      if (sample.label && qa.reference_answer.empty())
        throw std::runtime_error("missing reference answer for video " + sample.video_id +
                                 ", task " + std::string(1, task_code(task)));
      pairs.push_back(std::move(qa));
    }
  }

  std::stable_sort(pairs.begin(), pairs.end(), [](const QAPair& a, const QAPair& b) {
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    return task_code(a.task) < task_code(b.task);
  });
  return pairs;
}

// -------------------------------------------------------------------- split

std::optional<std::string> SplitSpec::validate() const {
  if (train < 0.0 || val < 0.0 || test < 0.0) return "ratios must be non-negative";
  if (std::abs(train + val + test - 1.0) > 1e-9) return "ratios must sum to 1.0";
  return std::nullopt;
}

json SplitSpec::to_json() const {
  return json{{"ratios", {train, val, test}}, {"seed", seed}};
}

SplitSpec SplitSpec::from_json(const json& j) {
  SplitSpec spec;
  if (j.contains("ratios")) {
    spec.train = j.at("ratios").at(0).get<double>();
    spec.val = j.at("ratios").at(1).get<double>();
    spec.test = j.at("ratios").at(2).get<double>();
  }
  spec.seed = j.value("seed", spec.seed);
  return spec;
}

std::string subset_name(Subset subset) {
  switch (subset) {
    case Subset::Train: return "train";
    case Subset::Val: return "val";
    case Subset::Test: return "test";
  }
  return "?";
}

Subset subset_from_name(const std::string& name) {
  if (name == "train") return Subset::Train;
  if (name == "val") return Subset::Val;
  if (name == "test") return Subset::Test;
  throw std::runtime_error("unknown subset: " + name);
}

namespace {

// floor allocation, then the largest fractional remainders win the leftover
std::array<int, 3> largest_remainder(int n, const std::array<double, 3>& ratios) {
  std::array<int, 3> alloc{};
  std::array<double, 3> frac{};
  int assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double quota = ratios[s] * n;
    alloc[s] = static_cast<int>(std::floor(quota));
    frac[s] = quota - alloc[s];
    assigned += alloc[s];
  }
  int leftover = n - assigned;
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&frac](int a, int b) { return frac[a] > frac[b]; });
  for (int i = 0; i < 3 && leftover > 0; ++i, --leftover) ++alloc[order[i]];
  return alloc;
}

}  // namespace

SplitResult stratified_split(const std::vector<VideoSample>& samples, const SplitSpec& spec) {
  if (auto err = spec.validate()) throw std::runtime_error("invalid split spec: " + *err);

  SplitResult result;
  Rng rng(spec.seed);
  const std::array<double, 3> ratios = {spec.train, spec.val, spec.test};

  for (const bool positive : {true, false}) {
    std::vector<std::string> ids;
    for (const auto& s : samples)
      if (s.label == positive) ids.push_back(s.video_id);
    std::sort(ids.begin(), ids.end());
    rng.shuffle(ids);

    if (ids.empty()) continue;
    if (ids.size() < 3) {
      result.warnings.push_back(std::string(positive ? "positive" : "negative") +
                                " class has fewer samples than subsets; placed wholly in train");
      for (const auto& id : ids) result.index[id] = Subset::Train;
      continue;
    }

    const auto alloc = largest_remainder(static_cast<int>(ids.size()), ratios);
    std::size_t at = 0;
    for (int s = 0; s < 3; ++s) {
      for (int i = 0; i < alloc[s]; ++i, ++at)
        result.index[ids[at]] = static_cast<Subset>(s);
    }
  }
  return result;
}

// ------------------------------------------------------------------ storage

const VideoSample* DatasetBundle::find(const std::string& video_id) const {
  for (const auto& s : samples)
    if (s.video_id == video_id) return &s;
  return nullptr;
}

std::vector<const VideoSample*> DatasetBundle::samples_in(Subset subset) const {
  std::vector<const VideoSample*> out;
  for (const auto& s : samples) {
    auto it = split.find(s.video_id);
    if (it != split.end() && it->second == subset) out.push_back(&s);
  }
  return out;
}

std::vector<const QAPair*> DatasetBundle::qa_in(Subset subset) const {
  std::vector<const QAPair*> out;
  for (const auto& pair : qa) {
    auto it = split.find(pair.video_id);
    if (it != split.end() && it->second == subset) out.push_back(&pair);
  }
  return out;
}

void write_features_file(const std::string& path, const std::vector<VideoSample>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.is_open()) throw std::runtime_error("cannot open features file for writing: " + path);
  out.write(kFeaturesMagic, sizeof(kFeaturesMagic));
  const auto count = static_cast<std::uint32_t>(samples.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& s : samples) {
    const auto id_len = static_cast<std::uint32_t>(s.video_id.size());
    const auto frames = static_cast<std::uint32_t>(s.frames.frame_count);
    const auto dim = static_cast<std::uint32_t>(s.frames.dim);
    out.write(reinterpret_cast<const char*>(&id_len), sizeof(id_len));
    out.write(s.video_id.data(), id_len);
    out.write(reinterpret_cast<const char*>(&frames), sizeof(frames));
    out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    out.write(reinterpret_cast<const char*>(s.frames.data.data()),
              static_cast<std::streamsize>(s.frames.data.size() * sizeof(double)));
  }
  if (!out.good()) throw std::runtime_error("failed while writing features: " + path);
}

std::map<std::string, FrameSequence> read_features_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.is_open()) throw std::runtime_error("cannot open features file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, kFeaturesMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a features file: " + path);
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  std::map<std::string, FrameSequence> out;
  for (std::uint32_t r = 0; r < count; ++r) {
    std::uint32_t id_len = 0, frames = 0, dim = 0;
    in.read(reinterpret_cast<char*>(&id_len), sizeof(id_len));
    std::string id(id_len, '\0');
    in.read(id.data(), id_len);
    in.read(reinterpret_cast<char*>(&frames), sizeof(frames));
    in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
    FrameSequence seq;
    seq.frame_count = static_cast<int>(frames);
    seq.dim = static_cast<int>(dim);
    seq.data.resize(static_cast<std::size_t>(frames) * dim);
    in.read(reinterpret_cast<char*>(seq.data.data()),
            static_cast<std::streamsize>(seq.data.size() * sizeof(double)));
    if (!in.good()) throw std::runtime_error("failed while reading features: " + path);
    out[std::move(id)] = std::move(seq);
  }
  return out;
}

void save_samples(const std::string& dir, const std::vector<VideoSample>& samples,
                  const std::map<std::string, ReferenceTexts>& texts,
                  const std::string& config_hash) {
  fs::create_directories(dir);
  std::vector<json> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(sample_metadata_to_json(s));
  write_jsonl_file((fs::path(dir) / "samples.jsonl").string(), rows, config_hash);
  write_features_file((fs::path(dir) / "features.bin").string(), samples);

  std::vector<json> text_rows;
  for (const auto& [id, t] : texts)
    text_rows.push_back(json{{"videoId", id},
                             {"description", t.description},
                             {"cause", t.cause},
                             {"prevention", t.prevention}});
  write_jsonl_file((fs::path(dir) / "texts.jsonl").string(), text_rows, config_hash);
}

void save_qa(const std::string& dir, const std::vector<QAPair>& qa,
             const std::string& config_hash) {
  fs::create_directories(dir);
  std::vector<json> rows;
  rows.reserve(qa.size());
  for (const auto& pair : qa) rows.push_back(qa_to_json(pair));
  write_jsonl_file((fs::path(dir) / "qa.jsonl").string(), rows, config_hash);
}

void save_split(const std::string& dir, const std::vector<VideoSample>& samples,
                const SplitResult& split, const std::string& config_hash) {
  fs::create_directories(dir);
  json index = json::object();
  for (const auto& [id, subset] : split.index) index[id] = subset_name(subset);
  json index_file = {{"index", index}};
  if (!config_hash.empty()) index_file["configHash"] = config_hash;
  write_text_file((fs::path(dir) / "split_index.json").string(), index_file.dump(2) + "\n");

  for (const Subset subset : {Subset::Train, Subset::Val, Subset::Test}) {
    std::vector<json> rows;
    for (const auto& s : samples) {
      auto it = split.index.find(s.video_id);
      if (it != split.index.end() && it->second == subset)
        rows.push_back(sample_metadata_to_json(s));
    }
    write_jsonl_file((fs::path(dir) / (subset_name(subset) + ".jsonl")).string(), rows,
                     config_hash);
  }
}

DatasetBundle load_dataset(const std::string& dir) {
  DatasetBundle bundle;
  const auto samples_path = (fs::path(dir) / "samples.jsonl").string();
  const auto features_path = (fs::path(dir) / "features.bin").string();
  for (const auto& row : read_jsonl_file(samples_path))
    bundle.samples.push_back(sample_metadata_from_json(row));

  auto features = read_features_file(features_path);
  for (auto& s : bundle.samples) {
    auto it = features.find(s.video_id);
    if (it == features.end())
      throw std::runtime_error("dataset is missing features for video " + s.video_id);
    s.frames = std::move(it->second);
  }

  const auto texts_path = (fs::path(dir) / "texts.jsonl").string();
  if (fs::exists(texts_path)) {
    for (const auto& row : read_jsonl_file(texts_path)) {
      ReferenceTexts t;
      t.description = row.value("description", "");
      t.cause = row.value("cause", "");
      t.prevention = row.value("prevention", "");
      bundle.texts[row.at("videoId").get<std::string>()] = std::move(t);
    }
  }

  const auto qa_path = (fs::path(dir) / "qa.jsonl").string();
  if (fs::exists(qa_path))
    for (const auto& row : read_jsonl_file(qa_path)) bundle.qa.push_back(qa_from_json(row));

  const auto split_path = (fs::path(dir) / "split_index.json").string();
  if (fs::exists(split_path)) {
    const json index_file = json::parse(read_text_file(split_path));
    for (const auto& [id, name] : index_file.at("index").items())
      bundle.split[id] = subset_from_name(name.get<std::string>());
  }
  return bundle;
}

}  // namespace crashchat
