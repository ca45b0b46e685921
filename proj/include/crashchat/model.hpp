#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crashchat/common.hpp"
#include "crashchat/schema.hpp"
#include "crashchat/tokenizer.hpp"

namespace crashchat {

struct BackboneConfig {
  int input_feature_dim = 32;  // raw frame feature width
  int d_v = 32;                // video token width out of the frozen encoder
  int d_l = 64;                // language embedding width
  int layers = 4;
  int heads = 4;
  int mlp_hidden = 128;
  int max_seq_len = 96;
  int rank = 8;                // low-rank adapter rank, kept well below d_l
  int pooling_stride = 4;      // fixed-stride mean pooling over frames
  std::uint64_t init_seed = 1234;

  static int vocab_size();  // fixed by the closed tokenizer vocabulary
  std::optional<std::string> validate() const;
  json to_json() const;
  static BackboneConfig from_json(const json& j);
};

// Offsets into the flat frozen parameter block.
struct BaseLayout {
  std::size_t enc_w = 0, enc_b = 0, tok_emb = 0, head_w = 0;
  struct Layer {
    std::size_t wq = 0, wk = 0, wv = 0, wo = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0;
  };
  std::vector<Layer> layer;
  std::size_t total = 0;
  static BaseLayout compute(const BackboneConfig& cfg, int vocab);
};

// Offsets into one task group's trainable block: projector plus the
// low-rank (A, B) pair for every adapted attention weight.
struct GroupLayout {
  std::size_t proj_w = 0, proj_b = 0;
  struct Slot {
    std::size_t a = 0, b = 0;  // A: [rank x d_l], B: [d_l x rank]
  };
  std::vector<Slot> slot;  // 4 per layer: q, k, v, o
  std::size_t total = 0;
  static GroupLayout compute(const BackboneConfig& cfg);
};

struct VideoTokens {
  int count = 0;
  int dim = 0;
  std::vector<double> data;  // [count x dim]
};

struct MultimodalSequence {
  int video_count = 0;
  std::vector<int> text_ids;
  std::vector<double> x;  // [length x d_l], position encodings already added
  bool truncated = false;
  int length() const { return video_count + static_cast<int>(text_ids.size()); }
};

struct DecodingConfig {
  int max_new_tokens = 24;
  // all template answers are single sentences; stop after a sentence-final
  // '.' (a '.' that does not follow a digit token)
  bool stop_at_sentence_end = true;
};

struct GenerateResult {
  std::string text;
  std::vector<int> token_ids;
  bool truncated = false;
};

// Frozen vision encoder + frozen decoder backbone with one projector and
// one low-rank adapter set per task group. Only group_params ever train.
class CrashChatModel {
 public:
  BackboneConfig config;
  BaseLayout base_layout;
  GroupLayout group_layout;
  std::vector<double> base;                          // frozen after init
  std::array<std::vector<double>, 2> group_params;   // indexed by TaskGroup

  static CrashChatModel init(const BackboneConfig& cfg);

  const std::vector<double>& params_of(TaskGroup group) const {
    return group_params[static_cast<int>(group)];
  }
  std::vector<double>& params_of(TaskGroup group) {
    return group_params[static_cast<int>(group)];
  }

  VideoTokens encode_video(const VideoSample& sample) const;

  // [count x d_l]; the two groups use disjoint parameter sets
  std::vector<double> project(const VideoTokens& tokens, TaskGroup group) const;

  // [projected ; embedded text] with positions over the concatenation;
  // overflow truncates video tokens from the front, never text
  MultimodalSequence assemble(const std::vector<double>& projected, int video_count,
                              const std::vector<int>& text_ids) const;

  // next-token logits for every position, [length x vocab]
  std::vector<double> forward_adapted(const MultimodalSequence& seq, TaskGroup group) const;

  GenerateResult generate(const VideoSample& video, const std::string& prompt, TaskGroup group,
                          const DecodingConfig& decoding = {}) const;

  // Sum of next-token NLL over the reference-answer tokens (prompt, video
  // and end-of-sequence positions carry no loss; with answer_only=false the
  // question tokens are supervised too). When grads is non-null, gradients
  // of that sum w.r.t. the group block are accumulated into it (layout =
  // GroupLayout). Returns the summed NLL; supervised_token_count reports
  // the number of supervised positions.
  double loss_and_gradients(const VideoSample& video, const std::string& question,
                            const std::string& answer, TaskGroup group,
                            std::vector<double>* grads, int* supervised_token_count,
                            bool answer_only = true) const;

  json config_meta() const;  // config + vocab hash, stored in checkpoints
};

struct CheckpointProvenance {
  std::string regime;  // "init", "independent", "homogeneous", "heterogeneous", "assembled"
  std::string group;   // trained group(s), e.g. "lc"
  std::string tasks;   // task codes, e.g. "abcdef"

  json to_json() const;
  static CheckpointProvenance from_json(const json& j);
};

struct LoadedCheckpoint {
  CrashChatModel model;
  CheckpointProvenance provenance;
};

void save_checkpoint(const CrashChatModel& model, const CheckpointProvenance& provenance,
                     const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path);

// Raw block access; used for block swapping and byte-level comparisons.
struct RawCheckpoint {
  json meta;
  std::vector<double> base;
  std::vector<double> lc;
  std::vector<double> pc;
};
RawCheckpoint read_checkpoint_raw(const std::string& path);
void write_checkpoint_raw(const RawCheckpoint& raw, const std::string& path);

}  // namespace crashchat
