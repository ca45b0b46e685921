#include "crashchat/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "crashchat/kernels.hpp"

namespace crashchat {

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'C', 'F', 'T', '0', '0', '0', '1'};

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
  return cdf + x * pdf;
}

void position_encoding(int pos, int dim, double* out) {
  for (int j = 0; j < dim / 2; ++j) {
    const double freq = std::pow(10000.0, -2.0 * j / dim);
    const double angle = pos * freq;
    out[2 * j] = std::sin(angle);
    out[2 * j + 1] = std::cos(angle);
  }
}

// y = x W^T + B(A x) over a sequence; u keeps the low-rank intermediate
// A x for the backward pass.
void adapted_linear(const double* w, const double* a, const double* b_mat, const double* x,
                    double* y, double* u, int n, int d, int r) {
  kernels::linear_forward(w, nullptr, x, y, n, d, d);
  kernels::linear_forward(a, nullptr, x, u, n, r, d);
  std::vector<double> tmp(static_cast<std::size_t>(n) * d);
  kernels::linear_forward(b_mat, nullptr, u, tmp.data(), n, d, r);
  for (std::size_t i = 0; i < tmp.size(); ++i) y[i] += tmp[i];
}

void adapted_linear_backward(const double* w, const double* a, const double* b_mat,
                             const double* x, const double* u, const double* dy, double* dx,
                             double* da, double* db, int n, int d, int r) {
  // frozen path contributes dx only
  kernels::linear_backward(w, x, dy, dx, nullptr, nullptr, n, d, d);
  std::vector<double> du(static_cast<std::size_t>(n) * r, 0.0);
  kernels::linear_backward(b_mat, u, dy, du.data(), db, nullptr, n, d, r);
  kernels::linear_backward(a, x, du.data(), dx, da, nullptr, n, r, d);
}

struct LayerTrace {
  std::vector<double> x_in, normed1, inv1;
  std::vector<double> q, k, v;
  std::vector<double> u_q, u_k, u_v, u_o;
  std::vector<double> probs;
  std::vector<double> ctx, attn_out;
  std::vector<double> x_mid, normed2, inv2;
  std::vector<double> mlp_pre, mlp_act;
};

struct Trace {
  std::vector<LayerTrace> layers;
  std::vector<double> x_final, normed_f, inv_f;
};

std::vector<double> run_forward(const CrashChatModel& model, const MultimodalSequence& seq,
                                TaskGroup group, Trace& trace) {
  const auto& cfg = model.config;
  const int n = seq.length();
  const int d = cfg.d_l;
  const int r = cfg.rank;
  const int mlp = cfg.mlp_hidden;
  const int head_dim = d / cfg.heads;
  const double* base = model.base.data();
  const double* gp = model.params_of(group).data();
  const auto& bl = model.base_layout;
  const auto& gl = model.group_layout;

  trace.layers.resize(cfg.layers);
  std::vector<double> x = seq.x;

  for (int l = 0; l < cfg.layers; ++l) {
    LayerTrace& lt = trace.layers[l];
    const auto& L = bl.layer[l];
    const std::size_t nd = static_cast<std::size_t>(n) * d;

    lt.x_in = x;
    lt.normed1.resize(nd);
    lt.inv1.resize(n);
    kernels::rmsnorm_forward(lt.x_in.data(), lt.normed1.data(), lt.inv1.data(), n, d);

    lt.q.resize(nd);
    lt.k.resize(nd);
    lt.v.resize(nd);
    lt.u_q.resize(static_cast<std::size_t>(n) * r);
    lt.u_k.resize(static_cast<std::size_t>(n) * r);
    lt.u_v.resize(static_cast<std::size_t>(n) * r);
    const auto& sq = gl.slot[l * 4 + 0];
    const auto& sk = gl.slot[l * 4 + 1];
    const auto& sv = gl.slot[l * 4 + 2];
    const auto& so = gl.slot[l * 4 + 3];
    adapted_linear(base + L.wq, gp + sq.a, gp + sq.b, lt.normed1.data(), lt.q.data(),
                   lt.u_q.data(), n, d, r);
    adapted_linear(base + L.wk, gp + sk.a, gp + sk.b, lt.normed1.data(), lt.k.data(),
                   lt.u_k.data(), n, d, r);
    adapted_linear(base + L.wv, gp + sv.a, gp + sv.b, lt.normed1.data(), lt.v.data(),
                   lt.u_v.data(), n, d, r);

    lt.probs.assign(static_cast<std::size_t>(cfg.heads) * n * n, 0.0);
    lt.ctx.resize(nd);
    kernels::attention_forward(lt.q.data(), lt.k.data(), lt.v.data(), lt.probs.data(),
                               lt.ctx.data(), n, cfg.heads, head_dim);

    lt.attn_out.resize(nd);
    lt.u_o.resize(static_cast<std::size_t>(n) * r);
    adapted_linear(base + L.wo, gp + so.a, gp + so.b, lt.ctx.data(), lt.attn_out.data(),
                   lt.u_o.data(), n, d, r);

    lt.x_mid.resize(nd);
    for (std::size_t i = 0; i < nd; ++i) lt.x_mid[i] = lt.x_in[i] + lt.attn_out[i];

    lt.normed2.resize(nd);
    lt.inv2.resize(n);
    kernels::rmsnorm_forward(lt.x_mid.data(), lt.normed2.data(), lt.inv2.data(), n, d);

    lt.mlp_pre.resize(static_cast<std::size_t>(n) * mlp);
    kernels::linear_forward(base + L.w1, base + L.b1, lt.normed2.data(), lt.mlp_pre.data(), n,
                            mlp, d);
    lt.mlp_act.resize(lt.mlp_pre.size());
    for (std::size_t i = 0; i < lt.mlp_pre.size(); ++i) lt.mlp_act[i] = gelu(lt.mlp_pre[i]);

    std::vector<double> mlp_out(nd);
    kernels::linear_forward(base + L.w2, base + L.b2, lt.mlp_act.data(), mlp_out.data(), n, d,
                            mlp);
    for (std::size_t i = 0; i < nd; ++i) x[i] = lt.x_mid[i] + mlp_out[i];
  }

  trace.x_final = x;
  trace.normed_f.resize(x.size());
  trace.inv_f.resize(n);
  kernels::rmsnorm_forward(trace.x_final.data(), trace.normed_f.data(), trace.inv_f.data(), n, d);

  const int vocab = BackboneConfig::vocab_size();
  std::vector<double> logits(static_cast<std::size_t>(n) * vocab);
  kernels::linear_forward(base + bl.head_w, nullptr, trace.normed_f.data(), logits.data(), n,
                          vocab, d);
  return logits;
}

// Accumulates gradients of the loss w.r.t. the group block into grads.
// dlogits must hold d(loss)/d(logits) for every position (zero rows for
// unsupervised positions).
void run_backward(const CrashChatModel& model, const MultimodalSequence& seq, TaskGroup group,
                  const Trace& trace, const std::vector<double>& dlogits,
                  const VideoTokens& video_tokens, std::vector<double>& grads) {
  const auto& cfg = model.config;
  const int n = seq.length();
  const int d = cfg.d_l;
  const int r = cfg.rank;
  const int mlp = cfg.mlp_hidden;
  const int head_dim = d / cfg.heads;
  const int vocab = BackboneConfig::vocab_size();
  const double* base = model.base.data();
  const double* gp = model.params_of(group).data();
  const auto& bl = model.base_layout;
  const auto& gl = model.group_layout;
  const std::size_t nd = static_cast<std::size_t>(n) * d;

  std::vector<double> dnormed_f(nd, 0.0);
  kernels::linear_backward(base + bl.head_w, trace.normed_f.data(), dlogits.data(),
                           dnormed_f.data(), nullptr, nullptr, n, vocab, d);

  std::vector<double> dx(nd, 0.0);
  kernels::rmsnorm_backward(trace.x_final.data(), dnormed_f.data(), trace.inv_f.data(), dx.data(),
                            n, d);

  std::vector<double> dnormed1(nd), dnormed2(nd), dctx(nd), dq(nd), dk(nd), dv(nd);
  std::vector<double> dact(static_cast<std::size_t>(n) * mlp);
  std::vector<double> dprobs(static_cast<std::size_t>(cfg.heads) * n * n);

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const LayerTrace& lt = trace.layers[l];
    const auto& L = bl.layer[l];
    const auto& sq = gl.slot[l * 4 + 0];
    const auto& sk = gl.slot[l * 4 + 1];
    const auto& sv = gl.slot[l * 4 + 2];
    const auto& so = gl.slot[l * 4 + 3];

    // mlp block: x = x_mid + W2 gelu(W1 normed2 + b1) + b2
    std::fill(dact.begin(), dact.end(), 0.0);
    kernels::linear_backward(base + L.w2, lt.mlp_act.data(), dx.data(), dact.data(), nullptr,
                             nullptr, n, d, mlp);
    for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= gelu_grad(lt.mlp_pre[i]);
    std::fill(dnormed2.begin(), dnormed2.end(), 0.0);
    kernels::linear_backward(base + L.w1, lt.normed2.data(), dact.data(), dnormed2.data(), nullptr,
                             nullptr, n, mlp, d);
    kernels::rmsnorm_backward(lt.x_mid.data(), dnormed2.data(), lt.inv2.data(), dx.data(), n, d);

    // attention block: x_mid = x_in + Wo ctx (+ LoRA)
    std::fill(dctx.begin(), dctx.end(), 0.0);
    adapted_linear_backward(base + L.wo, gp + so.a, gp + so.b, lt.ctx.data(), lt.u_o.data(),
                            dx.data(), dctx.data(), grads.data() + so.a, grads.data() + so.b, n, d,
                            r);

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    kernels::attention_backward(lt.q.data(), lt.k.data(), lt.v.data(), lt.probs.data(),
                                dctx.data(), dq.data(), dk.data(), dv.data(), dprobs.data(), n,
                                cfg.heads, head_dim);

    std::fill(dnormed1.begin(), dnormed1.end(), 0.0);
    adapted_linear_backward(base + L.wq, gp + sq.a, gp + sq.b, lt.normed1.data(), lt.u_q.data(),
                            dq.data(), dnormed1.data(), grads.data() + sq.a, grads.data() + sq.b,
                            n, d, r);
    adapted_linear_backward(base + L.wk, gp + sk.a, gp + sk.b, lt.normed1.data(), lt.u_k.data(),
                            dk.data(), dnormed1.data(), grads.data() + sk.a, grads.data() + sk.b,
                            n, d, r);
    adapted_linear_backward(base + L.wv, gp + sv.a, gp + sv.b, lt.normed1.data(), lt.u_v.data(),
                            dv.data(), dnormed1.data(), grads.data() + sv.a, grads.data() + sv.b,
                            n, d, r);
    kernels::rmsnorm_backward(lt.x_in.data(), dnormed1.data(), lt.inv1.data(), dx.data(), n, d);
  }

  // projector gradients from the video rows; x rows are projected + position,
  // so d(projected) is just the input gradient at those rows
  const int kept = seq.video_count;
  if (kept > 0) {
    const int skipped = video_tokens.count - kept;
    const double* vid = video_tokens.data.data() + static_cast<std::size_t>(skipped) * cfg.d_v;
    kernels::linear_backward(gp + gl.proj_w, vid, dx.data(), nullptr, grads.data() + gl.proj_w,
                             grads.data() + gl.proj_b, kept, d, cfg.d_v);
  }
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

int BackboneConfig::vocab_size() { return Tokenizer::instance().vocab_size(); }

std::optional<std::string> BackboneConfig::validate() const {
  if (input_feature_dim <= 0 || d_v <= 0 || d_l <= 0 || layers <= 0 || heads <= 0 ||
      mlp_hidden <= 0 || max_seq_len <= 0 || pooling_stride <= 0)
    return "all dimensions must be positive";
  if (d_l % heads != 0) return "d_l must be divisible by heads";
  if (rank < 1) return "adapter rank must be at least 1";
  if (rank * 4 > d_l) return "adapter rank must stay low: rank <= d_l/4";
  return std::nullopt;
}

json BackboneConfig::to_json() const {
  return json{{"inputFeatureDim", input_feature_dim},
              {"dV", d_v},
              {"dL", d_l},
              {"layers", layers},
              {"heads", heads},
              {"mlpHidden", mlp_hidden},
              {"maxSeqLen", max_seq_len},
              {"rank", rank},
              {"poolingStride", pooling_stride},
              {"initSeed", init_seed},
              {"vocabSize", vocab_size()}};
}

BackboneConfig BackboneConfig::from_json(const json& j) {
  BackboneConfig cfg;
  cfg.input_feature_dim = j.value("inputFeatureDim", cfg.input_feature_dim);
  cfg.d_v = j.value("dV", cfg.d_v);
  cfg.d_l = j.value("dL", cfg.d_l);
  cfg.layers = j.value("layers", cfg.layers);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.mlp_hidden = j.value("mlpHidden", cfg.mlp_hidden);
  cfg.max_seq_len = j.value("maxSeqLen", cfg.max_seq_len);
  cfg.rank = j.value("rank", cfg.rank);
  cfg.pooling_stride = j.value("poolingStride", cfg.pooling_stride);
  cfg.init_seed = j.value("initSeed", cfg.init_seed);
  return cfg;
}

BaseLayout BaseLayout::compute(const BackboneConfig& cfg, int vocab) {
  BaseLayout bl;
  std::size_t cursor = 0;
  auto take = [&cursor](std::size_t count) {
    const std::size_t at = cursor;
    cursor += count;
    return at;
  };
  const auto d = static_cast<std::size_t>(cfg.d_l);
  const auto mlp = static_cast<std::size_t>(cfg.mlp_hidden);
  bl.enc_w = take(static_cast<std::size_t>(cfg.d_v) * cfg.input_feature_dim);
  bl.enc_b = take(cfg.d_v);
  bl.tok_emb = take(static_cast<std::size_t>(vocab) * d);
  bl.head_w = take(static_cast<std::size_t>(vocab) * d);
  bl.layer.resize(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    auto& L = bl.layer[l];
    L.wq = take(d * d);
    L.wk = take(d * d);
    L.wv = take(d * d);
    L.wo = take(d * d);
    L.w1 = take(mlp * d);
    L.b1 = take(mlp);
    L.w2 = take(d * mlp);
    L.b2 = take(d);
  }
  bl.total = cursor;
  return bl;
}

GroupLayout GroupLayout::compute(const BackboneConfig& cfg) {
  GroupLayout gl;
  std::size_t cursor = 0;
  auto take = [&cursor](std::size_t count) {
    const std::size_t at = cursor;
    cursor += count;
    return at;
  };
  const auto d = static_cast<std::size_t>(cfg.d_l);
  const auto r = static_cast<std::size_t>(cfg.rank);
  gl.proj_w = take(d * cfg.d_v);
  gl.proj_b = take(d);
  gl.slot.resize(static_cast<std::size_t>(cfg.layers) * 4);
  for (auto& s : gl.slot) {
    s.a = take(r * d);
    s.b = take(d * r);
  }
  gl.total = cursor;
  return gl;
}

CrashChatModel CrashChatModel::init(const BackboneConfig& cfg) {
  if (auto err = cfg.validate()) throw std::runtime_error("invalid model config: " + *err);

  CrashChatModel model;
  model.config = cfg;
  const int vocab = BackboneConfig::vocab_size();
  model.base_layout = BaseLayout::compute(cfg, vocab);
  model.group_layout = GroupLayout::compute(cfg);
  model.base.assign(model.base_layout.total, 0.0);

  Rng rng(cfg.init_seed);
  auto fill_normal = [&rng, &model](std::size_t at, std::size_t count, double stddev) {
    for (std::size_t i = 0; i < count; ++i) model.base[at + i] = rng.normal(0.0, stddev);
  };
  const auto& bl = model.base_layout;
  const double d = cfg.d_l;
  fill_normal(bl.enc_w, static_cast<std::size_t>(cfg.d_v) * cfg.input_feature_dim,
              1.0 / std::sqrt(static_cast<double>(cfg.input_feature_dim)));
  // enc_b stays zero
  fill_normal(bl.tok_emb, static_cast<std::size_t>(vocab) * cfg.d_l, 0.5);
  fill_normal(bl.head_w, static_cast<std::size_t>(vocab) * cfg.d_l, 1.0 / std::sqrt(d));
  for (int l = 0; l < cfg.layers; ++l) {
    const auto& L = bl.layer[l];
    const auto dd = static_cast<std::size_t>(cfg.d_l) * cfg.d_l;
    fill_normal(L.wq, dd, 1.0 / std::sqrt(d));
    fill_normal(L.wk, dd, 1.0 / std::sqrt(d));
    fill_normal(L.wv, dd, 1.0 / std::sqrt(d));
    fill_normal(L.wo, dd, 1.0 / std::sqrt(d));
    fill_normal(L.w1, static_cast<std::size_t>(cfg.mlp_hidden) * cfg.d_l, 1.0 / std::sqrt(d));
    fill_normal(L.w2, static_cast<std::size_t>(cfg.d_l) * cfg.mlp_hidden,
                1.0 / std::sqrt(static_cast<double>(cfg.mlp_hidden)));
    // b1, b2 stay zero
  }

  // one draw, copied to both groups: the projectors (and adapters) start
  // from identical values; B stays zero so the adapted model matches the
  // frozen backbone at initialization
  std::vector<double> block(model.group_layout.total, 0.0);
  const auto& gl = model.group_layout;
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.d_l) * cfg.d_v; ++i)
    block[gl.proj_w + i] = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.d_v)));
  for (const auto& s : gl.slot)
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.rank) * cfg.d_l; ++i)
      block[s.a + i] = rng.normal(0.0, 0.02);
  model.group_params[0] = block;
  model.group_params[1] = std::move(block);
  return model;
}

VideoTokens CrashChatModel::encode_video(const VideoSample& sample) const {
  if (sample.frames.frame_count <= 0) throw std::runtime_error("encode_video: empty frames");
  if (sample.frames.dim != config.input_feature_dim)
    throw std::runtime_error("encode_video: feature dimension " +
                             std::to_string(sample.frames.dim) + " does not match config " +
                             std::to_string(config.input_feature_dim));

  const int stride = config.pooling_stride;
  const int count = (sample.frames.frame_count + stride - 1) / stride;
  const int raw = config.input_feature_dim;

  VideoTokens tokens;
  tokens.count = count;
  tokens.dim = config.d_v;
  tokens.data.resize(static_cast<std::size_t>(count) * config.d_v);

  std::vector<double> pooled(static_cast<std::size_t>(count) * raw, 0.0);
  for (int p = 0; p < count; ++p) {
    const int begin = p * stride;
    const int end = std::min(begin + stride, sample.frames.frame_count);
    double* dst = pooled.data() + static_cast<std::size_t>(p) * raw;
    for (int f = begin; f < end; ++f) {
      const double* src = sample.frames.frame(f);
      for (int i = 0; i < raw; ++i) dst[i] += src[i];
    }
    const double inv = 1.0 / (end - begin);
    for (int i = 0; i < raw; ++i) dst[i] *= inv;
  }

  kernels::linear_forward(base.data() + base_layout.enc_w, base.data() + base_layout.enc_b,
                          pooled.data(), tokens.data.data(), count, config.d_v, raw);
  for (double& t : tokens.data) t = std::tanh(t);
  return tokens;
}

std::vector<double> CrashChatModel::project(const VideoTokens& tokens, TaskGroup group) const {
  const double* gp = params_of(group).data();
  std::vector<double> out(static_cast<std::size_t>(tokens.count) * config.d_l);
  kernels::linear_forward(gp + group_layout.proj_w, gp + group_layout.proj_b, tokens.data.data(),
                          out.data(), tokens.count, config.d_l, config.d_v);
  return out;
}

MultimodalSequence CrashChatModel::assemble(const std::vector<double>& projected, int video_count,
                                            const std::vector<int>& text_ids) const {
  const int d = config.d_l;
  const int text_len = static_cast<int>(text_ids.size());
  if (text_len > config.max_seq_len)
    throw std::runtime_error("assemble: text alone exceeds maxSeqLen");

  MultimodalSequence seq;
  const int keep = std::min(video_count, config.max_seq_len - text_len);
  seq.truncated = keep < video_count;
  seq.video_count = keep;
  seq.text_ids = text_ids;
  const int n = keep + text_len;
  seq.x.resize(static_cast<std::size_t>(n) * d);

  const int skipped = video_count - keep;
  std::vector<double> pos(d);
  for (int j = 0; j < keep; ++j) {
    const double* src = projected.data() + static_cast<std::size_t>(skipped + j) * d;
    double* dst = seq.x.data() + static_cast<std::size_t>(j) * d;
    position_encoding(j, d, pos.data());
    for (int i = 0; i < d; ++i) dst[i] = src[i] + pos[i];
  }
  const double* emb = base.data() + base_layout.tok_emb;
  for (int t = 0; t < text_len; ++t) {
    const double* src = emb + static_cast<std::size_t>(text_ids[t]) * d;
    double* dst = seq.x.data() + static_cast<std::size_t>(keep + t) * d;
    position_encoding(keep + t, d, pos.data());
    for (int i = 0; i < d; ++i) dst[i] = src[i] + pos[i];
  }
  return seq;
}

std::vector<double> CrashChatModel::forward_adapted(const MultimodalSequence& seq,
                                                    TaskGroup group) const {
  Trace trace;
  return run_forward(*this, seq, group, trace);
}

double CrashChatModel::loss_and_gradients(const VideoSample& video, const std::string& question,
                                          const std::string& answer, TaskGroup group,
                                          std::vector<double>* grads,
                                          int* supervised_token_count, bool answer_only) const {
  const auto& tok = Tokenizer::instance();
  const VideoTokens zv = encode_video(video);
  const std::vector<double> projected = project(zv, group);

  std::vector<int> ids;
  ids.push_back(tok.bos_id());
  for (int id : tok.encode(question)) ids.push_back(id);
  ids.push_back(tok.sep_id());
  const int ans_start = static_cast<int>(ids.size());
  const std::vector<int> ans_ids = tok.encode(answer);
  for (int id : ans_ids) ids.push_back(id);
  ids.push_back(tok.eos_id());

  const MultimodalSequence seq = assemble(projected, zv.count, ids);
  Trace trace;
  const std::vector<double> logits = run_forward(*this, seq, group, trace);

  const int vocab = BackboneConfig::vocab_size();
  const int n = seq.length();
  const int first_target = answer_only ? ans_start : 1;
  const int last_target = ans_start + static_cast<int>(ans_ids.size());  // exclusive, before eos
  const int n_supervised = last_target - first_target;
  if (supervised_token_count) *supervised_token_count = n_supervised;

  std::vector<double> dlogits;
  if (grads) dlogits.assign(static_cast<std::size_t>(n) * vocab, 0.0);

  double loss = 0.0;
  for (int a = 0; a < n_supervised; ++a) {
    const int target_pos = seq.video_count + first_target + a;
    const int p = target_pos - 1;
    const int target_id = seq.text_ids[first_target + a];
    const double* row = logits.data() + static_cast<std::size_t>(p) * vocab;
    double max_logit = row[0];
    for (int o = 1; o < vocab; ++o) max_logit = std::max(max_logit, row[o]);
    double sum = 0.0;
    for (int o = 0; o < vocab; ++o) sum += std::exp(row[o] - max_logit);
    loss += std::log(sum) + max_logit - row[target_id];
    if (grads) {
      double* drow = dlogits.data() + static_cast<std::size_t>(p) * vocab;
      const double inv = 1.0 / sum;
      for (int o = 0; o < vocab; ++o) drow[o] += std::exp(row[o] - max_logit) * inv;
      drow[target_id] -= 1.0;
    }
  }

  if (grads) {
    if (grads->size() != group_layout.total)
      throw std::runtime_error("loss_and_gradients: gradient buffer size mismatch");
    run_backward(*this, seq, group, trace, dlogits, zv, *grads);
  }
  return loss;
}

namespace {

// Incremental single-token state for greedy decoding. Values are bitwise
// identical to the full-sequence forward because every per-token loop runs
// in the same order.
struct KvCache {
  int len = 0;
  std::vector<std::vector<double>> k, v;  // per layer, [max_seq x d]
};

void step_token(const CrashChatModel& model, TaskGroup group, const double* x_row, KvCache& cache,
                double* h_out) {
  const auto& cfg = model.config;
  const int d = cfg.d_l;
  const int r = cfg.rank;
  const int mlp = cfg.mlp_hidden;
  const int heads = cfg.heads;
  const int head_dim = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const double* base = model.base.data();
  const double* gp = model.params_of(group).data();
  const auto& bl = model.base_layout;
  const auto& gl = model.group_layout;
  const int t = cache.len;

  std::vector<double> x(x_row, x_row + d);
  std::vector<double> h(d), q(d), tmp(d), lora(d), u(r), ctx(d), act(mlp), pre(mlp);

  auto adapted_row = [&](std::size_t w_at, const GroupLayout::Slot& s, const double* in,
                         double* out) {
    kernels::ref::matvec(base + w_at, nullptr, in, out, d, d);
    kernels::ref::matvec(gp + s.a, nullptr, in, u.data(), r, d);
    kernels::ref::matvec(gp + s.b, nullptr, u.data(), lora.data(), d, r);
    for (int i = 0; i < d; ++i) out[i] += lora[i];
  };

  for (int l = 0; l < cfg.layers; ++l) {
    const auto& L = bl.layer[l];
    double inv = 0.0;
    kernels::ref::rmsnorm_forward(x.data(), h.data(), &inv, 1, d);

    double* krow = cache.k[l].data() + static_cast<std::size_t>(t) * d;
    double* vrow = cache.v[l].data() + static_cast<std::size_t>(t) * d;
    adapted_row(L.wq, gl.slot[l * 4 + 0], h.data(), q.data());
    adapted_row(L.wk, gl.slot[l * 4 + 1], h.data(), krow);
    adapted_row(L.wv, gl.slot[l * 4 + 2], h.data(), vrow);

    for (int hd = 0; hd < heads; ++hd) {
      const double* qh = q.data() + hd * head_dim;
      std::vector<double> p(static_cast<std::size_t>(t) + 1);
      double max_score = -1e300;
      for (int s = 0; s <= t; ++s) {
        const double* ks = cache.k[l].data() + static_cast<std::size_t>(s) * d + hd * head_dim;
        double acc = 0.0;
        for (int i = 0; i < head_dim; ++i) acc += qh[i] * ks[i];
        p[s] = acc * scale;
        if (p[s] > max_score) max_score = p[s];
      }
      double sum = 0.0;
      for (int s = 0; s <= t; ++s) {
        p[s] = std::exp(p[s] - max_score);
        sum += p[s];
      }
      const double invsum = 1.0 / sum;
      for (int s = 0; s <= t; ++s) p[s] *= invsum;
      double* ch = ctx.data() + hd * head_dim;
      for (int i = 0; i < head_dim; ++i) {
        double acc = 0.0;
        for (int s = 0; s <= t; ++s)
          acc += p[s] * cache.v[l][static_cast<std::size_t>(s) * d + hd * head_dim + i];
        ch[i] = acc;
      }
    }

    adapted_row(L.wo, gl.slot[l * 4 + 3], ctx.data(), tmp.data());
    for (int i = 0; i < d; ++i) x[i] += tmp[i];

    double inv2 = 0.0;
    kernels::ref::rmsnorm_forward(x.data(), h.data(), &inv2, 1, d);
    kernels::ref::matvec(base + L.w1, base + L.b1, h.data(), pre.data(), mlp, d);
    for (int i = 0; i < mlp; ++i) act[i] = gelu(pre[i]);
    kernels::ref::matvec(base + L.w2, base + L.b2, act.data(), tmp.data(), d, mlp);
    for (int i = 0; i < d; ++i) x[i] += tmp[i];
  }

  double inv_f = 0.0;
  kernels::ref::rmsnorm_forward(x.data(), h_out, &inv_f, 1, d);
  cache.len = t + 1;
}

}  // namespace

GenerateResult CrashChatModel::generate(const VideoSample& video, const std::string& prompt,
                                        TaskGroup group, const DecodingConfig& decoding) const {
  const auto& tok = Tokenizer::instance();
  const VideoTokens zv = encode_video(video);
  const std::vector<double> projected = project(zv, group);

  std::vector<int> ids;
  ids.push_back(tok.bos_id());
  for (int id : tok.encode(prompt)) ids.push_back(id);
  ids.push_back(tok.sep_id());
  const MultimodalSequence seq = assemble(projected, zv.count, ids);

  const int d = config.d_l;
  const int vocab = BackboneConfig::vocab_size();
  KvCache cache;
  cache.k.assign(config.layers, std::vector<double>(static_cast<std::size_t>(config.max_seq_len) * d, 0.0));
  cache.v.assign(config.layers, std::vector<double>(static_cast<std::size_t>(config.max_seq_len) * d, 0.0));

  std::vector<double> h(d);
  for (int p = 0; p < seq.length(); ++p)
    step_token(*this, group, seq.x.data() + static_cast<std::size_t>(p) * d, cache, h.data());

  GenerateResult result;
  if (decoding.max_new_tokens <= 0) {
    result.truncated = true;
    return result;
  }

  std::vector<double> logits(vocab);
  std::vector<double> x_row(d), pos(d);
  const double* emb = base.data() + base_layout.tok_emb;
  int position = seq.length();
  int prev_id = -1;
  bool stopped = false;

  for (int step = 0; step < decoding.max_new_tokens; ++step) {
    kernels::ref::matvec(base.data() + base_layout.head_w, nullptr, h.data(), logits.data(), vocab,
                         d);
    int next = 0;
    for (int o = 1; o < vocab; ++o)
      if (logits[o] > logits[next]) next = o;

    if (next == tok.eos_id()) {
      stopped = true;
      break;
    }
    result.token_ids.push_back(next);

    const std::string& text = tok.token(next);
    const bool prev_digit =
        prev_id >= 0 && tok.token(prev_id).size() == 1 &&
        std::isdigit(static_cast<unsigned char>(tok.token(prev_id)[0]));
    if (decoding.stop_at_sentence_end && text == "." && !prev_digit) {
      stopped = true;
      break;
    }
    prev_id = next;

    if (position >= config.max_seq_len) {
      result.truncated = true;
      stopped = true;
      break;
    }
    const double* src = emb + static_cast<std::size_t>(next) * d;
    position_encoding(position, d, pos.data());
    for (int i = 0; i < d; ++i) x_row[i] = src[i] + pos[i];
    step_token(*this, group, x_row.data(), cache, h.data());
    ++position;
  }
  if (!stopped) result.truncated = true;

  result.text = tok.decode(result.token_ids);
  return result;
}

json CrashChatModel::config_meta() const {
  char hash_buf[17];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                static_cast<unsigned long long>(Tokenizer::instance().vocab_hash()));
  return json{{"config", config.to_json()}, {"vocabHash", std::string(hash_buf)}};
}

json CheckpointProvenance::to_json() const {
  return json{{"regime", regime}, {"group", group}, {"tasks", tasks}};
}

CheckpointProvenance CheckpointProvenance::from_json(const json& j) {
  CheckpointProvenance p;
  p.regime = j.value("regime", "");
  p.group = j.value("group", "");
  p.tasks = j.value("tasks", "");
  return p;
}

void save_checkpoint(const CrashChatModel& model, const CheckpointProvenance& provenance,
                     const std::string& path) {
  RawCheckpoint raw;
  raw.meta = model.config_meta();
  raw.meta["provenance"] = provenance.to_json();
  raw.base = model.base;
  raw.lc = model.group_params[0];
  raw.pc = model.group_params[1];
  write_checkpoint_raw(raw, path);
}

void write_checkpoint_raw(const RawCheckpoint& raw, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.is_open()) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string meta = raw.meta.dump();
  write_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  for (const auto* block : {&raw.base, &raw.lc, &raw.pc}) {
    write_u64(out, block->size());
    out.write(reinterpret_cast<const char*>(block->data()),
              static_cast<std::streamsize>(block->size() * sizeof(double)));
  }
  if (!out.good()) throw std::runtime_error("failed while writing checkpoint: " + path);
}

RawCheckpoint read_checkpoint_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.is_open()) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const std::uint32_t meta_len = read_u32(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), meta_len);
  RawCheckpoint raw;
  raw.meta = json::parse(meta);
  for (auto* block : {&raw.base, &raw.lc, &raw.pc}) {
    const std::uint64_t count = read_u64(in);
    block->resize(count);
    in.read(reinterpret_cast<char*>(block->data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  }
  if (!in.good()) throw std::runtime_error("failed while reading checkpoint: " + path);
  return raw;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  RawCheckpoint raw = read_checkpoint_raw(path);
  LoadedCheckpoint loaded;
  loaded.model.config = BackboneConfig::from_json(raw.meta.at("config"));
  if (auto err = loaded.model.config.validate())
    throw std::runtime_error("checkpoint config invalid: " + *err);

  char hash_buf[17];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                static_cast<unsigned long long>(Tokenizer::instance().vocab_hash()));
  if (raw.meta.value("vocabHash", "") != std::string(hash_buf))
    throw std::runtime_error("checkpoint vocabulary does not match this build: " + path);

  const int vocab = BackboneConfig::vocab_size();
  loaded.model.base_layout = BaseLayout::compute(loaded.model.config, vocab);
  loaded.model.group_layout = GroupLayout::compute(loaded.model.config);
  if (raw.base.size() != loaded.model.base_layout.total ||
      raw.lc.size() != loaded.model.group_layout.total ||
      raw.pc.size() != loaded.model.group_layout.total)
    throw std::runtime_error("checkpoint block sizes do not match config: " + path);
  loaded.model.base = std::move(raw.base);
  loaded.model.group_params[0] = std::move(raw.lc);
  loaded.model.group_params[1] = std::move(raw.pc);
  if (raw.meta.contains("provenance"))
    loaded.provenance = CheckpointProvenance::from_json(raw.meta.at("provenance"));
  return loaded;
}

}  // namespace crashchat
