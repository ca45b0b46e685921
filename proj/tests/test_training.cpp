#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "crashchat/training.hpp"

using namespace crashchat;
namespace fs = std::filesystem;

namespace {

BackboneConfig tiny_config() {
  BackboneConfig cfg;
  cfg.input_feature_dim = 16;
  cfg.d_v = 16;
  cfg.d_l = 32;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.mlp_hidden = 64;
  cfg.max_seq_len = 64;
  cfg.rank = 4;
  cfg.pooling_stride = 4;
  cfg.init_seed = 400;
  return cfg;
}

DatasetBundle tiny_dataset(int pos, int neg, std::uint64_t seed = 51) {
  SyntheticConfig cfg;
  cfg.num_positive = pos;
  cfg.num_negative = neg;
  cfg.feature_dim = 16;
  cfg.seed = seed;
  const SyntheticResult synth = generate_synthetic(cfg);
  DatasetBundle bundle;
  bundle.samples = synth.samples;
  bundle.texts = synth.texts;
  bundle.qa = build_qa_pairs(bundle.samples, bundle.texts);
  bundle.split = stratified_split(bundle.samples, SplitSpec{}).index;
  return bundle;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool file_bytes_equal(const std::string& a, const std::string& b) {
  return read_text_file(a) == read_text_file(b);
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("regime constructors and validation") {
    const Regime ind = Regime::independent(TaskId::PreCrashLocalization);
    CHECK(ind.task_set.size() == 1);
    CHECK(ind.target_group == TaskGroup::Pc);
    CHECK_FALSE(ind.validate().has_value());
    CHECK(ind.name() == "independent-f");

    const Regime homo = Regime::homogeneous(TaskGroup::Lc);
    CHECK(homo.task_set.size() == 4);
    CHECK(homo.name() == "homogeneous-lc");

    const Regime hetero = Regime::heterogeneous();
    CHECK(hetero.task_set.size() == 6);
    CHECK(hetero.target_group == TaskGroup::Lc);
    CHECK(hetero.task_codes() == "abcdef");

    Regime broken = hetero;
    broken.target_group = TaskGroup::Pc;
    CHECK(broken.validate().has_value());
  }

  TEST_CASE("answer-only masking on a one-token answer is that token's NLL") {
    const CrashChatModel model = CrashChatModel::init(tiny_config());
    const DatasetBundle data = tiny_dataset(2, 2);
    const VideoSample& video = data.samples.front();
    const auto& tok = Tokenizer::instance();

    const std::string question = "does the video contain a crash event?";
    const std::string answer = "yes";

    int tokens = 0;
    const double loss =
        model.loss_and_gradients(video, question, answer, TaskGroup::Lc, nullptr, &tokens);
    REQUIRE(tokens == 1);

    // independent evaluation: logits at the <sep> position, softmaxed by hand
    const VideoTokens zv = model.encode_video(video);
    std::vector<int> ids;
    ids.push_back(tok.bos_id());
    for (int id : tok.encode(question)) ids.push_back(id);
    ids.push_back(tok.sep_id());
    const std::size_t sep_pos_in_text = ids.size() - 1;
    ids.push_back(tok.id_of("yes"));
    ids.push_back(tok.eos_id());
    const MultimodalSequence seq =
        model.assemble(model.project(zv, TaskGroup::Lc), zv.count, ids);
    const std::vector<double> logits = model.forward_adapted(seq, TaskGroup::Lc);

    const int vocab = BackboneConfig::vocab_size();
    const double* row =
        logits.data() + (seq.video_count + sep_pos_in_text) * static_cast<std::size_t>(vocab);
    double max_logit = row[0];
    for (int o = 1; o < vocab; ++o) max_logit = std::max(max_logit, row[o]);
    double sum = 0.0;
    for (int o = 0; o < vocab; ++o) sum += std::exp(row[o] - max_logit);
    const double nll = std::log(sum) + max_logit - row[tok.id_of("yes")];
    CHECK(loss == doctest::Approx(nll).epsilon(1e-12));
  }

  TEST_CASE("a step on a realizable target decreases the loss") {
    CrashChatModel model = CrashChatModel::init(tiny_config());
    const DatasetBundle data = tiny_dataset(3, 3);
    const auto& tok = Tokenizer::instance();

    // reference answer = the most-probable token that round-trips through
    // the tokenizer (the target is realizable under the current model)
    std::vector<QAPair> qa_storage;
    std::vector<TrainExample> batch;
    const int vocab = BackboneConfig::vocab_size();
    for (int i = 0; i < 3; ++i) {
      const VideoSample& video = data.samples[i];
      const std::string question = "does the video contain a crash event?";

      const VideoTokens zv = model.encode_video(video);
      std::vector<int> ids;
      ids.push_back(tok.bos_id());
      for (int id : tok.encode(question)) ids.push_back(id);
      ids.push_back(tok.sep_id());
      const MultimodalSequence seq =
          model.assemble(model.project(zv, TaskGroup::Lc), zv.count, ids);
      const std::vector<double> logits = model.forward_adapted(seq, TaskGroup::Lc);
      const double* row = logits.data() + static_cast<std::size_t>(seq.length() - 1) * vocab;

      int best = -1;
      for (int o = 0; o < vocab; ++o) {
        if (tok.encode(tok.token(o)) != std::vector<int>{o}) continue;
        if (best < 0 || row[o] > row[best]) best = o;
      }
      REQUIRE(best >= 0);
      qa_storage.push_back(QAPair{video.video_id, TaskId::Recognition, question, tok.token(best)});
    }
    for (int i = 0; i < 3; ++i) batch.push_back({&qa_storage[i], &data.samples[i]});

    TrainConfig cfg;
    cfg.regime = Regime::heterogeneous();
    cfg.learning_rate = 1e-3;
    SftState state;

    const double before = sft_step(model, batch, TaskGroup::Lc, state, cfg).loss;
    // evaluate the same batch again after the update, without stepping
    double after_sum = 0.0;
    int after_tokens = 0;
    for (const auto& ex : batch) {
      int t = 0;
      after_sum += model.loss_and_gradients(*ex.video, ex.qa->question, ex.qa->reference_answer,
                                            TaskGroup::Lc, nullptr, &t);
      after_tokens += t;
    }
    CHECK(after_sum / after_tokens < before);
  }

  TEST_CASE("only the target group's block moves") {
    CrashChatModel model = CrashChatModel::init(tiny_config());
    const DatasetBundle data = tiny_dataset(3, 3);
    const std::vector<double> base_before = model.base;
    const std::vector<double> pc_before = model.params_of(TaskGroup::Pc);
    const std::vector<double> lc_before = model.params_of(TaskGroup::Lc);

    std::vector<TrainExample> batch;
    for (const QAPair& qa : data.qa) {
      if (batch.size() == 4) break;
      batch.push_back({&qa, data.find(qa.video_id)});
    }
    TrainConfig cfg;
    cfg.regime = Regime::heterogeneous();
    SftState state;
    sft_step(model, batch, TaskGroup::Lc, state, cfg);

    CHECK(same_bits(model.base, base_before));
    CHECK(same_bits(model.params_of(TaskGroup::Pc), pc_before));
    CHECK_FALSE(same_bits(model.params_of(TaskGroup::Lc), lc_before));
  }

  TEST_CASE("tasks outside the regime are rejected") {
    CrashChatModel model = CrashChatModel::init(tiny_config());
    const DatasetBundle data = tiny_dataset(2, 2);
    const QAPair* loc_qa = nullptr;
    for (const QAPair& qa : data.qa)
      if (qa.task == TaskId::CrashLocalization) loc_qa = &qa;
    REQUIRE(loc_qa != nullptr);

    TrainConfig cfg;
    cfg.regime = Regime::homogeneous(TaskGroup::Lc);
    SftState state;
    std::vector<TrainExample> batch = {{loc_qa, data.find(loc_qa->video_id)}};
    CHECK_THROWS(sft_step(model, batch, TaskGroup::Lc, state, cfg));
  }

  TEST_CASE("non-finite loss aborts with diagnostics") {
    CrashChatModel model = CrashChatModel::init(tiny_config());
    const DatasetBundle data = tiny_dataset(2, 2);
    model.params_of(TaskGroup::Lc)[0] = std::nan("");

    TrainConfig cfg;
    cfg.regime = Regime::heterogeneous();
    SftState state;
    std::vector<TrainExample> batch = {{&data.qa.front(), data.find(data.qa.front().video_id)}};
    CHECK_THROWS_WITH_AS(sft_step(model, batch, TaskGroup::Lc, state, cfg),
                         doctest::Contains("non-finite"), std::runtime_error);
  }

  TEST_CASE("heterogeneous training leaves the Pc block at initialization") {
    const CrashChatModel init_model = CrashChatModel::init(tiny_config());
    const DatasetBundle data = tiny_dataset(6, 6);

    TrainConfig cfg;
    cfg.regime = Regime::heterogeneous();
    cfg.epochs = 2;
    const TrainOutcome outcome = train_regime(init_model, cfg, data);

    CHECK(same_bits(outcome.model.params_of(TaskGroup::Pc),
                    init_model.params_of(TaskGroup::Pc)));
    CHECK_FALSE(same_bits(outcome.model.params_of(TaskGroup::Lc),
                          init_model.params_of(TaskGroup::Lc)));
    CHECK(same_bits(outcome.model.base, init_model.base));
    CHECK_FALSE(outcome.log.empty());
  }

  TEST_CASE("independent runs touch only their own group") {
    const CrashChatModel init_model = CrashChatModel::init(tiny_config());
    const DatasetBundle data = tiny_dataset(6, 6);

    TrainConfig cfg;
    cfg.regime = Regime::independent(TaskId::PreCrashLocalization);
    cfg.epochs = 2;
    const TrainOutcome outcome = train_regime(init_model, cfg, data);

    CHECK(same_bits(outcome.model.params_of(TaskGroup::Lc), init_model.params_of(TaskGroup::Lc)));
    CHECK_FALSE(same_bits(outcome.model.params_of(TaskGroup::Pc),
                          init_model.params_of(TaskGroup::Pc)));
  }

  TEST_CASE("training is reproducible: identical checkpoints for identical seeds") {
    const CrashChatModel init_model = CrashChatModel::init(tiny_config());
    const DatasetBundle data = tiny_dataset(4, 4);

    TrainConfig cfg;
    cfg.regime = Regime::homogeneous(TaskGroup::Pc);
    cfg.epochs = 2;
    cfg.seed = 99;

    const TrainOutcome a = train_regime(init_model, cfg, data);
    const TrainOutcome b = train_regime(init_model, cfg, data);
    save_checkpoint(a.model, {"homogeneous", "pc", "ef"}, "train_repro_a.ckpt");
    save_checkpoint(b.model, {"homogeneous", "pc", "ef"}, "train_repro_b.ckpt");
    CHECK(file_bytes_equal("train_repro_a.ckpt", "train_repro_b.ckpt"));
    std::remove("train_repro_a.ckpt");
    std::remove("train_repro_b.ckpt");

    TrainConfig other = cfg;
    other.seed = 100;
    const TrainOutcome c = train_regime(init_model, other, data);
    CHECK_FALSE(same_bits(a.model.params_of(TaskGroup::Pc), c.model.params_of(TaskGroup::Pc)));
  }

  TEST_CASE("empty task subset in the data is an error") {
    const CrashChatModel init_model = CrashChatModel::init(tiny_config());
    const DatasetBundle all_negative = tiny_dataset(0, 8);
    TrainConfig cfg;
    cfg.regime = Regime::homogeneous(TaskGroup::Pc);  // e/f pairs need positives
    cfg.epochs = 1;
    CHECK_THROWS_WITH_AS(train_regime(init_model, cfg, all_negative),
                         doctest::Contains("no training data"), std::runtime_error);
  }

  TEST_CASE("train log covers every epoch, task and split") {
    const CrashChatModel init_model = CrashChatModel::init(tiny_config());
    const DatasetBundle data = tiny_dataset(4, 4);
    TrainConfig cfg;
    cfg.regime = Regime::homogeneous(TaskGroup::Pc);
    cfg.epochs = 2;
    const TrainOutcome outcome = train_regime(init_model, cfg, data);

    int train_rows = 0, val_rows = 0;
    for (const auto& row : outcome.log) {
      CHECK(row.epoch >= 1);
      CHECK(row.epoch <= 2);
      (row.split == "train" ? train_rows : val_rows)++;
    }
    CHECK(train_rows == 2 * 3);  // tasks e, f and "all" per epoch
    CHECK(val_rows == 2 * 3);

    write_train_log_csv("train_log_test.csv", outcome.log);
    const std::string csv = read_text_file("train_log_test.csv");
    CHECK(csv.rfind("epoch,task,split,loss\n", 0) == 0);
    std::remove("train_log_test.csv");
  }

  TEST_CASE("assembled pair behaves exactly like its donors") {
    const CrashChatModel init_model = CrashChatModel::init(tiny_config());
    const DatasetBundle data = tiny_dataset(6, 6);

    TrainConfig hetero_cfg;
    hetero_cfg.regime = Regime::heterogeneous();
    hetero_cfg.epochs = 2;
    const TrainOutcome hetero = train_regime(init_model, hetero_cfg, data);

    TrainConfig pc_cfg;
    pc_cfg.regime = Regime::homogeneous(TaskGroup::Pc);
    pc_cfg.epochs = 2;
    const TrainOutcome homo_pc = train_regime(init_model, pc_cfg, data);

    save_checkpoint(hetero.model, {"heterogeneous", "lc", "abcdef"}, "asm_hetero.ckpt");
    save_checkpoint(homo_pc.model, {"homogeneous", "pc", "ef"}, "asm_pc.ckpt");
    assemble_crashchat("asm_hetero.ckpt", "asm_pc.ckpt", "asm_out.ckpt");

    const LoadedCheckpoint assembled = load_checkpoint("asm_out.ckpt");
    CHECK(assembled.provenance.regime == "assembled");
    CHECK(same_bits(assembled.model.params_of(TaskGroup::Lc),
                    hetero.model.params_of(TaskGroup::Lc)));
    CHECK(same_bits(assembled.model.params_of(TaskGroup::Pc),
                    homo_pc.model.params_of(TaskGroup::Pc)));

    // identical behavior on both paths
    const VideoSample& video = data.samples.front();
    const GenerateResult lc_a = assembled.model.generate(video, "describe the crash event in the video.",
                                                         TaskGroup::Lc);
    const GenerateResult lc_b = hetero.model.generate(video, "describe the crash event in the video.",
                                                      TaskGroup::Lc);
    CHECK(lc_a.text == lc_b.text);
    const GenerateResult pc_a = assembled.model.generate(video, "when does the crash occur in the video?",
                                                         TaskGroup::Pc);
    const GenerateResult pc_b = homo_pc.model.generate(video, "when does the crash occur in the video?",
                                                       TaskGroup::Pc);
    CHECK(pc_a.text == pc_b.text);

    // swapped arguments violate the role contract
    CHECK_THROWS_WITH_AS(assemble_crashchat("asm_pc.ckpt", "asm_hetero.ckpt", "asm_bad.ckpt"),
                         doctest::Contains("heterogeneous"), std::runtime_error);

    std::remove("asm_hetero.ckpt");
    std::remove("asm_pc.ckpt");
    std::remove("asm_out.ckpt");
  }
}
