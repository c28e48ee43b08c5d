#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sovmas/synth.hpp"
#include "sovmas/trainer.hpp"

using namespace sovmas;

namespace {

struct Setup {
  Corpus corpus;
  CorpusSplit split;
  ModelConfig cfg;
  TrainConfig tc;
};

Setup small_setup(int64_t per_lang = 40, int64_t steps = 30) {
  SynthSpec spec;
  spec.languages = 2;
  spec.sizes = {per_lang, per_lang};
  spec.vocab_size = 96;
  spec.detector_classes = 8;
  spec.n_images = 2;
  spec.min_images = 2;  // two-token summaries, so exact matches score on bigrams
  spec.regions_per_image = 3;
  spec.d_v = 8;

  Setup s;
  s.corpus = synth_corpus(11, spec);
  s.split = split_corpus(s.corpus, ResourceTier::kLow, 5);

  s.cfg.vocab_size = 96;
  s.cfg.d = 16;
  s.cfg.d_c = 16;
  s.cfg.d_v = 8;
  s.cfg.text_layers = 1;
  s.cfg.vision_layers = 1;
  s.cfg.heads = 2;
  s.cfg.ffn_dim = 32;
  s.cfg.max_text_len = 12;
  s.cfg.max_summary_len = 5;
  s.cfg.n_images = 2;
  s.cfg.regions_per_image = 3;
  s.cfg.detector_classes = 8;
  s.cfg.dropout = 0.1;

  s.tc.mode = TrainMode::kMultilingual;
  s.tc.steps = steps;
  s.tc.batch_size = 4;
  s.tc.schedule = {2e-3, 20, LrScheduleKind::kInverseSqrtWarmup};
  s.tc.seed = 9;
  return s;
}

std::string tmp_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p.string();
}

}  // namespace

TEST_CASE("fixed seed fixes the whole trajectory bit-exactly") {
  Setup a = small_setup();
  Setup b = small_setup();
  SovMasModel<float> ma(a.cfg, 3), mb(b.cfg, 3);
  AdamState<float> oa, ob;
  RunMetrics ra = train(ma, oa, a.corpus, a.split, a.tc);
  RunMetrics rb = train(mb, ob, b.corpus, b.split, b.tc);
  REQUIRE(ra.steps.size() == rb.steps.size());
  for (size_t i = 0; i < ra.steps.size(); ++i) {
    CHECK(ra.steps[i].lang == rb.steps[i].lang);
    CHECK(ra.steps[i].l_mas == rb.steps[i].l_mas);
    CHECK(ra.steps[i].l_v2s == rb.steps[i].l_v2s);
    CHECK(ra.steps[i].l_mim == rb.steps[i].l_mim);
    CHECK(ra.steps[i].j == rb.steps[i].j);
  }
  auto pa = ma.parameters(), pb = mb.parameters();
  for (size_t i = 0; i < pa.size(); ++i)
    for (int64_t j = 0; j < pa[i].numel(); ++j) CHECK(pa[i].at(j) == pb[i].at(j));
}

TEST_CASE("objective falls while overfitting a small corpus (9 of 10 seeds)") {
  SynthSpec spec;
  spec.languages = 1;
  spec.sizes = {16};
  spec.vocab_size = 96;
  spec.detector_classes = 8;
  spec.n_images = 2;
  spec.regions_per_image = 3;
  spec.d_v = 8;
  spec.informativeness = 0.5;
  Corpus corpus = synth_corpus(2, spec);
  CorpusSplit split;
  for (const auto& ex : corpus.examples) split.train.push_back(ex.id);

  ModelConfig cfg = small_setup().cfg;
  int descended = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    SovMasModel<float> model(cfg, seed);
    AdamState<float> opt;
    TrainConfig tc = small_setup().tc;
    tc.steps = 500;
    tc.batch_size = 8;
    tc.seed = seed;
    RunMetrics m = train(model, opt, corpus, split, tc);
    if (m.steps[499].j < m.steps[9].j) ++descended;
  }
  CHECK(descended >= 9);
}

TEST_CASE("checkpoint round trip reproduces evaluation bit-exactly") {
  Setup s = small_setup(30, 25);
  SovMasModel<float> model(s.cfg, 4);
  AdamState<float> opt;
  train(model, opt, s.corpus, s.split, s.tc);

  DecodeConfig dc{4, 0.6, -1};
  RougeTable before = evaluate(model, s.corpus, s.split.test, dc);

  const std::string path = tmp_dir("sovmas_rt") + ".sovm";
  save_model_checkpoint(path, model, &opt);
  SovMasModel<float> loaded(s.cfg, 999);  // different init, fully overwritten
  AdamState<float> opt2;
  const bool had_opt = load_model_checkpoint(path, loaded, &opt2);
  CHECK(had_opt);
  CHECK(opt2.step == opt.step);

  RougeTable after = evaluate(loaded, s.corpus, s.split.test, dc);
  REQUIRE(after.rows.size() == before.rows.size());
  for (size_t i = 0; i < before.rows.size(); ++i) {
    CHECK(after.rows[i].r1 == before.rows[i].r1);
    CHECK(after.rows[i].r2 == before.rows[i].r2);
    CHECK(after.rows[i].rl == before.rows[i].rl);
  }
  std::filesystem::remove(path);
}

TEST_CASE("evaluation aggregates: perfect match, empty candidates, average row") {
  Setup s = small_setup();
  std::vector<int64_t> ids(s.split.test.begin(), s.split.test.end());

  RougeTable perfect = score_candidates(s.corpus, ids, [&](int64_t idx) {
    return s.corpus.examples[static_cast<size_t>(idx)].summary_ids;
  });
  CHECK(perfect.average.r1 == doctest::Approx(100.0));
  CHECK(perfect.average.r2 == doctest::Approx(100.0));
  CHECK(perfect.average.rl == doctest::Approx(100.0));

  RougeTable nothing = score_candidates(s.corpus, ids, [](int64_t) {
    return std::vector<int32_t>{};
  });
  CHECK(nothing.average.r1 == doctest::Approx(0.0));
  CHECK(nothing.average.rl == doctest::Approx(0.0));

  // the average row is the unweighted mean over language rows
  RougeTable mixed = score_candidates(s.corpus, ids, [&](int64_t idx) {
    const auto& ex = s.corpus.examples[static_cast<size_t>(idx)];
    if (ex.lang == "l0") return ex.summary_ids;  // perfect on l0 only
    return std::vector<int32_t>{};
  });
  REQUIRE(mixed.rows.size() == 2);
  double mean_r1 = 0;
  for (const auto& row : mixed.rows) mean_r1 += row.r1;
  CHECK(mixed.average.r1 == doctest::Approx(mean_r1 / 2.0));

  CHECK_THROWS_AS(score_candidates(s.corpus, std::vector<int64_t>{},
                                   [](int64_t) { return std::vector<int32_t>{}; }),
                  std::invalid_argument);
}

TEST_CASE("run directory artifacts: metrics log, loss csv, final checkpoint") {
  Setup s = small_setup(20, 8);
  s.tc.eval_interval = 4;
  SovMasModel<float> model(s.cfg, 6);
  AdamState<float> opt;
  const std::string dir = tmp_dir("sovmas_rundir");
  RunMetrics m = train(model, opt, s.corpus, s.split, s.tc, dir);
  CHECK(m.steps.size() == 8);
  CHECK(m.evals.size() == 2);

  std::ifstream metrics(dir + "/metrics.jsonl");
  REQUIRE(metrics.good());
  std::string line;
  int64_t lines = 0, evals = 0;
  while (std::getline(metrics, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("validation_l_mas"))
      ++evals;
    else {
      CHECK(j.at("step").get<int64_t>() == lines + 1);
      ++lines;
    }
  }
  CHECK(lines == 8);
  CHECK(evals == 2);

  std::ifstream csv(dir + "/losses.csv");
  std::getline(csv, line);
  CHECK(line == "step,l_mas,l_vis2sum,l_mim,j,lr");

  CHECK(std::filesystem::exists(dir + "/checkpoint_final.sovm"));
  CHECK(std::filesystem::exists(dir + "/checkpoint_best.sovm"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("few-shot continuation") {
  Setup s = small_setup(30, 10);
  SovMasModel<float> model(s.cfg, 8);
  AdamState<float> opt;
  train(model, opt, s.corpus, s.split, s.tc);
  const std::string path = tmp_dir("sovmas_fs") + ".sovm";
  save_model_checkpoint(path, model, &opt);

  SUBCASE("zero extra steps returns the checkpoint unchanged") {
    SovMasModel<float> cont(s.cfg, 123);
    AdamState<float> opt2;
    TrainConfig tc = s.tc;
    tc.steps = 0;
    few_shot_continue(cont, opt2, path, s.corpus, tc);
    auto pa = model.parameters(), pb = cont.parameters();
    for (size_t i = 0; i < pa.size(); ++i)
      for (int64_t j = 0; j < pa[i].numel(); ++j) CHECK(pa[i].at(j) == pb[i].at(j));
  }

  SUBCASE("metrics continue from the prior step counter") {
    SovMasModel<float> cont(s.cfg, 124);
    AdamState<float> opt2;
    TrainConfig tc = s.tc;
    tc.steps = 5;
    RunMetrics m = few_shot_continue(cont, opt2, path, s.corpus, tc);
    REQUIRE(m.steps.size() == 5);
    CHECK(m.steps.front().step == 11);
    CHECK(m.steps.back().step == 15);
  }

  SUBCASE("checkpoint without optimizer state restarts the optimizer") {
    const std::string bare = tmp_dir("sovmas_fs_bare") + ".sovm";
    save_model_checkpoint(bare, model, nullptr);
    SovMasModel<float> cont(s.cfg, 125);
    AdamState<float> opt2;
    TrainConfig tc = s.tc;
    tc.steps = 2;
    RunMetrics m = few_shot_continue(cont, opt2, bare, s.corpus, tc);
    CHECK(m.steps.front().step == 1);  // fresh counter
    std::filesystem::remove(bare);
  }
  std::filesystem::remove(path);
}

TEST_CASE("non-finite losses skip steps and abort after three in a row") {
  Setup s = small_setup(20, 10);
  SovMasModel<float> model(s.cfg, 10);
  // poison one parameter
  for (auto& [name, t] : model.named_parameters())
    if (name == "decoder.out_proj.b")
      t.mutable_values()[0] = std::numeric_limits<float>::quiet_NaN();
  AdamState<float> opt;
  CHECK_THROWS_WITH_AS(train(model, opt, s.corpus, s.split, s.tc),
                       doctest::Contains("3 consecutive non-finite"), std::runtime_error);
}

TEST_CASE("zero auxiliary weights reduce to plain summarization training") {
  Setup s = small_setup(20, 6);
  s.tc.weights.alpha = 0.0;
  s.tc.weights.beta = 0.0;
  SovMasModel<float> model(s.cfg, 12);
  AdamState<float> opt;
  RunMetrics m = train(model, opt, s.corpus, s.split, s.tc);
  for (const auto& step : m.steps) {
    CHECK(step.j == doctest::Approx(step.l_mas));
    CHECK(step.l_v2s > 0.0);  // still evaluated and logged
    CHECK(step.l_mim >= 0.0);
  }
}

TEST_CASE("mask mode off with positive beta is rejected") {
  Setup s = small_setup();
  s.tc.mask_mode = MaskMode::kOff;
  s.tc.weights.beta = 1.0;
  SovMasModel<float> model(s.cfg, 13);
  AdamState<float> opt;
  CHECK_THROWS_AS(train(model, opt, s.corpus, s.split, s.tc), std::invalid_argument);

  s.tc.weights.beta = 0.0;
  CHECK_NOTHROW(train(model, opt, s.corpus, s.split, s.tc));
}

TEST_CASE("random-region masking trains too") {
  Setup s = small_setup(20, 6);
  s.tc.mask_mode = MaskMode::kMrm;
  SovMasModel<float> model(s.cfg, 14);
  AdamState<float> opt;
  RunMetrics m = train(model, opt, s.corpus, s.split, s.tc);
  CHECK(m.steps.size() == 6);
}

TEST_CASE("teacher-forced accuracy is a proper rate over both task paths") {
  Setup s = small_setup(20, 0);
  SovMasModel<float> model(s.cfg, 15);
  for (TaskPath path : {TaskPath::kMas, TaskPath::kVis2Sum}) {
    const double acc = teacher_forced_accuracy(model, s.corpus, s.split.test, path);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
}
