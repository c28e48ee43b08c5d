#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "sovmas/dataio.hpp"
#include "sovmas/synth.hpp"
#include "sovmas/tensor.hpp"

using namespace sovmas;

namespace {

std::string tmp_file(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

SynthSpec default_spec() {
  SynthSpec spec;
  spec.languages = 2;
  spec.sizes = {20, 12};
  spec.vocab_size = 128;
  spec.detector_classes = 8;
  spec.n_images = 3;
  spec.regions_per_image = 4;
  spec.d_v = 6;
  return spec;
}

}  // namespace

TEST_CASE("write/load round trip is the identity on every field") {
  const Corpus corpus = synth_corpus(42, default_spec());
  const std::string manifest = tmp_file("sovmas_corpus_rt.jsonl");
  write_corpus(manifest, corpus);
  const Corpus back = load_corpus(manifest);

  REQUIRE(back.examples.size() == corpus.examples.size());
  CHECK(back.meta.n_images == corpus.meta.n_images);
  CHECK(back.meta.regions_per_image == corpus.meta.regions_per_image);
  CHECK(back.meta.d_v == corpus.meta.d_v);
  CHECK(back.meta.detector_classes == corpus.meta.detector_classes);
  for (size_t i = 0; i < corpus.examples.size(); ++i) {
    const auto& a = corpus.examples[i];
    const auto& b = back.examples[i];
    CHECK(a.id == b.id);
    CHECK(a.lang == b.lang);
    CHECK(a.article_ids == b.article_ids);
    CHECK(a.summary_ids == b.summary_ids);
    CHECK(a.n_images_present == b.n_images_present);
    CHECK(a.features == b.features);  // f32 in, f32 out: bitwise
    CHECK(a.boxes == b.boxes);
    CHECK(a.class_dists == b.class_dists);
  }
  std::filesystem::remove(manifest);
  std::filesystem::remove(feature_path_for(manifest));
}

TEST_CASE("empty manifest loads as an empty corpus") {
  const std::string manifest = tmp_file("sovmas_empty.jsonl");
  {
    std::ofstream os(manifest);
  }
  const Corpus corpus = load_corpus(manifest);
  CHECK(corpus.examples.empty());
  std::filesystem::remove(manifest);
}

TEST_CASE("invariant violations are reported with file, line and field") {
  Corpus corpus = synth_corpus(7, default_spec());
  // break one q row: scale it down so it sums to 0.8
  auto& ex = corpus.examples[3];
  for (int64_t j = 0; j < corpus.meta.detector_classes; ++j)
    ex.class_dists[static_cast<size_t>(j)] *= 0.8f;
  const std::string manifest = tmp_file("sovmas_badq.jsonl");
  write_corpus(manifest, corpus);
  try {
    load_corpus(manifest);
    FAIL("expected a validation error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("sovmas_badq.jsonl") != std::string::npos);
    CHECK(msg.find(":4:") != std::string::npos);  // line number
    CHECK(msg.find("\"q\"") != std::string::npos);
  }
  std::filesystem::remove(manifest);
  std::filesystem::remove(feature_path_for(manifest));

  // token ids outside a supplied vocabulary bound
  Corpus corpus2 = synth_corpus(8, default_spec());
  const std::string manifest2 = tmp_file("sovmas_oov.jsonl");
  write_corpus(manifest2, corpus2);
  CHECK_THROWS_AS(load_corpus(manifest2, /*vocab_size=*/4), std::runtime_error);
  CHECK_NOTHROW(load_corpus(manifest2, /*vocab_size=*/128));
  std::filesystem::remove(manifest2);
  std::filesystem::remove(feature_path_for(manifest2));
}

TEST_CASE("pad_truncate keeps sequence heads and marks real slots") {
  SynthSpec spec = default_spec();
  Corpus corpus = synth_corpus(4, spec);
  const CorpusMeta& meta = corpus.meta;

  SUBCASE("long article is clipped to the first max_text_len tokens") {
    MultimodalExample ex = corpus.examples[0];
    ex.article_ids.assign(600, 5);
    for (int i = 0; i < 600; ++i) ex.article_ids[static_cast<size_t>(i)] = 5 + (i % 60);
    PadSpec pad{512, 84, meta.n_images, meta.regions_per_image};
    PaddedExample p = pad_truncate(ex, meta, pad);
    CHECK(static_cast<int64_t>(p.article_ids.size()) == 512);
    for (int i = 0; i < 512; ++i) {
      CHECK(p.article_ids[static_cast<size_t>(i)] == ex.article_ids[static_cast<size_t>(i)]);
      CHECK(p.article_mask[static_cast<size_t>(i)] == 1);
    }
  }

  SUBCASE("3 present images under n=5 leave 108 real and 72 padded slots") {
    SynthSpec wide = default_spec();
    wide.n_images = 5;
    wide.min_images = 3;
    wide.regions_per_image = 36;
    Corpus c5 = synth_corpus(6, wide);
    int64_t idx = -1;
    for (size_t i = 0; i < c5.examples.size(); ++i)
      if (c5.examples[i].n_images_present == 3) idx = static_cast<int64_t>(i);
    REQUIRE(idx >= 0);
    PadSpec pad{32, 16, 5, 36};
    PaddedExample p = pad_truncate(c5.examples[static_cast<size_t>(idx)], c5.meta, pad);
    int64_t real = 0;
    for (uint8_t m : p.region_mask) real += m;
    CHECK(real == 3 * 36);
    CHECK(static_cast<int64_t>(p.region_mask.size()) - real == 180 - 3 * 36);
  }

  SUBCASE("exact-length input plus end marker round-trips") {
    MultimodalExample ex = corpus.examples[1];
    ex.article_ids.assign(16, 7);
    ex.summary_ids.assign(7, 9);
    PadSpec pad{16, 8, meta.n_images, meta.regions_per_image};
    PaddedExample p = pad_truncate(ex, meta, pad);
    for (int i = 0; i < 16; ++i) CHECK(p.article_ids[static_cast<size_t>(i)] == 7);
    for (int i = 0; i < 7; ++i) CHECK(p.summary_ids[static_cast<size_t>(i)] == 9);
    CHECK(p.summary_ids[7] == kEndId);
    for (uint8_t m : p.summary_mask) CHECK(m == 1);
  }
}

TEST_CASE("paper-default padding geometry: 512/84/180") {
  SynthSpec spec;
  spec.languages = 1;
  spec.sizes = {4};
  spec.vocab_size = 256;
  spec.detector_classes = 4;
  spec.n_images = 5;
  spec.regions_per_image = 36;
  spec.d_v = 8;
  Corpus corpus = synth_corpus(3, spec);
  PadSpec pad;  // defaults: 512 text, 84 summary, 5 x 36 regions
  std::vector<int64_t> idx{0, 1, 2, 3};
  Batch b = make_batch(corpus, idx, pad);
  CHECK(b.text_len == 512);
  CHECK(b.summary_len == 84);
  CHECK(b.region_slots == 180);
  CHECK(static_cast<int64_t>(b.article_ids.size()) == 4 * 512);
  CHECK(static_cast<int64_t>(b.summary_ids.size()) == 4 * 84);
  CHECK(static_cast<int64_t>(b.region_mask.size()) == 4 * 180);
}

TEST_CASE("splits: ratios, zero tier, determinism") {
  SynthSpec spec;
  spec.languages = 1;
  spec.sizes = {1000};
  spec.vocab_size = 64;
  spec.detector_classes = 4;
  spec.n_images = 2;
  spec.regions_per_image = 2;
  spec.d_v = 4;
  const Corpus corpus = synth_corpus(10, spec);

  SUBCASE("low tier gives 800/100/100") {
    CorpusSplit s = split_corpus(corpus, ResourceTier::kLow, 77);
    CHECK(s.train.size() == 800);
    CHECK(s.validation.size() == 100);
    CHECK(s.test.size() == 100);
    CHECK(s.few_shot.empty());
  }

  SUBCASE("zero tier carves 100 few-shot then halves the rest") {
    CorpusSplit s = split_corpus(corpus, ResourceTier::kZero, 77);
    CHECK(s.few_shot.size() == 100);
    CHECK(s.validation.size() == 450);
    CHECK(s.test.size() == 450);
    CHECK(s.train.empty());
  }

  SUBCASE("same seed, same split; parts are disjoint and cover the corpus") {
    CorpusSplit a = split_corpus(corpus, ResourceTier::kMidHigh, 5);
    CorpusSplit b = split_corpus(corpus, ResourceTier::kMidHigh, 5);
    CHECK(a.train == b.train);
    CHECK(a.validation == b.validation);
    CHECK(a.test == b.test);
    std::set<int64_t> seen;
    for (const auto* part : {&a.train, &a.validation, &a.test})
      for (int64_t id : *part) CHECK(seen.insert(id).second);
    CHECK(seen.size() == corpus.examples.size());
  }

  SUBCASE("configurable fractions") {
    CorpusSplit s = split_corpus(corpus, ResourceTier::kMidHigh, 5, 0.93, 0.035);
    CHECK(s.validation.size() == 35);
    CHECK(s.test.size() == 35);
    CHECK(s.train.size() == 930);
  }

  SUBCASE("zero tier needs at least 102 examples") {
    SynthSpec tiny = spec;
    tiny.sizes = {101};
    const Corpus small = synth_corpus(4, tiny);
    CHECK_THROWS_AS(split_corpus(small, ResourceTier::kZero, 1), std::invalid_argument);
  }

  SUBCASE("split file round trip") {
    CorpusSplit s = split_corpus(corpus, ResourceTier::kZero, 9);
    const std::string path = tmp_file("sovmas_split.json");
    write_split(path, s);
    CorpusSplit back = read_split(path);
    CHECK(back.train == s.train);
    CHECK(back.validation == s.validation);
    CHECK(back.test == s.test);
    CHECK(back.few_shot == s.few_shot);
    std::filesystem::remove(path);
  }
}

TEST_CASE("language sampler probabilities") {
  SUBCASE("square-root smoothing of 400:100 gives 2/3 : 1/3") {
    SamplerSpec spec;
    spec.counts = {{"a", 400}, {"b", 100}};
    spec.exponent = 0.5;
    LanguageSampler sampler(spec);
    CHECK(sampler.probabilities()[0] == doctest::Approx(2.0 / 3.0));
    CHECK(sampler.probabilities()[1] == doctest::Approx(1.0 / 3.0));
  }

  SUBCASE("equal counts are uniform; exponent 1 is proportional") {
    SamplerSpec eq;
    eq.counts = {{"a", 123}, {"b", 123}, {"c", 123}};
    LanguageSampler s1(eq);
    for (double p : s1.probabilities()) CHECK(p == doctest::Approx(1.0 / 3.0));

    SamplerSpec prop;
    prop.counts = {{"a", 300}, {"b", 100}};
    prop.exponent = 1.0;
    LanguageSampler s2(prop);
    CHECK(s2.probabilities()[0] == doctest::Approx(0.75));
  }

  SUBCASE("empirical frequencies track theory within 0.02 for many languages") {
    SamplerSpec spec;
    std::mt19937_64 rng(15);
    std::uniform_int_distribution<int64_t> sizes(50, 5000);
    for (int i = 0; i < 30; ++i)
      spec.counts.emplace_back("lang" + std::to_string(i), sizes(rng));
    spec.exponent = 0.5;
    spec.seed = 99;
    LanguageSampler sampler(spec);
    std::vector<int64_t> hits(30, 0);
    const int64_t draws = 100000;
    for (int64_t d = 0; d < draws; ++d) ++hits[static_cast<size_t>(sampler.next_index())];
    for (int i = 0; i < 30; ++i) {
      const double freq = static_cast<double>(hits[static_cast<size_t>(i)]) / draws;
      CHECK(std::abs(freq - sampler.probabilities()[static_cast<size_t>(i)]) < 0.02);
    }
  }
}

TEST_CASE("synthetic corpus: determinism, inverse oracle, independence at zero") {
  SynthSpec spec = default_spec();

  SUBCASE("same seed is bit-identical") {
    const Corpus a = synth_corpus(123, spec);
    const Corpus b = synth_corpus(123, spec);
    REQUIRE(a.examples.size() == b.examples.size());
    for (size_t i = 0; i < a.examples.size(); ++i) {
      CHECK(a.examples[i].article_ids == b.examples[i].article_ids);
      CHECK(a.examples[i].summary_ids == b.examples[i].summary_ids);
      CHECK(a.examples[i].features == b.examples[i].features);
      CHECK(a.examples[i].class_dists == b.examples[i].class_dists);
    }
  }

  SUBCASE("at informativeness 1 the class distributions reconstruct the summary") {
    SynthSpec full = default_spec();
    full.informativeness = 1.0;
    const Corpus corpus = synth_corpus(55, full);
    for (const auto& ex : corpus.examples) {
      const int64_t lang = lang_index_of(ex.lang);
      std::vector<int32_t> rebuilt;
      for (int32_t img = 0; img < ex.n_images_present; ++img) {
        // majority argmax over the image's region rows
        std::vector<double> mass(static_cast<size_t>(full.detector_classes), 0.0);
        for (int64_t r = 0; r < full.regions_per_image; ++r) {
          const int64_t slot = img * full.regions_per_image + r;
          for (int64_t c = 0; c < full.detector_classes; ++c)
            mass[static_cast<size_t>(c)] +=
                ex.class_dists[static_cast<size_t>(slot * full.detector_classes + c)];
        }
        const int64_t top = static_cast<int64_t>(
            std::max_element(mass.begin(), mass.end()) - mass.begin());
        rebuilt.push_back(summary_word_id(full, lang, top));
      }
      CHECK(rebuilt == ex.summary_ids);
    }
  }

  SUBCASE("at informativeness 0 region classes ignore the topics") {
    SynthSpec indep = default_spec();
    indep.informativeness = 0.0;
    indep.sizes = {600, 600};
    const Corpus corpus = synth_corpus(77, indep);
    int64_t match = 0, total = 0;
    for (const auto& ex : corpus.examples) {
      const int64_t lang = lang_index_of(ex.lang);
      for (int32_t img = 0; img < ex.n_images_present; ++img) {
        const int64_t want = ex.summary_ids[static_cast<size_t>(img)] -
                             summary_word_id(indep, lang, 0);
        for (int64_t r = 0; r < indep.regions_per_image; ++r) {
          const int64_t slot = img * indep.regions_per_image + r;
          const float* row =
              ex.class_dists.data() + slot * indep.detector_classes;
          const int64_t got = static_cast<int64_t>(
              std::max_element(row, row + indep.detector_classes) - row);
          match += got == want;
          ++total;
        }
      }
    }
    const double rate = static_cast<double>(match) / static_cast<double>(total);
    // pure chance is 1/8
    CHECK(rate > 0.125 - 0.03);
    CHECK(rate < 0.125 + 0.03);
  }

  SUBCASE("generated examples satisfy the record invariants (load validates)") {
    SynthSpec big = default_spec();
    big.sizes = {500, 500};
    const Corpus corpus = synth_corpus(31, big);
    REQUIRE(corpus.examples.size() == 1000);
    const std::string manifest = tmp_file("sovmas_validate.jsonl");
    write_corpus(manifest, corpus);
    CHECK_NOTHROW(load_corpus(manifest, big.vocab_size));
    std::filesystem::remove(manifest);
    std::filesystem::remove(feature_path_for(manifest));
  }
}

TEST_CASE("vocabulary files and detokenization") {
  SynthSpec spec = default_spec();
  const auto vocab = synth_vocab(spec);
  CHECK(static_cast<int64_t>(vocab.size()) == spec.vocab_size);
  CHECK(vocab[0] == "<pad>");
  CHECK(vocab[1] == "</s>");
  CHECK(vocab[2] == "<s>");

  const std::string path = tmp_file("sovmas_vocab.txt");
  write_vocab(path, vocab);
  CHECK(load_vocab(path) == vocab);
  std::filesystem::remove(path);

  std::vector<int32_t> ids{summary_word_id(spec, 0, 3), summary_word_id(spec, 1, 0)};
  CHECK(detokenize(ids, vocab) == "s0_3 s1_0");
}
