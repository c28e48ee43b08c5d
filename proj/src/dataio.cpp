#include "sovmas/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "sovmas/checkpoint.hpp"
#include "sovmas/tensor.hpp"

namespace sovmas {

using nlohmann::json;

std::vector<std::string> Corpus::languages() const {
  std::vector<std::string> langs;
  for (const auto& ex : examples)
    if (std::find(langs.begin(), langs.end(), ex.lang) == langs.end())
      langs.push_back(ex.lang);
  return langs;
}

std::vector<int64_t> Corpus::indices_for_language(const std::string& lang) const {
  std::vector<int64_t> out;
  for (size_t i = 0; i < examples.size(); ++i)
    if (examples[i].lang == lang) out.push_back(static_cast<int64_t>(i));
  return out;
}

const MultimodalExample& Corpus::by_id(int64_t id) const {
  for (const auto& ex : examples)
    if (ex.id == id) return ex;
  throw std::runtime_error("corpus: no example with id " + std::to_string(id));
}

std::string feature_path_for(const std::string& manifest_path) {
  std::filesystem::path p(manifest_path);
  p.replace_extension(".feat");
  return p.string();
}

namespace {

[[noreturn]] void record_error(const std::string& file, int64_t line,
                               const std::string& field, const std::string& what) {
  throw std::runtime_error(file + ":" + std::to_string(line) + ": field \"" + field +
                           "\": " + what);
}

void validate_example(const MultimodalExample& ex, const CorpusMeta& meta,
                      const std::string& file, int64_t line, int64_t vocab_size) {
  const int64_t slots = meta.region_slots();
  if (ex.n_images_present < 0 || ex.n_images_present > meta.n_images)
    record_error(file, line, "n_images", "must be in [0, " +
                                             std::to_string(meta.n_images) + "]");
  if (static_cast<int64_t>(ex.features.size()) != slots * meta.d_v)
    record_error(file, line, "features", "wrong extent");
  if (static_cast<int64_t>(ex.boxes.size()) != slots * 4)
    record_error(file, line, "boxes", "wrong extent");
  if (static_cast<int64_t>(ex.class_dists.size()) != slots * meta.detector_classes)
    record_error(file, line, "q", "wrong extent");
  for (const auto* ids : {&ex.article_ids, &ex.summary_ids}) {
    const char* field = ids == &ex.article_ids ? "article_ids" : "summary_ids";
    for (int32_t id : *ids) {
      if (id < 0) record_error(file, line, field, "negative token id");
      if (vocab_size >= 0 && id >= vocab_size)
        record_error(file, line, field,
                     "token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(vocab_size));
    }
  }
  const int64_t real_slots = static_cast<int64_t>(ex.n_images_present) *
                             meta.regions_per_image;
  for (int64_t s = 0; s < slots; ++s) {
    for (int64_t j = 0; j < 4; ++j) {
      const float b = ex.boxes[static_cast<size_t>(s * 4 + j)];
      if (!(b >= 0.0f && b <= 1.0f))
        record_error(file, line, "boxes", "coordinate outside [0, 1] at slot " +
                                              std::to_string(s));
    }
    double qsum = 0;
    for (int64_t j = 0; j < meta.detector_classes; ++j) {
      const float q = ex.class_dists[static_cast<size_t>(s * meta.detector_classes + j)];
      if (q < -1e-9f)
        record_error(file, line, "q", "negative entry at slot " + std::to_string(s));
      qsum += static_cast<double>(q);
    }
    if (s < real_slots) {
      if (std::abs(qsum - 1.0) > 1e-6)
        record_error(file, line, "q", "row at slot " + std::to_string(s) +
                                          " sums to " + std::to_string(qsum) +
                                          ", expected 1");
    } else if (qsum != 0.0) {
      record_error(file, line, "q", "padded slot " + std::to_string(s) +
                                        " must be all zero");
    }
  }
}

}  // namespace

Corpus load_corpus(const std::string& manifest_path, int64_t vocab_size) {
  std::ifstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("cannot open manifest " + manifest_path);

  const std::string feat_path = feature_path_for(manifest_path);
  Corpus corpus;
  std::ifstream feat;
  bool have_features = false;

  // An empty manifest is a valid empty corpus and needs no feature file.
  std::string line;
  int64_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!have_features) {
      feat.open(feat_path, std::ios::binary);
      if (!feat) throw std::runtime_error("cannot open feature file " + feat_path);
      char magic[4];
      if (!feat.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0)
        throw std::runtime_error(feat_path + " is not a feature file (bad magic)");
      const uint32_t version = read_u32(feat, feat_path);
      if (version != kFeatureFileVersion)
        throw std::runtime_error(feat_path + ": unsupported feature file version");
      corpus.meta.n_images = read_u32(feat, feat_path);
      corpus.meta.regions_per_image = read_u32(feat, feat_path);
      corpus.meta.d_v = read_u32(feat, feat_path);
      corpus.meta.detector_classes = read_u32(feat, feat_path);
      have_features = true;
    }

    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      record_error(manifest_path, line_no, "<record>", e.what());
    }
    MultimodalExample ex;
    try {
      ex.id = rec.at("id").get<int64_t>();
      ex.lang = rec.at("lang").get<std::string>();
      ex.article_ids = rec.at("article_ids").get<std::vector<int32_t>>();
      ex.summary_ids = rec.at("summary_ids").get<std::vector<int32_t>>();
      ex.n_images_present = rec.at("n_images").get<int32_t>();
    } catch (const json::exception& e) {
      record_error(manifest_path, line_no, "<record>", e.what());
    }
    const uint64_t offset = rec.at("feat_offset").get<uint64_t>();
    const int64_t slots = corpus.meta.region_slots();
    ex.features.resize(static_cast<size_t>(slots * corpus.meta.d_v));
    ex.boxes.resize(static_cast<size_t>(slots * 4));
    ex.class_dists.resize(static_cast<size_t>(slots * corpus.meta.detector_classes));
    feat.seekg(static_cast<std::streamoff>(offset));
    for (auto* buf : {&ex.features, &ex.boxes, &ex.class_dists})
      for (auto& v : *buf)
        v = read_f32(feat, feat_path + " (example " + std::to_string(ex.id) + ")");
    validate_example(ex, corpus.meta, manifest_path, line_no, vocab_size);
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

void write_corpus(const std::string& manifest_path, const Corpus& corpus) {
  const std::string feat_path = feature_path_for(manifest_path);
  const int64_t slots = corpus.meta.region_slots();
  std::vector<uint64_t> offsets;
  offsets.reserve(corpus.examples.size());

  atomic_file_commit(feat_path, [&](std::ostream& os) {
    os.write(kFeatureMagic, 4);
    write_u32(os, kFeatureFileVersion);
    write_u32(os, static_cast<uint32_t>(corpus.meta.n_images));
    write_u32(os, static_cast<uint32_t>(corpus.meta.regions_per_image));
    write_u32(os, static_cast<uint32_t>(corpus.meta.d_v));
    write_u32(os, static_cast<uint32_t>(corpus.meta.detector_classes));
    uint64_t offset = 4 + 5 * 4;
    const uint64_t blob =
        static_cast<uint64_t>(slots * (corpus.meta.d_v + 4 + corpus.meta.detector_classes)) * 4;
    for (const auto& ex : corpus.examples) {
      offsets.push_back(offset);
      for (const auto* buf : {&ex.features, &ex.boxes, &ex.class_dists})
        for (float v : *buf) write_f32(os, v);
      offset += blob;
    }
  });

  atomic_file_commit(manifest_path, [&](std::ostream& os) {
    for (size_t i = 0; i < corpus.examples.size(); ++i) {
      const auto& ex = corpus.examples[i];
      json rec;
      rec["id"] = ex.id;
      rec["lang"] = ex.lang;
      rec["article_ids"] = ex.article_ids;
      rec["summary_ids"] = ex.summary_ids;
      rec["n_images"] = ex.n_images_present;
      rec["feat_offset"] = offsets[i];
      os << rec.dump() << "\n";
    }
  });
}

std::vector<std::string> load_vocab(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open vocabulary " + path);
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(is, line)) vocab.push_back(line);
  return vocab;
}

void write_vocab(const std::string& path, const std::vector<std::string>& vocab) {
  atomic_file_commit(path, [&vocab](std::ostream& os) {
    for (const auto& w : vocab) os << w << "\n";
  });
}

std::string detokenize(std::span<const int32_t> ids, const std::vector<std::string>& vocab) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    const int32_t id = ids[i];
    if (id >= 0 && static_cast<size_t>(id) < vocab.size())
      out += vocab[static_cast<size_t>(id)];
    else
      out += "<unk:" + std::to_string(id) + ">";
  }
  return out;
}

// ---------------------------------------------------------------------------

PaddedExample pad_truncate(const MultimodalExample& ex, const CorpusMeta& meta,
                           const PadSpec& spec) {
  PaddedExample out;
  out.article_ids.assign(static_cast<size_t>(spec.max_text_len), kPadId);
  out.article_mask.assign(static_cast<size_t>(spec.max_text_len), 0);
  const int64_t t = std::min<int64_t>(spec.max_text_len,
                                      static_cast<int64_t>(ex.article_ids.size()));
  for (int64_t i = 0; i < t; ++i) {
    out.article_ids[static_cast<size_t>(i)] = ex.article_ids[static_cast<size_t>(i)];
    out.article_mask[static_cast<size_t>(i)] = 1;
  }

  out.summary_ids.assign(static_cast<size_t>(spec.max_summary_len), kPadId);
  out.summary_mask.assign(static_cast<size_t>(spec.max_summary_len), 0);
  std::vector<int32_t> target(ex.summary_ids);
  target.push_back(kEndId);  // end marker kept when it fits
  const int64_t s = std::min<int64_t>(spec.max_summary_len,
                                      static_cast<int64_t>(target.size()));
  for (int64_t i = 0; i < s; ++i) {
    out.summary_ids[static_cast<size_t>(i)] = target[static_cast<size_t>(i)];
    out.summary_mask[static_cast<size_t>(i)] = 1;
  }

  const int64_t slots = spec.region_slots();
  out.features.assign(static_cast<size_t>(slots * meta.d_v), 0.0f);
  out.boxes.assign(static_cast<size_t>(slots * 4), 0.0f);
  out.class_dists.assign(static_cast<size_t>(slots * meta.detector_classes), 0.0f);
  out.region_mask.assign(static_cast<size_t>(slots), 0);
  out.n_images_present = static_cast<int32_t>(
      std::min<int64_t>(spec.n_images, ex.n_images_present));
  // Truncation keeps the first images; region geometry may shrink but the
  // per-image region count must agree between corpus and spec.
  if (meta.regions_per_image != spec.regions_per_image)
    reject("pad_truncate: corpus regions_per_image " +
           std::to_string(meta.regions_per_image) + " != spec " +
           std::to_string(spec.regions_per_image));
  const int64_t copy_images = std::min<int64_t>(out.n_images_present, meta.n_images);
  for (int64_t img = 0; img < copy_images; ++img) {
    for (int64_t r = 0; r < spec.regions_per_image; ++r) {
      const int64_t dst = img * spec.regions_per_image + r;
      const int64_t src = img * meta.regions_per_image + r;
      out.region_mask[static_cast<size_t>(dst)] = 1;
      std::copy_n(ex.features.begin() + src * meta.d_v, meta.d_v,
                  out.features.begin() + dst * meta.d_v);
      std::copy_n(ex.boxes.begin() + src * 4, 4, out.boxes.begin() + dst * 4);
      std::copy_n(ex.class_dists.begin() + src * meta.detector_classes,
                  meta.detector_classes,
                  out.class_dists.begin() + dst * meta.detector_classes);
    }
  }
  return out;
}

Batch make_batch(const Corpus& corpus, std::span<const int64_t> example_indices,
                 const PadSpec& spec) {
  if (example_indices.empty()) reject("make_batch: empty index list");
  Batch b;
  b.batch_size = static_cast<int64_t>(example_indices.size());
  b.text_len = spec.max_text_len;
  b.summary_len = spec.max_summary_len;
  b.region_slots = spec.region_slots();
  b.n_images = spec.n_images;
  b.regions_per_image = spec.regions_per_image;
  b.d_v = corpus.meta.d_v;
  b.detector_classes = corpus.meta.detector_classes;
  b.lang = corpus.examples.at(static_cast<size_t>(example_indices[0])).lang;
  for (int64_t idx : example_indices) {
    const auto& ex = corpus.examples.at(static_cast<size_t>(idx));
    if (ex.lang != b.lang)
      reject("make_batch: a batch must come from a single language");
    PaddedExample p = pad_truncate(ex, corpus.meta, spec);
    b.article_ids.insert(b.article_ids.end(), p.article_ids.begin(), p.article_ids.end());
    b.article_mask.insert(b.article_mask.end(), p.article_mask.begin(), p.article_mask.end());
    b.summary_ids.insert(b.summary_ids.end(), p.summary_ids.begin(), p.summary_ids.end());
    b.summary_mask.insert(b.summary_mask.end(), p.summary_mask.begin(), p.summary_mask.end());
    b.features.insert(b.features.end(), p.features.begin(), p.features.end());
    b.boxes.insert(b.boxes.end(), p.boxes.begin(), p.boxes.end());
    b.class_dists.insert(b.class_dists.end(), p.class_dists.begin(), p.class_dists.end());
    b.region_mask.insert(b.region_mask.end(), p.region_mask.begin(), p.region_mask.end());
    b.n_images_present.push_back(p.n_images_present);
  }
  return b;
}

// ---------------------------------------------------------------------------

namespace {

uint64_t mix_seed(uint64_t seed, const std::string& lang) {
  uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
  for (unsigned char c : lang) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

CorpusSplit split_corpus(const Corpus& corpus, ResourceTier tier, uint64_t seed,
                         double train_frac, double val_frac) {
  if (train_frac <= 0 || val_frac < 0 || train_frac + val_frac >= 1.0)
    reject("split_corpus: fractions must satisfy 0 < train, 0 <= val, train+val < 1");
  CorpusSplit split;
  for (const auto& lang : corpus.languages()) {
    std::vector<int64_t> ids;
    for (int64_t idx : corpus.indices_for_language(lang))
      ids.push_back(corpus.examples[static_cast<size_t>(idx)].id);
    std::mt19937_64 rng(mix_seed(seed, lang));
    std::shuffle(ids.begin(), ids.end(), rng);
    const int64_t n = static_cast<int64_t>(ids.size());
    if (tier == ResourceTier::kZero) {
      if (n < 102)
        reject("split_corpus: zero tier needs at least 102 examples per language, \"" +
               lang + "\" has " + std::to_string(n));
      const int64_t few = 100;
      const int64_t rest = n - few;
      const int64_t val = rest / 2;
      split.few_shot.insert(split.few_shot.end(), ids.begin(), ids.begin() + few);
      split.validation.insert(split.validation.end(), ids.begin() + few,
                              ids.begin() + few + val);
      split.test.insert(split.test.end(), ids.begin() + few + val, ids.end());
    } else {
      const double test_frac = 1.0 - train_frac - val_frac;
      // the 1e-9 nudge keeps exact-decimal fractions from flooring one short
      const int64_t val =
          static_cast<int64_t>(std::floor(static_cast<double>(n) * val_frac + 1e-9));
      const int64_t test =
          static_cast<int64_t>(std::floor(static_cast<double>(n) * test_frac + 1e-9));
      const int64_t train = n - val - test;
      split.train.insert(split.train.end(), ids.begin(), ids.begin() + train);
      split.validation.insert(split.validation.end(), ids.begin() + train,
                              ids.begin() + train + val);
      split.test.insert(split.test.end(), ids.begin() + train + val, ids.end());
    }
  }
  return split;
}

void write_split(const std::string& path, const CorpusSplit& split) {
  atomic_file_commit(path, [&split](std::ostream& os) {
    json j;
    j["train"] = split.train;
    j["validation"] = split.validation;
    j["test"] = split.test;
    j["few_shot"] = split.few_shot;
    os << j.dump(2) << "\n";
  });
}

CorpusSplit read_split(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open split file " + path);
  json j = json::parse(is);
  CorpusSplit split;
  split.train = j.value("train", std::vector<int64_t>{});
  split.validation = j.value("validation", std::vector<int64_t>{});
  split.test = j.value("test", std::vector<int64_t>{});
  split.few_shot = j.value("few_shot", std::vector<int64_t>{});
  return split;
}

// ---------------------------------------------------------------------------

LanguageSampler::LanguageSampler(const SamplerSpec& spec) : rng_(spec.seed) {
  if (spec.counts.empty()) reject("language sampler: no languages");
  double total = 0;
  for (const auto& [name, count] : spec.counts) {
    if (count <= 0) reject("language sampler: counts must be positive");
    names_.push_back(name);
    probs_.push_back(std::pow(static_cast<double>(count), spec.exponent));
    total += probs_.back();
  }
  double acc = 0;
  for (auto& p : probs_) {
    p /= total;
    acc += p;
    cumulative_.push_back(acc);
  }
  cumulative_.back() = 1.0;
}

int64_t LanguageSampler::next_index() {
  // 53-bit uniform draw; inverse CDF walk keeps the stream pinned to the
  // engine rather than to any library distribution.
  const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  for (size_t i = 0; i < cumulative_.size(); ++i)
    if (u < cumulative_[i]) return static_cast<int64_t>(i);
  return static_cast<int64_t>(cumulative_.size()) - 1;
}

const std::string& LanguageSampler::next() {
  return names_[static_cast<size_t>(next_index())];
}

}  // namespace sovmas
