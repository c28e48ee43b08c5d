#include "sovmas/synth.hpp"

#include <algorithm>
#include <random>

#include "sovmas/tensor.hpp"

namespace sovmas {

void SynthSpec::validate() const {
  if (languages < 1) reject("synth: need at least one language");
  if (sizes.empty()) reject("synth: sizes must not be empty");
  for (int64_t s : sizes)
    if (s < 1) reject("synth: sizes must be >= 1");
  if (detector_classes < 2) reject("synth: need at least two classes");
  if (n_images < 1 || regions_per_image < 1 || d_v < 1)
    reject("synth: image geometry must be positive");
  if (min_images < 1 || min_images > n_images)
    reject("synth: min_images must be in [1, n_images]");
  if (informativeness < 0 || informativeness > 1)
    reject("synth: informativeness must be in [0, 1]");
  if (article_informativeness < 0 || article_informativeness > 1)
    reject("synth: article_informativeness must be in [0, 1]");
  if (q_sharpness <= 0 || q_sharpness > 1)
    reject("synth: q_sharpness must be in (0, 1]");
  if (feature_noise < 0) reject("synth: feature_noise must be >= 0");
  if (topic_coherence < 0 || topic_coherence > 1)
    reject("synth: topic_coherence must be in [0, 1]");
  const int64_t needed = filler_base(*this) + 4;
  if (vocab_size < needed)
    reject("synth: vocab_size " + std::to_string(vocab_size) + " too small, need >= " +
           std::to_string(needed));
}

int32_t summary_word_id(const SynthSpec& spec, int64_t lang_index, int64_t topic) {
  return static_cast<int32_t>(3 + lang_index * spec.detector_classes + topic);
}

int32_t article_word_id(const SynthSpec& spec, int64_t lang_index, int64_t topic) {
  return static_cast<int32_t>(3 + (spec.languages + lang_index) * spec.detector_classes +
                              topic);
}

int64_t filler_base(const SynthSpec& spec) {
  return 3 + 2 * spec.languages * spec.detector_classes;
}

std::string lang_code_of(int64_t lang_index) { return "l" + std::to_string(lang_index); }

int64_t lang_index_of(const std::string& lang_code) {
  if (lang_code.size() < 2 || lang_code[0] != 'l')
    reject("not a synthetic language code: " + lang_code);
  return std::stoll(lang_code.substr(1));
}

std::vector<std::string> synth_vocab(const SynthSpec& spec) {
  std::vector<std::string> vocab;
  vocab.reserve(static_cast<size_t>(spec.vocab_size));
  vocab.push_back("<pad>");
  vocab.push_back("</s>");
  vocab.push_back("<s>");
  for (int64_t l = 0; l < spec.languages; ++l)
    for (int64_t t = 0; t < spec.detector_classes; ++t)
      vocab.push_back("s" + std::to_string(l) + "_" + std::to_string(t));
  for (int64_t l = 0; l < spec.languages; ++l)
    for (int64_t t = 0; t < spec.detector_classes; ++t)
      vocab.push_back("a" + std::to_string(l) + "_" + std::to_string(t));
  for (int64_t i = static_cast<int64_t>(vocab.size()); i < spec.vocab_size; ++i)
    vocab.push_back("f" + std::to_string(i));
  return vocab;
}

Corpus synth_corpus(uint64_t seed, const SynthSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.meta.n_images = spec.n_images;
  corpus.meta.regions_per_image = spec.regions_per_image;
  corpus.meta.d_v = spec.d_v;
  corpus.meta.detector_classes = spec.detector_classes;

  // Per-class feature prototypes, fixed for the whole corpus.
  std::mt19937_64 proto_rng(seed ^ 0xc1a55e5ull);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<float> prototypes(
      static_cast<size_t>(spec.detector_classes * spec.d_v));
  for (auto& v : prototypes) v = static_cast<float>(unit(proto_rng));

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int64_t> topic_pick(0, spec.detector_classes - 1);
  std::uniform_int_distribution<int64_t> image_count(spec.min_images, spec.n_images);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> feat_noise(0.0, spec.feature_noise);

  const int64_t fillers = spec.vocab_size - filler_base(spec);
  std::uniform_int_distribution<int64_t> filler_pick(0, fillers - 1);
  const auto filler = [&]() {
    return static_cast<int32_t>(filler_base(spec) + filler_pick(rng));
  };

  const int64_t slots = spec.n_images * spec.regions_per_image;
  int64_t next_id = 0;
  for (int64_t l = 0; l < spec.languages; ++l) {
    const int64_t size =
        spec.sizes[std::min<size_t>(static_cast<size_t>(l), spec.sizes.size() - 1)];
    for (int64_t e = 0; e < size; ++e) {
      MultimodalExample ex;
      ex.id = next_id++;
      ex.lang = lang_code_of(l);
      const int64_t k = image_count(rng);
      ex.n_images_present = static_cast<int32_t>(k);
      const int64_t doc_topic = topic_pick(rng);
      std::vector<int64_t> topics(static_cast<size_t>(k));
      for (auto& t : topics)
        t = coin(rng) < spec.topic_coherence ? doc_topic : topic_pick(rng);

      for (int64_t t : topics) ex.summary_ids.push_back(summary_word_id(spec, l, t));

      for (int64_t t : topics) {
        ex.article_ids.push_back(coin(rng) < spec.article_informativeness
                                     ? article_word_id(spec, l, t)
                                     : filler());
        for (int64_t f = 0; f < spec.article_fillers_per_image; ++f)
          ex.article_ids.push_back(filler());
      }

      ex.features.assign(static_cast<size_t>(slots * spec.d_v), 0.0f);
      ex.boxes.assign(static_cast<size_t>(slots * 4), 0.0f);
      ex.class_dists.assign(static_cast<size_t>(slots * spec.detector_classes), 0.0f);
      for (int64_t i = 0; i < k; ++i) {
        for (int64_t j = 0; j < spec.regions_per_image; ++j) {
          const int64_t slot = i * spec.regions_per_image + j;
          const int64_t cls = coin(rng) < spec.informativeness
                                  ? topics[static_cast<size_t>(i)]
                                  : topic_pick(rng);
          // one-hot target, optionally mixed with uniform mass
          const float uniform_mass =
              static_cast<float>((1.0 - spec.q_sharpness) / static_cast<double>(spec.detector_classes));
          for (int64_t cidx = 0; cidx < spec.detector_classes; ++cidx)
            ex.class_dists[static_cast<size_t>(slot * spec.detector_classes + cidx)] =
                uniform_mass;
          ex.class_dists[static_cast<size_t>(slot * spec.detector_classes + cls)] +=
              static_cast<float>(spec.q_sharpness);
          for (int64_t fidx = 0; fidx < spec.d_v; ++fidx)
            ex.features[static_cast<size_t>(slot * spec.d_v + fidx)] =
                prototypes[static_cast<size_t>(cls * spec.d_v + fidx)] +
                static_cast<float>(feat_noise(rng));
          const double x0 = coin(rng) * 0.5, y0 = coin(rng) * 0.5;
          ex.boxes[static_cast<size_t>(slot * 4 + 0)] = static_cast<float>(x0);
          ex.boxes[static_cast<size_t>(slot * 4 + 1)] = static_cast<float>(y0);
          ex.boxes[static_cast<size_t>(slot * 4 + 2)] = static_cast<float>(x0 + coin(rng) * 0.5);
          ex.boxes[static_cast<size_t>(slot * 4 + 3)] = static_cast<float>(y0 + coin(rng) * 0.5);
        }
      }
      corpus.examples.push_back(std::move(ex));
    }
  }
  return corpus;
}

}  // namespace sovmas
