// Synthetic corpus generator. Every example draws a document topic and one
// latent topic per image (each image keeps the document topic with
// probability `topic_coherence`, otherwise draws its own); the summary is a
// deterministic template over the image topics (one topic word per image,
// in image order). Region class distributions and
// features reflect each image's topic with probability `informativeness`
// (at 1.0 the summary is exactly recoverable from the class distributions,
// at 0.0 vision is independent of the summary by construction), and the
// article mentions each topic's article-side word with probability
// `article_informativeness` amid filler tokens.

#ifndef SOVMAS_SYNTH_HPP
#define SOVMAS_SYNTH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "sovmas/dataio.hpp"

namespace sovmas {

struct SynthSpec {
  int64_t languages = 3;
  std::vector<int64_t> sizes;  // examples per language; padded with the last value
  int64_t vocab_size = 512;
  int64_t detector_classes = 12;  // also the number of latent topics
  int64_t n_images = 3;
  int64_t min_images = 1;  // set equal to n_images for fixed-length summaries
  int64_t regions_per_image = 4;
  int64_t d_v = 16;
  double informativeness = 0.7;
  double article_informativeness = 0.6;
  double feature_noise = 0.1;  // stddev around the class prototype
  double topic_coherence = 0.0;  // probability an image shares the document topic
  int64_t article_fillers_per_image = 2;
  double q_sharpness = 1.0;  // 1.0 = one-hot class distributions

  void validate() const;
};

Corpus synth_corpus(uint64_t seed, const SynthSpec& spec);

// Vocabulary layout: 0..2 control tokens, then per-language summary words,
// then per-language article words, then shared fillers.
std::vector<std::string> synth_vocab(const SynthSpec& spec);
int32_t summary_word_id(const SynthSpec& spec, int64_t lang_index, int64_t topic);
int32_t article_word_id(const SynthSpec& spec, int64_t lang_index, int64_t topic);
int64_t filler_base(const SynthSpec& spec);
int64_t lang_index_of(const std::string& lang_code);
std::string lang_code_of(int64_t lang_index);

}  // namespace sovmas

#endif  // SOVMAS_SYNTH_HPP
