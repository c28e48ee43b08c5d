// Corpus file formats, padding/truncation, resource-tier splits, and the
// smoothed multilingual language sampler.
//
// On disk a corpus is a UTF-8 JSON-Lines manifest (one record per example:
// id, lang, article_ids, summary_ids, n_images, feat_offset) next to a
// binary feature file with the same stem and a ".feat" extension: header
// magic "SOVF", version u32, then n, m, d_v, C as u32, then per example at
// its recorded offset the region features (n*m*d_v f32), boxes (n*m*4 f32),
// and class distributions (n*m*C f32), all little-endian.

#ifndef SOVMAS_DATAIO_HPP
#define SOVMAS_DATAIO_HPP

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sovmas {

// Token ids fixed by the bundled vocabulary format.
inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kEndId = 1;
inline constexpr int32_t kStartId = 2;

inline constexpr uint32_t kFeatureFileVersion = 1;
inline constexpr char kFeatureMagic[4] = {'S', 'O', 'V', 'F'};

struct MultimodalExample {
  int64_t id = 0;
  std::string lang;
  std::vector<int32_t> article_ids;
  std::vector<int32_t> summary_ids;
  std::vector<float> features;     // n*m*d_v, image-major; absent images zero
  std::vector<float> boxes;        // n*m*4, coordinates in [0,1]
  std::vector<float> class_dists;  // n*m*C; rows of absent images are zero
  int32_t n_images_present = 0;
};

struct CorpusMeta {
  int64_t n_images = 0;
  int64_t regions_per_image = 0;
  int64_t d_v = 0;
  int64_t detector_classes = 0;
  int64_t region_slots() const { return n_images * regions_per_image; }
};

struct Corpus {
  CorpusMeta meta;
  std::vector<MultimodalExample> examples;

  std::vector<std::string> languages() const;
  std::vector<int64_t> indices_for_language(const std::string& lang) const;
  const MultimodalExample& by_id(int64_t id) const;
};

// Validates every example against the record invariants; errors name the
// file, line, and field. `vocab_size` (when >= 0) bounds token ids.
Corpus load_corpus(const std::string& manifest_path, int64_t vocab_size = -1);
void write_corpus(const std::string& manifest_path, const Corpus& corpus);
std::string feature_path_for(const std::string& manifest_path);

std::vector<std::string> load_vocab(const std::string& path);
void write_vocab(const std::string& path, const std::vector<std::string>& vocab);
std::string detokenize(std::span<const int32_t> ids, const std::vector<std::string>& vocab);

// ---------------------------------------------------------------------------
// Fixed-length batches

struct PadSpec {
  int64_t max_text_len = 512;
  int64_t max_summary_len = 84;
  int64_t n_images = 5;
  int64_t regions_per_image = 36;
  int64_t region_slots() const { return n_images * regions_per_image; }
};

struct PaddedExample {
  std::vector<int32_t> article_ids;   // max_text_len
  std::vector<uint8_t> article_mask;  // 1 = real token
  std::vector<int32_t> summary_ids;   // max_summary_len; end marker appended when it fits
  std::vector<uint8_t> summary_mask;
  std::vector<float> features;        // slots x d_v
  std::vector<float> boxes;           // slots x 4
  std::vector<float> class_dists;     // slots x C
  std::vector<uint8_t> region_mask;   // 1 = region of a present image
  int32_t n_images_present = 0;
};

// Truncation keeps the head of each sequence (first tokens, first images).
PaddedExample pad_truncate(const MultimodalExample& ex, const CorpusMeta& meta,
                           const PadSpec& spec);

struct Batch {
  std::string lang;
  int64_t batch_size = 0;
  int64_t text_len = 0;
  int64_t summary_len = 0;
  int64_t region_slots = 0;
  int64_t n_images = 0;
  int64_t regions_per_image = 0;
  int64_t d_v = 0;
  int64_t detector_classes = 0;
  std::vector<int32_t> article_ids;
  std::vector<uint8_t> article_mask;
  std::vector<int32_t> summary_ids;
  std::vector<uint8_t> summary_mask;
  std::vector<float> features;
  std::vector<float> boxes;
  std::vector<float> class_dists;
  std::vector<uint8_t> region_mask;
  std::vector<int32_t> n_images_present;

  std::span<const int32_t> article(int64_t b) const {
    return {article_ids.data() + b * text_len, static_cast<size_t>(text_len)};
  }
  std::span<const uint8_t> article_mask_row(int64_t b) const {
    return {article_mask.data() + b * text_len, static_cast<size_t>(text_len)};
  }
  std::span<const int32_t> summary(int64_t b) const {
    return {summary_ids.data() + b * summary_len, static_cast<size_t>(summary_len)};
  }
  std::span<const uint8_t> summary_mask_row(int64_t b) const {
    return {summary_mask.data() + b * summary_len, static_cast<size_t>(summary_len)};
  }
  std::span<const float> features_row(int64_t b) const {
    return {features.data() + b * region_slots * d_v,
            static_cast<size_t>(region_slots * d_v)};
  }
  std::span<float> features_row_mut(int64_t b) {
    return {features.data() + b * region_slots * d_v,
            static_cast<size_t>(region_slots * d_v)};
  }
  std::span<const float> boxes_row(int64_t b) const {
    return {boxes.data() + b * region_slots * 4, static_cast<size_t>(region_slots * 4)};
  }
  std::span<const float> class_dists_row(int64_t b) const {
    return {class_dists.data() + b * region_slots * detector_classes,
            static_cast<size_t>(region_slots * detector_classes)};
  }
  std::span<const uint8_t> region_mask_row(int64_t b) const {
    return {region_mask.data() + b * region_slots, static_cast<size_t>(region_slots)};
  }
};

Batch make_batch(const Corpus& corpus, std::span<const int64_t> example_indices,
                 const PadSpec& spec);

// Region-masking plan feeding the masked-image objective. The one-image mode
// masks all m slots of one present image per example; the random-region mode
// masks present regions independently.
struct MaskPlan {
  enum class Mode { kOneImage, kRandomRegions };
  Mode mode = Mode::kOneImage;
  std::vector<int32_t> masked_image;                 // per example; -1 in random mode
  std::vector<std::vector<int32_t>> masked_slots;    // per example, region slot indices
  uint64_t seed = 0;

  int64_t total_masked() const {
    int64_t n = 0;
    for (const auto& s : masked_slots) n += static_cast<int64_t>(s.size());
    return n;
  }
};

// ---------------------------------------------------------------------------
// Splits

enum class ResourceTier { kMidHigh, kLow, kZero };

struct CorpusSplit {
  std::vector<int64_t> train;
  std::vector<int64_t> validation;
  std::vector<int64_t> test;
  std::vector<int64_t> few_shot;  // zero tier only
};

// Splits per language with a seeded shuffle. Mid-high and low tiers use
// floor(n * val_frac) validation and floor(n * test_frac) test rows with the
// remainder in train; the zero tier carves out exactly 100 few-shot examples
// per language and halves the rest between validation and test.
CorpusSplit split_corpus(const Corpus& corpus, ResourceTier tier, uint64_t seed,
                         double train_frac = 0.8, double val_frac = 0.1);

void write_split(const std::string& path, const CorpusSplit& split);
CorpusSplit read_split(const std::string& path);

// ---------------------------------------------------------------------------
// Language sampling

struct SamplerSpec {
  std::vector<std::pair<std::string, int64_t>> counts;  // per-language example counts
  double exponent = 0.5;
  uint64_t seed = 0;
};

// Draws languages i.i.d. with probability proportional to count^exponent.
class LanguageSampler {
 public:
  explicit LanguageSampler(const SamplerSpec& spec);

  const std::string& next();
  int64_t next_index();
  const std::vector<double>& probabilities() const { return probs_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
  std::mt19937_64 rng_;
};

}  // namespace sovmas

#endif  // SOVMAS_DATAIO_HPP
