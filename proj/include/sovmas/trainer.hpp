// Monolingual and multilingual training loops, ROUGE evaluation over decoded
// summaries, few-shot continuation, and checkpoint round-tripping.

#ifndef SOVMAS_TRAINER_HPP
#define SOVMAS_TRAINER_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sovmas/dataio.hpp"
#include "sovmas/model.hpp"
#include "sovmas/objectives.hpp"
#include "sovmas/optim.hpp"

namespace sovmas {

enum class TrainMode { kMonolingual, kMultilingual };
enum class MaskMode { kMim, kMrm, kOff };

struct TrainConfig {
  TrainMode mode = TrainMode::kMultilingual;
  std::string language;  // monolingual mode takes exactly one language
  int64_t steps = 1000;
  int64_t batch_size = 8;
  double mas_weight = 1.0;
  LossWeights weights;  // alpha, beta
  LrSchedule schedule{5e-4, 100, LrScheduleKind::kInverseSqrtWarmup};
  double grad_clip = 1.0;
  uint64_t seed = 0;
  int64_t checkpoint_interval = 0;  // 0 = final checkpoint only
  int64_t eval_interval = 0;        // 0 = no validation passes
  MaskMode mask_mode = MaskMode::kMim;
  double mrm_prob = 0.15;
  double sampler_exponent = 0.5;

  void validate() const {
    if (steps < 0) reject("train config: steps must be >= 0");
    if (batch_size < 1) reject("train config: batch_size must be >= 1");
    if (weights.alpha < 0 || weights.beta < 0 || mas_weight < 0)
      reject("train config: loss weights must be non-negative");
    if (mask_mode == MaskMode::kOff && weights.beta > 0)
      reject("train config: mask mode off requires beta == 0");
    if (mode == TrainMode::kMonolingual && language.empty())
      reject("train config: monolingual mode needs a language");
    if (mrm_prob <= 0 || mrm_prob >= 1) reject("train config: mrm_prob must be in (0, 1)");
  }
};

struct StepRecord {
  int64_t step = 0;
  std::string lang;
  double l_mas = 0, l_v2s = 0, l_mim = 0, j = 0, lr = 0, grad_norm = 0;
  bool skipped = false;
};

struct EvalRecord {
  int64_t step = 0;
  double validation_l_mas = 0;
};

struct RunMetrics {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
};

struct DecodeConfig {
  int64_t beam = 4;
  double length_penalty = 0.6;
  int64_t max_len = -1;  // -1 = model max_summary_len
};

struct RougeRow {
  std::string lang;
  double r1 = 0, r2 = 0, rl = 0;  // F1 * 100
  int64_t examples = 0;
};

struct RougeTable {
  std::vector<RougeRow> rows;  // one per language, name order
  RougeRow average;            // unweighted mean over language rows
};

using FloatModel = SovMasModel<float>;

// Resolves split ids to corpus indices; errors on unknown ids.
std::vector<int64_t> resolve_ids(const Corpus& corpus, std::span<const int64_t> ids);

// Runs `config.steps` optimizer updates. Each step samples a language (in
// multilingual mode, count^exponent-weighted), draws a batch from it, runs
// the three task paths, and takes one Adam step on the weighted joint loss.
// Zero-weight losses are still evaluated and logged but get no gradient.
// Non-finite losses skip the step; three consecutive skips abort. When
// `run_dir` is set, metrics (JSONL + CSV) and checkpoints are written there.
RunMetrics train(FloatModel& model, AdamState<float>& opt, const Corpus& corpus,
                 const CorpusSplit& split, const TrainConfig& config,
                 const std::string& run_dir = "");

// Scores arbitrary candidate summaries against the corpus references and
// averages per-language ROUGE; the average row is the unweighted mean over
// languages. `candidate_for` receives a corpus index.
RougeTable score_candidates(
    const Corpus& corpus, std::span<const int64_t> ids,
    const std::function<std::vector<int32_t>(int64_t)>& candidate_for);

// Beam-decodes every example and scores the results.
RougeTable evaluate(const FloatModel& model, const Corpus& corpus,
                    std::span<const int64_t> ids, const DecodeConfig& decode);

std::string format_rouge_tsv(const RougeTable& table);

// Loads a checkpoint and continues training on the merged few-shot pool
// (every pool example is a training example). Missing optimizer state
// restarts the optimizer with a warning on stderr.
RunMetrics few_shot_continue(FloatModel& model, AdamState<float>& opt,
                             const std::string& checkpoint_path, const Corpus& pool,
                             TrainConfig config, const std::string& run_dir = "");

// Teacher-forced argmax accuracy over summary positions. Non-pad positions
// only; the end-marker slot is excluded so sequence-length information does
// not enter the score.
enum class TaskPath { kMas, kVis2Sum };
double teacher_forced_accuracy(const FloatModel& model, const Corpus& corpus,
                               std::span<const int64_t> ids, TaskPath path,
                               int64_t batch_size = 16);

// Checkpoint helpers; optimizer state rides along under the "opt." prefix.
void save_model_checkpoint(const std::string& path, const FloatModel& model,
                           const AdamState<float>* opt = nullptr);
bool load_model_checkpoint(const std::string& path, FloatModel& model,
                           AdamState<float>* opt = nullptr);

}  // namespace sovmas

#endif  // SOVMAS_TRAINER_HPP
