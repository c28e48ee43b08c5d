// Operator CLI: one binary, subcommands for corpus synthesis, splitting,
// training, evaluation, generation, gradient checking, and corpus stats.
//
// Configuration precedence everywhere: command-line flags > config file
// (flat key=value text, via --config) > built-in defaults. SOVMAS_SEED
// provides a global fallback for --seed.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "sovmas/checkpoint.hpp"
#include "sovmas/dataio.hpp"
#include "sovmas/model.hpp"
#include "sovmas/reference_check.hpp"
#include "sovmas/rouge.hpp"
#include "sovmas/synth.hpp"
#include "sovmas/trainer.hpp"

using namespace sovmas;
using nlohmann::json;

namespace {

void add_model_options(CLI::App* cmd, ModelConfig& cfg) {
  cmd->add_option("--vocab-size", cfg.vocab_size, "vocabulary size");
  cmd->add_option("--d", cfg.d, "text/model width");
  cmd->add_option("--d-c", cfg.d_c, "fusion width");
  cmd->add_option("--d-v", cfg.d_v, "visual width");
  cmd->add_option("--text-layers", cfg.text_layers, "encoder/decoder depth");
  cmd->add_option("--vision-layers", cfg.vision_layers, "visual encoder depth");
  cmd->add_option("--heads", cfg.heads, "attention heads");
  cmd->add_option("--ffn-dim", cfg.ffn_dim, "feed-forward width");
  cmd->add_option("--max-text-len", cfg.max_text_len, "article length cap");
  cmd->add_option("--max-summary-len", cfg.max_summary_len, "summary length cap");
  cmd->add_option("--n-images", cfg.n_images, "image slots per example");
  cmd->add_option("--regions-per-image", cfg.regions_per_image, "regions per image");
  cmd->add_option("--classes", cfg.detector_classes, "detector class count");
  cmd->add_option("--dropout", cfg.dropout, "dropout rate");
  cmd->add_option("--label-smoothing", cfg.label_smoothing, "label smoothing");
}

std::string resolved_config_text(const ModelConfig& m, const TrainConfig& t) {
  std::ostringstream os;
  os << "vocab-size=" << m.vocab_size << "\n";
  os << "d=" << m.d << "\n";
  os << "d-c=" << m.d_c << "\n";
  os << "d-v=" << m.d_v << "\n";
  os << "text-layers=" << m.text_layers << "\n";
  os << "vision-layers=" << m.vision_layers << "\n";
  os << "heads=" << m.heads << "\n";
  os << "ffn-dim=" << m.ffn_dim << "\n";
  os << "max-text-len=" << m.max_text_len << "\n";
  os << "max-summary-len=" << m.max_summary_len << "\n";
  os << "n-images=" << m.n_images << "\n";
  os << "regions-per-image=" << m.regions_per_image << "\n";
  os << "classes=" << m.detector_classes << "\n";
  os << "dropout=" << m.dropout << "\n";
  os << "label-smoothing=" << m.label_smoothing << "\n";
  os << "mode=" << (t.mode == TrainMode::kMonolingual ? "mono" : "multi") << "\n";
  if (!t.language.empty()) os << "language=" << t.language << "\n";
  os << "steps=" << t.steps << "\n";
  os << "batch-size=" << t.batch_size << "\n";
  os << "alpha=" << t.weights.alpha << "\n";
  os << "beta=" << t.weights.beta << "\n";
  os << "mas-weight=" << t.mas_weight << "\n";
  os << "lr=" << t.schedule.peak_lr << "\n";
  os << "warmup=" << t.schedule.warmup_steps << "\n";
  os << "lr-schedule="
     << (t.schedule.kind == LrScheduleKind::kConstant ? "constant" : "inverse-sqrt")
     << "\n";
  os << "grad-clip=" << t.grad_clip << "\n";
  os << "seed=" << t.seed << "\n";
  os << "checkpoint-interval=" << t.checkpoint_interval << "\n";
  os << "eval-interval=" << t.eval_interval << "\n";
  os << "mask-mode="
     << (t.mask_mode == MaskMode::kMim
             ? "mim"
             : t.mask_mode == MaskMode::kMrm ? "mrm" : "off")
     << "\n";
  os << "mrm-prob=" << t.mrm_prob << "\n";
  os << "sampler-exponent=" << t.sampler_exponent << "\n";
  return os.str();
}

void print_corpus_stats(std::ostream& os, const Corpus& corpus) {
  os << "Language\t#Samples\t#Images\n";
  int64_t total_samples = 0, total_images = 0;
  for (const auto& lang : corpus.languages()) {
    int64_t samples = 0, images = 0;
    for (int64_t idx : corpus.indices_for_language(lang)) {
      ++samples;
      images += corpus.examples[static_cast<size_t>(idx)].n_images_present;
    }
    os << lang << "\t" << samples << "\t" << images << "\n";
    total_samples += samples;
    total_images += images;
  }
  os << "Total Samples\t" << total_samples << "\n";
  os << "Total Images\t" << total_images << "\n";
  os << "Avg. of Images\t" << std::fixed << std::setprecision(2)
     << (total_samples
             ? static_cast<double>(total_images) / static_cast<double>(total_samples)
             : 0.0)
     << "\n";
  os.unsetf(std::ios::fixed);
}

std::vector<int64_t> subset_ids(const CorpusSplit& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "validation") return split.validation;
  if (name == "test") return split.test;
  if (name == "few_shot") return split.few_shot;
  throw std::runtime_error("unknown subset " + name);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  uint64_t seed = 0;
  SynthSpec spec;
};

int run_synth(const SynthArgs& args) {
  const Corpus corpus = synth_corpus(args.seed, args.spec);
  std::filesystem::create_directories(args.out_dir);
  write_corpus(args.out_dir + "/corpus.jsonl", corpus);
  write_vocab(args.out_dir + "/vocab.txt", synth_vocab(args.spec));
  print_corpus_stats(std::cout, corpus);
  std::cout << "wrote " << corpus.examples.size() << " examples to " << args.out_dir
            << "\n";
  return 0;
}

struct SplitArgs {
  std::string corpus_path;
  std::string tier = "low";
  uint64_t seed = 0;
  std::string out_path;
  double train_frac = 0.8;
  double val_frac = 0.1;
};

int run_split(const SplitArgs& args) {
  const Corpus corpus = load_corpus(args.corpus_path);
  const ResourceTier tier = args.tier == "mid-high" ? ResourceTier::kMidHigh
                            : args.tier == "low"    ? ResourceTier::kLow
                                                    : ResourceTier::kZero;
  const CorpusSplit split =
      split_corpus(corpus, tier, args.seed, args.train_frac, args.val_frac);
  write_split(args.out_path, split);
  std::cout << "train=" << split.train.size()
            << " validation=" << split.validation.size() << " test=" << split.test.size()
            << " few_shot=" << split.few_shot.size() << "\n";
  return 0;
}

struct TrainArgs {
  std::string corpus_path;
  std::string split_path;
  std::string out_dir;
  std::string continue_from;
  std::string mode = "multi";
  std::string mask_mode = "mim";
  std::string lr_schedule = "inverse-sqrt";
  ModelConfig model;
  TrainConfig config;
  bool steps_given = false;
};

int run_train(TrainArgs args) {
  args.config.mode =
      args.mode == "mono" ? TrainMode::kMonolingual : TrainMode::kMultilingual;
  args.config.mask_mode = args.mask_mode == "mim"   ? MaskMode::kMim
                          : args.mask_mode == "mrm" ? MaskMode::kMrm
                                                    : MaskMode::kOff;
  args.config.schedule.kind = args.lr_schedule == "constant"
                                  ? LrScheduleKind::kConstant
                                  : LrScheduleKind::kInverseSqrtWarmup;
  if (!args.continue_from.empty() && !args.steps_given)
    args.config.steps = 3000;  // default continuation budget
  args.model.validate();
  args.config.validate();

  const Corpus corpus = load_corpus(args.corpus_path, args.model.vocab_size);
  CorpusSplit split;
  std::string split_source = args.split_path;
  if (!args.split_path.empty()) {
    split = read_split(args.split_path);
  } else if (!args.continue_from.empty()) {
    for (const auto& ex : corpus.examples) split.train.push_back(ex.id);
    split_source = "<all examples (continuation pool)>";
  } else {
    split = split_corpus(corpus, ResourceTier::kLow, args.config.seed);
    split_source = "<internal 80/10/10>";
  }

  // Inputs validated; only now may the run directory appear.
  std::filesystem::create_directories(args.out_dir);
  {
    json manifest;
    manifest["seed"] = args.config.seed;
    manifest["corpus"] = args.corpus_path;
    manifest["corpus_hash"] = fnv1a_file(args.corpus_path);
    manifest["features_hash"] = fnv1a_file(feature_path_for(args.corpus_path));
    manifest["split"] = split_source;
    if (!args.split_path.empty()) manifest["split_hash"] = fnv1a_file(args.split_path);
    if (!args.continue_from.empty()) {
      manifest["continue_from"] = args.continue_from;
      manifest["checkpoint_hash"] = fnv1a_file(args.continue_from);
    }
    atomic_file_commit(args.out_dir + "/manifest.json",
                       [&](std::ostream& os) { os << manifest.dump(2) << "\n"; });
    atomic_file_commit(args.out_dir + "/config.resolved", [&](std::ostream& os) {
      os << resolved_config_text(args.model, args.config);
    });
  }

  FloatModel model(args.model, args.config.seed ^ 0x5eedull);
  AdamState<float> opt;
  RunMetrics metrics;
  if (!args.continue_from.empty())
    metrics = few_shot_continue(model, opt, args.continue_from, corpus, args.config,
                                args.out_dir);
  else
    metrics = train(model, opt, corpus, split, args.config, args.out_dir);

  if (!metrics.steps.empty()) {
    const auto& last = metrics.steps.back();
    std::cout << "final step " << last.step << ": L_MAS=" << last.l_mas
              << " L_Vis2Sum=" << last.l_v2s << " L_MIM=" << last.l_mim
              << " J=" << last.j << "\n";
  }
  std::cout << "run artifacts in " << args.out_dir << "\n";
  return 0;
}

struct EvalArgs {
  std::string corpus_path;
  std::string split_path;
  std::string subset = "test";
  std::string checkpoint;
  std::string out_path;
  std::string compare_path;
  std::string significance_out;
  int64_t resamples = 10000;
  uint64_t seed = 0;
  ModelConfig model;
  DecodeConfig decode;
};

int run_eval(const EvalArgs& args) {
  args.model.validate();
  const Corpus corpus = load_corpus(args.corpus_path, args.model.vocab_size);
  const CorpusSplit split = read_split(args.split_path);
  const std::vector<int64_t> ids = subset_ids(split, args.subset);

  FloatModel model(args.model, 0);
  load_model_checkpoint(args.checkpoint, model);
  const RougeTable table = evaluate(model, corpus, ids, args.decode);
  const std::string tsv = format_rouge_tsv(table);
  std::cout << tsv;
  if (!args.out_path.empty())
    atomic_file_commit(args.out_path, [&](std::ostream& os) { os << tsv; });

  if (!args.compare_path.empty()) {
    std::map<int64_t, std::vector<int32_t>> other;
    std::ifstream is(args.compare_path);
    if (!is) throw std::runtime_error("cannot open " + args.compare_path);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const json rec = json::parse(line);
      other[rec.at("id").get<int64_t>()] =
          rec.at("token_ids").get<std::vector<int32_t>>();
    }
    const PadSpec pad = args.model.pad_spec();
    std::vector<double> ours, theirs;
    for (int64_t id : ids) {
      auto it = other.find(id);
      if (it == other.end())
        throw std::runtime_error("comparison file lacks candidate for example " +
                                 std::to_string(id));
      const std::vector<int64_t> one{id};
      const std::vector<int64_t> idx = resolve_ids(corpus, one);
      Batch b = make_batch(corpus, idx, pad);
      const std::vector<int32_t> cand =
          args.decode.beam <= 1
              ? model.greedy_decode(b, 0, args.decode.max_len)
              : model.beam_search(b, 0, args.decode.beam, args.decode.length_penalty,
                                  args.decode.max_len);
      const auto& ref = corpus.examples[static_cast<size_t>(idx[0])].summary_ids;
      ours.push_back(
          rouge_l(std::span<const int32_t>(cand), std::span<const int32_t>(ref)).f1);
      theirs.push_back(
          rouge_l(std::span<const int32_t>(it->second), std::span<const int32_t>(ref))
              .f1);
    }
    const SigReport sig = paired_significance(ours, theirs, args.resamples, args.seed);
    json report;
    report["metric"] = "rouge_l_f1";
    report["p_value"] = sig.p_value;
    report["resamples"] = sig.resamples;
    report["mean_diff"] = sig.mean_diff;
    const std::string out = report.dump(2) + "\n";
    std::cout << out;
    if (!args.significance_out.empty())
      atomic_file_commit(args.significance_out, [&](std::ostream& os) { os << out; });
  }
  return 0;
}

struct GenerateArgs {
  std::string corpus_path;
  std::string split_path;
  std::string subset = "test";
  std::string checkpoint;
  std::string vocab_path;
  std::string out_path;
  int64_t limit = -1;
  ModelConfig model;
  DecodeConfig decode;
};

int run_generate(const GenerateArgs& args) {
  args.model.validate();
  const Corpus corpus = load_corpus(args.corpus_path, args.model.vocab_size);
  const CorpusSplit split = read_split(args.split_path);
  std::vector<int64_t> ids = subset_ids(split, args.subset);
  if (args.limit >= 0 && static_cast<int64_t>(ids.size()) > args.limit)
    ids.resize(static_cast<size_t>(args.limit));

  std::vector<std::string> vocab;
  if (!args.vocab_path.empty()) vocab = load_vocab(args.vocab_path);

  FloatModel model(args.model, 0);
  load_model_checkpoint(args.checkpoint, model);
  const PadSpec pad = args.model.pad_spec();

  std::ostringstream body;
  for (int64_t id : ids) {
    const std::vector<int64_t> one{id};
    const std::vector<int64_t> idx = resolve_ids(corpus, one);
    Batch b = make_batch(corpus, idx, pad);
    const std::vector<int32_t> cand =
        args.decode.beam <= 1
            ? model.greedy_decode(b, 0, args.decode.max_len)
            : model.beam_search(b, 0, args.decode.beam, args.decode.length_penalty,
                                args.decode.max_len);
    json rec;
    rec["id"] = id;
    rec["lang"] = corpus.examples[static_cast<size_t>(idx[0])].lang;
    rec["token_ids"] = cand;
    if (!vocab.empty()) rec["text"] = detokenize(cand, vocab);
    body << rec.dump() << "\n";
  }
  if (args.out_path.empty())
    std::cout << body.str();
  else
    atomic_file_commit(args.out_path, [&](std::ostream& os) { os << body.str(); });
  std::cerr << "generated " << ids.size() << " summaries\n";
  return 0;
}

struct GradcheckArgs {
  int precision = 64;
  double eps = 0.0;
  double tolerance = 0.0;
  int max_entries = 64;
};

int run_gradcheck(const GradcheckArgs& args) {
  const double tol =
      args.tolerance > 0 ? args.tolerance : reference_grad_tolerance(args.precision);
  const double err = reference_joint_grad_check(args.precision, args.eps, args.max_entries);
  std::cout << "precision: " << args.precision << "-bit\n";
  std::cout << "max relative error: " << err << "\n";
  std::cout << "tolerance: " << tol << "\n";
  if (err < tol) {
    std::cout << "gradcheck: PASS\n";
    return 0;
  }
  std::cout << "gradcheck: FAIL\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vision-guided multilingual abstractive summarization toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--out", synth_args.out_dir, "output directory")->required();
  synth->add_option("--seed", synth_args.seed, "rng seed")->envname("SOVMAS_SEED");
  synth->add_option("--langs", synth_args.spec.languages, "language count");
  synth->add_option("--sizes", synth_args.spec.sizes, "examples per language")
      ->delimiter(',');
  synth->add_option("--vocab-size", synth_args.spec.vocab_size, "vocabulary size");
  synth->add_option("--classes", synth_args.spec.detector_classes, "detector classes");
  synth->add_option("--n-images", synth_args.spec.n_images, "max images per example");
  synth->add_option("--min-images", synth_args.spec.min_images,
                    "min images per example");
  synth->add_option("--regions-per-image", synth_args.spec.regions_per_image,
                    "regions per image");
  synth->add_option("--d-v", synth_args.spec.d_v, "region feature width");
  synth->add_option("--informativeness", synth_args.spec.informativeness,
                    "vision-summary signal in [0,1]");
  synth->add_option("--article-informativeness",
                    synth_args.spec.article_informativeness,
                    "article-summary signal in [0,1]");
  synth->add_option("--article-fillers", synth_args.spec.article_fillers_per_image,
                    "filler tokens per image");
  synth->add_option("--q-sharpness", synth_args.spec.q_sharpness,
                    "class distribution sharpness in (0,1]");
  synth->add_option("--feature-noise", synth_args.spec.feature_noise,
                    "feature noise stddev around class prototypes");
  synth->add_option("--topic-coherence", synth_args.spec.topic_coherence,
                    "probability an image shares the document topic");

  SplitArgs split_args;
  CLI::App* split = app.add_subcommand("split", "write resource-tier splits");
  split->add_option("--corpus", split_args.corpus_path, "corpus manifest")->required();
  split->add_option("--tier", split_args.tier, "mid-high | low | zero")
      ->check(CLI::IsMember({"mid-high", "low", "zero"}));
  split->add_option("--seed", split_args.seed, "shuffle seed")->envname("SOVMAS_SEED");
  split->add_option("--out", split_args.out_path, "split file")->required();
  split->add_option("--train-frac", split_args.train_frac, "train fraction");
  split->add_option("--val-frac", split_args.val_frac, "validation fraction");

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  std::string train_config_file;
  train_cmd->add_option("--config", train_config_file, "flat key=value config file");
  train_cmd->add_option("--corpus", train_args.corpus_path, "corpus manifest")
      ->required();
  train_cmd->add_option("--split", train_args.split_path, "split file");
  train_cmd->add_option("--out", train_args.out_dir, "run directory")->required();
  train_cmd->add_option("--continue-from", train_args.continue_from,
                        "checkpoint for few-shot continuation");
  add_model_options(train_cmd, train_args.model);
  train_cmd->add_option("--mode", train_args.mode, "mono | multi")
      ->check(CLI::IsMember({"mono", "multi"}));
  train_cmd->add_option("--language", train_args.config.language,
                        "language for monolingual mode");
  auto* steps_opt =
      train_cmd->add_option("--steps", train_args.config.steps, "optimizer steps");
  train_cmd->add_option("--batch-size", train_args.config.batch_size, "batch size");
  train_cmd->add_option("--alpha", train_args.config.weights.alpha,
                        "vision-to-summary weight");
  train_cmd->add_option("--beta", train_args.config.weights.beta, "masked-image weight");
  train_cmd->add_option("--mas-weight", train_args.config.mas_weight,
                        "main task weight");
  train_cmd->add_option("--lr", train_args.config.schedule.peak_lr,
                        "peak learning rate");
  train_cmd->add_option("--warmup", train_args.config.schedule.warmup_steps,
                        "warmup steps");
  train_cmd
      ->add_option("--lr-schedule", train_args.lr_schedule, "inverse-sqrt | constant")
      ->check(CLI::IsMember({"inverse-sqrt", "constant"}));
  train_cmd->add_option("--grad-clip", train_args.config.grad_clip,
                        "global gradient norm cap (0 = off)");
  train_cmd->add_option("--seed", train_args.config.seed, "run seed")
      ->envname("SOVMAS_SEED");
  train_cmd->add_option("--checkpoint-interval", train_args.config.checkpoint_interval,
                        "steps between checkpoints (0 = final only)");
  train_cmd->add_option("--eval-interval", train_args.config.eval_interval,
                        "steps between validation passes (0 = off)");
  train_cmd->add_option("--mask-mode", train_args.mask_mode, "mim | mrm | off")
      ->check(CLI::IsMember({"mim", "mrm", "off"}));
  train_cmd->add_option("--mrm-prob", train_args.config.mrm_prob,
                        "region mask probability");
  train_cmd->add_option("--sampler-exponent", train_args.config.sampler_exponent,
                        "language sampling smoothing exponent");

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint with ROUGE");
  std::string eval_config_file;
  eval_cmd->add_option("--config", eval_config_file, "flat key=value config file");
  eval_cmd->add_option("--corpus", eval_args.corpus_path, "corpus manifest")->required();
  eval_cmd->add_option("--split", eval_args.split_path, "split file")->required();
  eval_cmd->add_option("--subset", eval_args.subset,
                       "train | validation | test | few_shot");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")
      ->required();
  add_model_options(eval_cmd, eval_args.model);
  eval_cmd->add_option("--beam", eval_args.decode.beam, "beam width");
  eval_cmd->add_option("--length-penalty", eval_args.decode.length_penalty,
                       "length penalty exponent");
  eval_cmd->add_option("--max-len", eval_args.decode.max_len, "decode length cap");
  eval_cmd->add_option("--out", eval_args.out_path, "TSV output path");
  eval_cmd->add_option("--compare", eval_args.compare_path,
                       "generations file to test significance against");
  eval_cmd->add_option("--significance-out", eval_args.significance_out,
                       "significance report path");
  eval_cmd->add_option("--resamples", eval_args.resamples, "bootstrap resamples");
  eval_cmd->add_option("--seed", eval_args.seed, "bootstrap seed")
      ->envname("SOVMAS_SEED");

  GenerateArgs gen_args;
  CLI::App* gen_cmd = app.add_subcommand("generate", "decode candidate summaries");
  std::string gen_config_file;
  gen_cmd->add_option("--config", gen_config_file, "flat key=value config file");
  gen_cmd->add_option("--corpus", gen_args.corpus_path, "corpus manifest")->required();
  gen_cmd->add_option("--split", gen_args.split_path, "split file")->required();
  gen_cmd->add_option("--subset", gen_args.subset,
                      "train | validation | test | few_shot");
  gen_cmd->add_option("--checkpoint", gen_args.checkpoint, "model checkpoint")
      ->required();
  gen_cmd->add_option("--vocab", gen_args.vocab_path,
                      "vocabulary for detokenized text");
  gen_cmd->add_option("--limit", gen_args.limit, "max examples");
  add_model_options(gen_cmd, gen_args.model);
  gen_cmd->add_option("--beam", gen_args.decode.beam, "beam width");
  gen_cmd->add_option("--length-penalty", gen_args.decode.length_penalty,
                      "length penalty exponent");
  gen_cmd->add_option("--max-len", gen_args.decode.max_len, "decode length cap");
  gen_cmd->add_option("--out", gen_args.out_path, "JSONL output path");

  GradcheckArgs grad_args;
  CLI::App* grad_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of the joint objective");
  grad_cmd->add_option("--precision", grad_args.precision, "32 or 64")
      ->check(CLI::IsMember({32, 64}));
  grad_cmd->add_option("--eps", grad_args.eps, "finite-difference step scale");
  grad_cmd->add_option("--tolerance", grad_args.tolerance, "failure threshold");
  grad_cmd->add_option("--max-entries", grad_args.max_entries,
                       "sampled entries per tensor");

  std::string stats_corpus;
  CLI::App* stats_cmd = app.add_subcommand("stats", "print corpus statistics");
  stats_cmd->add_option("--corpus", stats_corpus, "corpus manifest")->required();

  // Config-file expansion: flags beat file values, file values beat
  // defaults. Keys are the long option names without the leading dashes.
  std::vector<std::string> args(argv + 1, argv + argc);
  if (!args.empty() &&
      (args[0] == "train" || args[0] == "eval" || args[0] == "generate")) {
    std::string config_path;
    for (size_t i = 1; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size())
        config_path = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0)
        config_path = args[i].substr(9);
    }
    if (!config_path.empty()) {
      std::ifstream is(config_path);
      if (!is) {
        std::cerr << "error: cannot open config file " << config_path << "\n";
        return 1;
      }
      CLI::App* sub = app.get_subcommand(args[0]);
      std::string line;
      while (std::getline(is, line)) {
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
          std::cerr << "error: " << config_path << ": not a key=value line: " << line
                    << "\n";
          return 1;
        }
        const std::string flag = "--" + line.substr(0, eq);
        // keys another subcommand owns (say, training keys during eval) are
        // skipped rather than rejected, so one file can serve a whole run
        if (sub->get_option_no_throw(flag) == nullptr) continue;
        bool present = false;
        for (const auto& a : args)
          present = present || a == flag || a.rfind(flag + "=", 0) == 0;
        if (!present) args.push_back(flag + "=" + line.substr(eq + 1));
      }
    }
  }
  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return run_synth(synth_args);
    if (*split) return run_split(split_args);
    if (*train_cmd) {
      train_args.steps_given = steps_opt->count() > 0;
      return run_train(train_args);
    }
    if (*eval_cmd) return run_eval(eval_args);
    if (*gen_cmd) return run_generate(gen_args);
    if (*grad_cmd) return run_gradcheck(grad_args);
    if (*stats_cmd) {
      print_corpus_stats(std::cout, load_corpus(stats_corpus));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
