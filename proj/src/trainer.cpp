#include "sovmas/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "sovmas/checkpoint.hpp"
#include "sovmas/rouge.hpp"

namespace sovmas {

using nlohmann::json;

std::vector<int64_t> resolve_ids(const Corpus& corpus, std::span<const int64_t> ids) {
  std::map<int64_t, int64_t> index;
  for (size_t i = 0; i < corpus.examples.size(); ++i)
    index[corpus.examples[i].id] = static_cast<int64_t>(i);
  std::vector<int64_t> out;
  out.reserve(ids.size());
  for (int64_t id : ids) {
    auto it = index.find(id);
    if (it == index.end())
      throw std::runtime_error("split references unknown example id " + std::to_string(id));
    out.push_back(it->second);
  }
  return out;
}

namespace {

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct LanguagePools {
  std::vector<std::string> names;
  std::vector<std::vector<int64_t>> train_indices;  // per language
};

LanguagePools build_pools(const Corpus& corpus, const CorpusSplit& split,
                          const TrainConfig& config) {
  const std::vector<int64_t> train = resolve_ids(corpus, split.train);
  if (train.empty()) reject("train: empty training split");
  LanguagePools pools;
  std::map<std::string, size_t> slot;
  for (int64_t idx : train) {
    const std::string& lang = corpus.examples[static_cast<size_t>(idx)].lang;
    if (config.mode == TrainMode::kMonolingual && lang != config.language) continue;
    auto it = slot.find(lang);
    if (it == slot.end()) {
      slot[lang] = pools.names.size();
      pools.names.push_back(lang);
      pools.train_indices.emplace_back();
      it = slot.find(lang);
    }
    pools.train_indices[it->second].push_back(idx);
  }
  if (pools.names.empty())
    reject("train: no training examples" +
           (config.mode == TrainMode::kMonolingual
                ? " for language \"" + config.language + "\""
                : std::string()));
  return pools;
}

double validation_loss(const FloatModel& model, const Corpus& corpus,
                       const std::vector<int64_t>& val_indices, int64_t batch_size) {
  NoGradGuard no_grad;
  const ForwardCtx ctx = ForwardCtx::eval();
  const PadSpec spec = model.config().pad_spec();
  // Deterministic cap keeps mid-training passes cheap.
  const int64_t cap = std::min<int64_t>(static_cast<int64_t>(val_indices.size()), 64);
  (void)batch_size;
  double total = 0;
  for (int64_t i = 0; i < cap; ++i) {
    // one example per batch keeps the single-language batch contract
    Batch b = make_batch(corpus, std::span<const int64_t>(&val_indices[static_cast<size_t>(i)], 1), spec);
    Tensor<float> logp = model.forward_mas(b, ctx);
    total += static_cast<double>(
        loss_mas(logp, std::span<const int32_t>(b.summary_ids), model.config().label_smoothing)
            .value());
  }
  return cap ? total / static_cast<double>(cap) : 0.0;
}

void append_metrics_line(std::ofstream& os, const StepRecord& r) {
  json j;
  j["step"] = r.step;
  j["lang"] = r.lang;
  j["l_mas"] = r.l_mas;
  j["l_vis2sum"] = r.l_v2s;
  j["l_mim"] = r.l_mim;
  j["j"] = r.j;
  j["lr"] = r.lr;
  j["grad_norm"] = r.grad_norm;
  if (r.skipped) j["skipped"] = true;
  os << j.dump() << "\n";
}

}  // namespace

void save_model_checkpoint(const std::string& path, const FloatModel& model,
                           const AdamState<float>* opt) {
  std::vector<NamedTensorF32> entries;
  const auto named = model.named_parameters();
  for (const auto& [name, tensor] : named)
    entries.push_back(to_f32_entry(name, tensor));
  if (opt != nullptr) {
    entries.push_back({std::string(kOptimizerPrefix) + "step",
                       {1},
                       {static_cast<float>(opt->step)}});
    entries.push_back({std::string(kOptimizerPrefix) + "beta1", {1}, {static_cast<float>(opt->beta1)}});
    entries.push_back({std::string(kOptimizerPrefix) + "beta2", {1}, {static_cast<float>(opt->beta2)}});
    entries.push_back({std::string(kOptimizerPrefix) + "epsilon", {1}, {static_cast<float>(opt->epsilon)}});
    for (size_t i = 0; i < named.size(); ++i) {
      entries.push_back({std::string(kOptimizerPrefix) + "m." + named[i].first,
                         named[i].second.shape(),
                         opt->m[i]});
      entries.push_back({std::string(kOptimizerPrefix) + "v." + named[i].first,
                         named[i].second.shape(),
                         opt->v[i]});
    }
  }
  write_checkpoint(path, entries);
}

bool load_model_checkpoint(const std::string& path, FloatModel& model,
                           AdamState<float>* opt) {
  const auto entries = read_checkpoint(path);
  std::map<std::string, const NamedTensorF32*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;

  auto named = model.named_parameters();
  for (auto& [name, tensor] : named) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error(path + ": checkpoint is missing parameter \"" + name + "\"");
    load_f32_entry(*it->second, tensor);
  }
  for (const auto& e : entries) {
    if (e.name.rfind(kOptimizerPrefix, 0) == 0) continue;
    bool known = false;
    for (const auto& [name, tensor] : named) known = known || name == e.name;
    if (!known)
      throw std::runtime_error(path + ": checkpoint has unknown parameter \"" + e.name + "\"");
  }

  if (opt == nullptr) return false;
  const auto step_it = by_name.find(std::string(kOptimizerPrefix) + "step");
  if (step_it == by_name.end()) return false;
  std::vector<Tensor<float>> params = model.parameters();
  *opt = AdamState<float>::init(params);
  opt->step = static_cast<int64_t>(step_it->second->values.at(0));
  if (auto it = by_name.find(std::string(kOptimizerPrefix) + "beta1"); it != by_name.end())
    opt->beta1 = static_cast<double>(it->second->values.at(0));
  if (auto it = by_name.find(std::string(kOptimizerPrefix) + "beta2"); it != by_name.end())
    opt->beta2 = static_cast<double>(it->second->values.at(0));
  if (auto it = by_name.find(std::string(kOptimizerPrefix) + "epsilon"); it != by_name.end())
    opt->epsilon = static_cast<double>(it->second->values.at(0));
  for (size_t i = 0; i < named.size(); ++i) {
    for (const char* kind : {"m.", "v."}) {
      auto it = by_name.find(std::string(kOptimizerPrefix) + kind + named[i].first);
      if (it == by_name.end())
        throw std::runtime_error(path + ": optimizer state incomplete for \"" +
                                 named[i].first + "\"");
      auto& dst = kind[0] == 'm' ? opt->m[i] : opt->v[i];
      dst.assign(it->second->values.begin(), it->second->values.end());
    }
  }
  return true;
}

RunMetrics train(FloatModel& model, AdamState<float>& opt, const Corpus& corpus,
                 const CorpusSplit& split, const TrainConfig& config,
                 const std::string& run_dir) {
  config.validate();
  const LanguagePools pools = build_pools(corpus, split, config);
  const std::vector<int64_t> val_indices = resolve_ids(corpus, split.validation);
  const PadSpec pad = model.config().pad_spec();

  SamplerSpec sampler_spec;
  for (size_t i = 0; i < pools.names.size(); ++i)
    sampler_spec.counts.emplace_back(pools.names[i],
                                     static_cast<int64_t>(pools.train_indices[i].size()));
  sampler_spec.exponent = config.sampler_exponent;
  sampler_spec.seed = derive_seed(config.seed, 1);
  LanguageSampler sampler(sampler_spec);

  std::mt19937_64 batch_rng(derive_seed(config.seed, 2));
  std::mt19937_64 mask_rng(derive_seed(config.seed, 3));
  std::mt19937_64 dropout_rng(derive_seed(config.seed, 4));

  std::vector<Tensor<float>> params = model.parameters();
  if (opt.m.size() != params.size()) opt = AdamState<float>::init(params);

  std::ofstream metrics_file;
  std::ofstream csv_file;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    metrics_file.open(run_dir + "/metrics.jsonl", std::ios::app);
    csv_file.open(run_dir + "/losses.csv", std::ios::app);
    if (csv_file.tellp() == 0) csv_file << "step,l_mas,l_vis2sum,l_mim,j,lr\n";
  }

  RunMetrics metrics;
  const double smoothing = model.config().label_smoothing;
  int consecutive_skips = 0;
  double best_validation = std::numeric_limits<double>::infinity();
  int64_t step_counter = opt.step;

  for (int64_t iter = 0; iter < config.steps; ++iter) {
    const int64_t lang_idx = config.mode == TrainMode::kMultilingual
                                 ? sampler.next_index()
                                 : 0;
    const auto& pool = pools.train_indices[static_cast<size_t>(lang_idx)];
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    std::vector<int64_t> chosen;
    chosen.reserve(static_cast<size_t>(config.batch_size));
    for (int64_t i = 0; i < config.batch_size; ++i) chosen.push_back(pool[pick(batch_rng)]);
    Batch batch = make_batch(corpus, chosen, pad);

    StepRecord rec;
    rec.step = ++step_counter;
    rec.lang = batch.lang;
    rec.lr = lr_at(config.schedule, opt.step + 1);

    ForwardCtx ctx = ForwardCtx::train(dropout_rng);
    Tensor<float> l_mas_t, l_v2s_t, l_mim_t;
    {
      // Zero-weight terms run without recording: same values, no gradient.
      const bool mas_live = config.mas_weight > 0;
      const bool v2s_live = config.weights.alpha > 0;
      const bool mim_live = config.weights.beta > 0;
      {
        std::optional<NoGradGuard> guard;
        if (!mas_live) guard.emplace();
        l_mas_t = loss_mas(model.forward_mas(batch, ctx),
                           std::span<const int32_t>(batch.summary_ids), smoothing);
      }
      {
        std::optional<NoGradGuard> guard;
        if (!v2s_live) guard.emplace();
        l_v2s_t = loss_vis2sum(model.forward_vis2sum(batch, ctx),
                               std::span<const int32_t>(batch.summary_ids), smoothing);
      }
      if (config.mask_mode != MaskMode::kOff) {
        MaskedBatch masked = config.mask_mode == MaskMode::kMim
                                 ? mask_one_image(batch, mask_rng)
                                 : mask_regions(batch, config.mrm_prob, mask_rng);
        if (masked.plan.total_masked() > 0) {
          std::optional<NoGradGuard> guard;
          if (!mim_live) guard.emplace();
          MimForward<float> mim = model.forward_mim(masked.batch, masked.plan, ctx);
          l_mim_t = loss_mim(mim.predictions,
                             gather_mask_targets<float>(masked.batch, masked.plan),
                             masked.plan);
        }
      }
    }

    rec.l_mas = static_cast<double>(l_mas_t.value());
    rec.l_v2s = static_cast<double>(l_v2s_t.value());
    rec.l_mim = l_mim_t.defined() ? static_cast<double>(l_mim_t.value()) : 0.0;
    rec.j = config.mas_weight * rec.l_mas + config.weights.alpha * rec.l_v2s +
            config.weights.beta * rec.l_mim;

    bool ok = std::isfinite(rec.j);
    if (ok) {
      // Assemble the optimized objective from the live terms only.
      Tensor<float> j_graph;
      if (config.mas_weight > 0) j_graph = scale(l_mas_t, static_cast<float>(config.mas_weight));
      if (config.weights.alpha > 0) {
        Tensor<float> term = scale(l_v2s_t, static_cast<float>(config.weights.alpha));
        j_graph = j_graph.defined() ? add(j_graph, term) : term;
      }
      if (config.weights.beta > 0 && l_mim_t.defined()) {
        Tensor<float> term = scale(l_mim_t, static_cast<float>(config.weights.beta));
        j_graph = j_graph.defined() ? add(j_graph, term) : term;
      }
      if (!j_graph.defined())
        reject("train: all loss weights are zero, nothing to optimize");
      for (auto& p : params) p.zero_grad();
      j_graph.backward();
      rec.grad_norm = clip_grad_norm(params, config.grad_clip);
      try {
        adam_step(params, opt, rec.lr);
      } catch (const std::runtime_error& e) {
        std::cerr << "step " << rec.step << " rejected: " << e.what() << "\n";
        ok = false;
      }
    }
    if (!ok) {
      rec.skipped = true;
      if (++consecutive_skips >= 3)
        throw std::runtime_error(
            "training aborted: 3 consecutive non-finite steps (last at step " +
            std::to_string(rec.step) + ", lang " + rec.lang + ")");
    } else {
      consecutive_skips = 0;
    }

    metrics.steps.push_back(rec);
    if (metrics_file.is_open()) append_metrics_line(metrics_file, rec);
    if (csv_file.is_open())
      csv_file << rec.step << "," << rec.l_mas << "," << rec.l_v2s << "," << rec.l_mim
               << "," << rec.j << "," << rec.lr << "\n";

    if (config.eval_interval > 0 && (iter + 1) % config.eval_interval == 0 &&
        !val_indices.empty()) {
      EvalRecord ev;
      ev.step = rec.step;
      ev.validation_l_mas = validation_loss(model, corpus, val_indices, config.batch_size);
      metrics.evals.push_back(ev);
      if (metrics_file.is_open()) {
        json j;
        j["step"] = ev.step;
        j["validation_l_mas"] = ev.validation_l_mas;
        metrics_file << j.dump() << "\n";
      }
      if (!run_dir.empty() && ev.validation_l_mas < best_validation) {
        best_validation = ev.validation_l_mas;
        save_model_checkpoint(run_dir + "/checkpoint_best.sovm", model, &opt);
      }
    }
    if (!run_dir.empty() && config.checkpoint_interval > 0 &&
        (iter + 1) % config.checkpoint_interval == 0)
      save_model_checkpoint(run_dir + "/checkpoint_step" + std::to_string(rec.step) + ".sovm",
                            model, &opt);
  }

  if (!run_dir.empty())
    save_model_checkpoint(run_dir + "/checkpoint_final.sovm", model, &opt);
  return metrics;
}

RougeTable score_candidates(
    const Corpus& corpus, std::span<const int64_t> ids,
    const std::function<std::vector<int32_t>(int64_t)>& candidate_for) {
  if (ids.empty()) reject("evaluate: empty split");
  const std::vector<int64_t> indices = resolve_ids(corpus, ids);

  std::map<std::string, std::vector<RougeScore>> r1, r2, rl;
  for (int64_t idx : indices) {
    const auto& ex = corpus.examples[static_cast<size_t>(idx)];
    const std::vector<int32_t> candidate = candidate_for(idx);
    std::span<const int32_t> cand(candidate);
    std::span<const int32_t> ref(ex.summary_ids);
    r1[ex.lang].push_back(rouge_n(cand, ref, 1));
    r2[ex.lang].push_back(rouge_n(cand, ref, 2));
    rl[ex.lang].push_back(rouge_l(cand, ref));
  }

  const auto mean_f1 = [](const std::vector<RougeScore>& v) {
    double s = 0;
    for (const auto& r : v) s += r.f1;
    return v.empty() ? 0.0 : 100.0 * s / static_cast<double>(v.size());
  };

  RougeTable table;
  for (const auto& [lang, scores] : r1) {
    RougeRow row;
    row.lang = lang;
    row.examples = static_cast<int64_t>(scores.size());
    row.r1 = mean_f1(scores);
    row.r2 = mean_f1(r2[lang]);
    row.rl = mean_f1(rl[lang]);
    table.rows.push_back(row);
  }
  table.average.lang = "Avg.";
  for (const auto& row : table.rows) {
    table.average.r1 += row.r1;
    table.average.r2 += row.r2;
    table.average.rl += row.rl;
    table.average.examples += row.examples;
  }
  const double k = static_cast<double>(table.rows.size());
  table.average.r1 /= k;
  table.average.r2 /= k;
  table.average.rl /= k;
  return table;
}

RougeTable evaluate(const FloatModel& model, const Corpus& corpus,
                    std::span<const int64_t> ids, const DecodeConfig& decode) {
  const PadSpec pad = model.config().pad_spec();
  return score_candidates(corpus, ids, [&](int64_t idx) {
    Batch b = make_batch(corpus, std::span<const int64_t>(&idx, 1), pad);
    return decode.beam <= 1
               ? model.greedy_decode(b, 0, decode.max_len)
               : model.beam_search(b, 0, decode.beam, decode.length_penalty,
                                   decode.max_len);
  });
}

std::string format_rouge_tsv(const RougeTable& table) {
  std::ostringstream os;
  os << "language\tR-1\tR-2\tR-L\n";
  os.setf(std::ios::fixed);
  os.precision(2);
  for (const auto& row : table.rows)
    os << row.lang << "\t" << row.r1 << "\t" << row.r2 << "\t" << row.rl << "\n";
  os << table.average.lang << "\t" << table.average.r1 << "\t" << table.average.r2
     << "\t" << table.average.rl << "\n";
  return os.str();
}

RunMetrics few_shot_continue(FloatModel& model, AdamState<float>& opt,
                             const std::string& checkpoint_path, const Corpus& pool,
                             TrainConfig config, const std::string& run_dir) {
  const bool had_opt = load_model_checkpoint(checkpoint_path, model, &opt);
  if (!had_opt) {
    std::cerr << "warning: " << checkpoint_path
              << " has no optimizer state; restarting the optimizer\n";
    std::vector<Tensor<float>> params = model.parameters();
    opt = AdamState<float>::init(params);
  }
  CorpusSplit split;
  for (const auto& ex : pool.examples) split.train.push_back(ex.id);
  config.mode = TrainMode::kMultilingual;
  return train(model, opt, pool, split, config, run_dir);
}

double teacher_forced_accuracy(const FloatModel& model, const Corpus& corpus,
                               std::span<const int64_t> ids, TaskPath path,
                               int64_t batch_size) {
  NoGradGuard no_grad;
  const ForwardCtx ctx = ForwardCtx::eval();
  const PadSpec pad = model.config().pad_spec();
  const std::vector<int64_t> indices = resolve_ids(corpus, ids);
  int64_t correct = 0, total = 0;
  for (size_t start = 0; start < indices.size();) {
    // single-language batches
    std::vector<int64_t> chunk{indices[start]};
    const std::string& lang = corpus.examples[static_cast<size_t>(indices[start])].lang;
    ++start;
    while (start < indices.size() &&
           static_cast<int64_t>(chunk.size()) < batch_size &&
           corpus.examples[static_cast<size_t>(indices[start])].lang == lang) {
      chunk.push_back(indices[start]);
      ++start;
    }
    Batch b = make_batch(corpus, chunk, pad);
    Tensor<float> logp = path == TaskPath::kMas ? model.forward_mas(b, ctx)
                                                : model.forward_vis2sum(b, ctx);
    const int64_t v = model.config().vocab_size;
    for (int64_t row = 0; row < b.batch_size * b.summary_len; ++row) {
      const int32_t target = b.summary_ids[static_cast<size_t>(row)];
      if (target == kPadId || target == kEndId) continue;
      int64_t best = 0;
      for (int64_t j = 1; j < v; ++j)
        if (logp.at(row * v + j) > logp.at(row * v + best)) best = j;
      if (static_cast<int32_t>(best) == target) ++correct;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace sovmas
