#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sovmas/dataio.hpp"
#include "sovmas/model.hpp"
#include "sovmas/objectives.hpp"
#include "sovmas/optim.hpp"
#include "sovmas/reference_check.hpp"
#include "sovmas/rouge.hpp"
#include "sovmas/synth.hpp"
#include "sovmas/trainer.hpp"

namespace py = pybind11;
using namespace sovmas;

namespace {

py::dict score_dict(const RougeScore& s) {
  py::dict d;
  d["precision"] = s.precision;
  d["recall"] = s.recall;
  d["f1"] = s.f1;
  return d;
}

py::list table_rows(const RougeTable& table) {
  py::list rows;
  auto row_dict = [](const RougeRow& r) {
    py::dict d;
    d["lang"] = r.lang;
    d["r1"] = r.r1;
    d["r2"] = r.r2;
    d["rl"] = r.rl;
    d["examples"] = r.examples;
    return d;
  };
  for (const auto& r : table.rows) rows.append(row_dict(r));
  rows.append(row_dict(table.average));
  return rows;
}

py::dict metrics_dict(const RunMetrics& m) {
  py::dict d;
  py::list steps;
  for (const auto& s : m.steps) {
    py::dict r;
    r["step"] = s.step;
    r["lang"] = s.lang;
    r["l_mas"] = s.l_mas;
    r["l_vis2sum"] = s.l_v2s;
    r["l_mim"] = s.l_mim;
    r["j"] = s.j;
    r["lr"] = s.lr;
    r["skipped"] = s.skipped;
    steps.append(r);
  }
  d["steps"] = steps;
  if (!m.steps.empty()) {
    const auto& last = m.steps.back();
    d["final_l_mas"] = last.l_mas;
    d["final_j"] = last.j;
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Vision-guided multilingual abstractive summarization toolkit";

  py::class_<SynthSpec>(m, "SynthSpec")
      .def(py::init<>())
      .def_readwrite("languages", &SynthSpec::languages)
      .def_readwrite("sizes", &SynthSpec::sizes)
      .def_readwrite("vocab_size", &SynthSpec::vocab_size)
      .def_readwrite("detector_classes", &SynthSpec::detector_classes)
      .def_readwrite("n_images", &SynthSpec::n_images)
      .def_readwrite("min_images", &SynthSpec::min_images)
      .def_readwrite("regions_per_image", &SynthSpec::regions_per_image)
      .def_readwrite("d_v", &SynthSpec::d_v)
      .def_readwrite("informativeness", &SynthSpec::informativeness)
      .def_readwrite("article_informativeness", &SynthSpec::article_informativeness)
      .def_readwrite("feature_noise", &SynthSpec::feature_noise)
      .def_readwrite("topic_coherence", &SynthSpec::topic_coherence)
      .def_readwrite("article_fillers_per_image", &SynthSpec::article_fillers_per_image)
      .def_readwrite("q_sharpness", &SynthSpec::q_sharpness);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("d", &ModelConfig::d)
      .def_readwrite("d_c", &ModelConfig::d_c)
      .def_readwrite("d_v", &ModelConfig::d_v)
      .def_readwrite("text_layers", &ModelConfig::text_layers)
      .def_readwrite("vision_layers", &ModelConfig::vision_layers)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("ffn_dim", &ModelConfig::ffn_dim)
      .def_readwrite("max_text_len", &ModelConfig::max_text_len)
      .def_readwrite("max_summary_len", &ModelConfig::max_summary_len)
      .def_readwrite("n_images", &ModelConfig::n_images)
      .def_readwrite("regions_per_image", &ModelConfig::regions_per_image)
      .def_readwrite("detector_classes", &ModelConfig::detector_classes)
      .def_readwrite("dropout", &ModelConfig::dropout)
      .def_readwrite("label_smoothing", &ModelConfig::label_smoothing);

  py::enum_<TrainMode>(m, "TrainMode")
      .value("MONOLINGUAL", TrainMode::kMonolingual)
      .value("MULTILINGUAL", TrainMode::kMultilingual);
  py::enum_<MaskMode>(m, "MaskMode")
      .value("MIM", MaskMode::kMim)
      .value("MRM", MaskMode::kMrm)
      .value("OFF", MaskMode::kOff);
  py::enum_<ResourceTier>(m, "ResourceTier")
      .value("MID_HIGH", ResourceTier::kMidHigh)
      .value("LOW", ResourceTier::kLow)
      .value("ZERO", ResourceTier::kZero);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("mode", &TrainConfig::mode)
      .def_readwrite("language", &TrainConfig::language)
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("mas_weight", &TrainConfig::mas_weight)
      .def_property(
          "alpha", [](const TrainConfig& c) { return c.weights.alpha; },
          [](TrainConfig& c, double v) { c.weights.alpha = v; })
      .def_property(
          "beta", [](const TrainConfig& c) { return c.weights.beta; },
          [](TrainConfig& c, double v) { c.weights.beta = v; })
      .def_property(
          "peak_lr", [](const TrainConfig& c) { return c.schedule.peak_lr; },
          [](TrainConfig& c, double v) { c.schedule.peak_lr = v; })
      .def_property(
          "warmup_steps", [](const TrainConfig& c) { return c.schedule.warmup_steps; },
          [](TrainConfig& c, int64_t v) { c.schedule.warmup_steps = v; })
      .def_readwrite("grad_clip", &TrainConfig::grad_clip)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("checkpoint_interval", &TrainConfig::checkpoint_interval)
      .def_readwrite("eval_interval", &TrainConfig::eval_interval)
      .def_readwrite("mask_mode", &TrainConfig::mask_mode)
      .def_readwrite("mrm_prob", &TrainConfig::mrm_prob)
      .def_readwrite("sampler_exponent", &TrainConfig::sampler_exponent);

  py::class_<Corpus>(m, "Corpus")
      .def("__len__", [](const Corpus& c) { return c.examples.size(); })
      .def("languages", &Corpus::languages)
      .def("example_ids",
           [](const Corpus& c) {
             std::vector<int64_t> ids;
             for (const auto& ex : c.examples) ids.push_back(ex.id);
             return ids;
           })
      .def("summary_ids", [](const Corpus& c, int64_t id) {
        return c.by_id(id).summary_ids;
      });

  py::class_<CorpusSplit>(m, "CorpusSplit")
      .def_readonly("train", &CorpusSplit::train)
      .def_readonly("validation", &CorpusSplit::validation)
      .def_readonly("test", &CorpusSplit::test)
      .def_readonly("few_shot", &CorpusSplit::few_shot);

  py::class_<FloatModel>(m, "Model")
      .def(py::init<ModelConfig, uint64_t>(), py::arg("config"), py::arg("seed"))
      .def("save", [](const FloatModel& model, const std::string& path) {
        save_model_checkpoint(path, model);
      })
      .def("load", [](FloatModel& model, const std::string& path) {
        load_model_checkpoint(path, model);
      });

  m.def("synth_corpus", &synth_corpus, py::arg("seed"), py::arg("spec"));
  m.def("synth_vocab", &synth_vocab);
  m.def("write_corpus", &write_corpus, py::arg("manifest_path"), py::arg("corpus"));
  m.def("load_corpus", &load_corpus, py::arg("manifest_path"), py::arg("vocab_size") = -1);
  m.def("write_vocab", &write_vocab);
  m.def("load_vocab", &load_vocab);
  m.def(
      "split_corpus",
      [](const Corpus& c, ResourceTier tier, uint64_t seed, double train_frac,
         double val_frac) { return split_corpus(c, tier, seed, train_frac, val_frac); },
      py::arg("corpus"), py::arg("tier"), py::arg("seed"), py::arg("train_frac") = 0.8,
      py::arg("val_frac") = 0.1);

  m.def(
      "train",
      [](FloatModel& model, const Corpus& corpus, const CorpusSplit& split,
         const TrainConfig& config, const std::string& run_dir) {
        AdamState<float> opt;
        return metrics_dict(train(model, opt, corpus, split, config, run_dir));
      },
      py::arg("model"), py::arg("corpus"), py::arg("split"), py::arg("config"),
      py::arg("run_dir") = "");

  m.def(
      "evaluate",
      [](const FloatModel& model, const Corpus& corpus, const std::vector<int64_t>& ids,
         int64_t beam, double length_penalty) {
        DecodeConfig dc{beam, length_penalty, -1};
        return table_rows(evaluate(model, corpus, ids, dc));
      },
      py::arg("model"), py::arg("corpus"), py::arg("ids"), py::arg("beam") = 4,
      py::arg("length_penalty") = 0.6);

  m.def(
      "generate_summary",
      [](const FloatModel& model, const Corpus& corpus, int64_t example_id, int64_t beam,
         double length_penalty) {
        const std::vector<int64_t> idx =
            resolve_ids(corpus, std::vector<int64_t>{example_id});
        Batch b = make_batch(corpus, idx, model.config().pad_spec());
        return beam <= 1 ? model.greedy_decode(b, 0)
                         : model.beam_search(b, 0, beam, length_penalty);
      },
      py::arg("model"), py::arg("corpus"), py::arg("example_id"), py::arg("beam") = 4,
      py::arg("length_penalty") = 0.6);

  m.def("detokenize", [](const std::vector<int32_t>& ids,
                         const std::vector<std::string>& vocab) {
    return detokenize(ids, vocab);
  });

  m.def(
      "rouge_n",
      [](const std::vector<std::string>& cand, const std::vector<std::string>& ref,
         int n) {
        return score_dict(rouge_n(std::span<const std::string>(cand),
                                  std::span<const std::string>(ref), n));
      },
      py::arg("candidate"), py::arg("reference"), py::arg("n") = 1);
  m.def(
      "rouge_n_ids",
      [](const std::vector<int32_t>& cand, const std::vector<int32_t>& ref, int n) {
        return score_dict(rouge_n(std::span<const int32_t>(cand),
                                  std::span<const int32_t>(ref), n));
      },
      py::arg("candidate"), py::arg("reference"), py::arg("n") = 1);
  m.def("rouge_l", [](const std::vector<std::string>& cand,
                      const std::vector<std::string>& ref) {
    return score_dict(
        rouge_l(std::span<const std::string>(cand), std::span<const std::string>(ref)));
  });
  m.def("rouge_l_ids", [](const std::vector<int32_t>& cand,
                          const std::vector<int32_t>& ref) {
    return score_dict(
        rouge_l(std::span<const int32_t>(cand), std::span<const int32_t>(ref)));
  });
  m.def(
      "tokenize_for_rouge",
      [](const std::string& text, const std::string& lang) {
        return tokenize_for_rouge(text, lang);
      },
      py::arg("text"), py::arg("lang") = "en");
  m.def(
      "paired_significance",
      [](const std::vector<double>& a, const std::vector<double>& b, int64_t resamples,
         uint64_t seed) {
        const SigReport r = paired_significance(a, b, resamples, seed);
        py::dict d;
        d["p_value"] = r.p_value;
        d["resamples"] = r.resamples;
        d["mean_diff"] = r.mean_diff;
        return d;
      },
      py::arg("scores_a"), py::arg("scores_b"), py::arg("resamples") = 1000,
      py::arg("seed") = 0);

  m.def(
      "lr_at",
      [](double peak_lr, int64_t warmup_steps, int64_t step, const std::string& kind) {
        LrSchedule s{peak_lr, warmup_steps,
                     kind == "constant" ? LrScheduleKind::kConstant
                                        : LrScheduleKind::kInverseSqrtWarmup};
        return lr_at(s, step);
      },
      py::arg("peak_lr"), py::arg("warmup_steps"), py::arg("step"),
      py::arg("kind") = "inverse_sqrt");

  m.def("reference_grad_check", &reference_joint_grad_check, py::arg("precision_bits") = 64,
        py::arg("eps") = 0.0, py::arg("max_entries_per_tensor") = 64);

  m.def("teacher_forced_accuracy",
        [](const FloatModel& model, const Corpus& corpus, const std::vector<int64_t>& ids,
           const std::string& path) {
          return teacher_forced_accuracy(model, corpus, ids,
                                         path == "vis2sum" ? TaskPath::kVis2Sum
                                                           : TaskPath::kMas);
        });
}
