#include "sovmas/reference_check.hpp"

#include "sovmas/model.hpp"
#include "sovmas/objectives.hpp"
#include "sovmas/optim.hpp"
#include "sovmas/synth.hpp"

namespace sovmas {

namespace {

ModelConfig reference_config() {
  ModelConfig cfg;
  cfg.vocab_size = 32;
  cfg.d = 8;
  cfg.d_c = 8;
  cfg.d_v = 16;
  cfg.text_layers = 1;
  cfg.vision_layers = 1;
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.max_text_len = 12;
  cfg.max_summary_len = 6;
  cfg.n_images = 2;
  cfg.regions_per_image = 2;
  cfg.detector_classes = 4;
  cfg.dropout = 0.0;
  cfg.label_smoothing = 0.1;
  return cfg;
}

template <typename T>
double run_reference_check(double eps, int max_entries) {
  const ModelConfig cfg = reference_config();
  SynthSpec spec;
  spec.languages = 1;
  spec.sizes = {4};
  spec.vocab_size = cfg.vocab_size;
  spec.detector_classes = cfg.detector_classes;
  spec.n_images = cfg.n_images;
  spec.regions_per_image = cfg.regions_per_image;
  spec.d_v = cfg.d_v;
  spec.informativeness = 0.8;
  const Corpus corpus = synth_corpus(5, spec);
  const std::vector<int64_t> idx{0, 1};
  Batch batch = make_batch(corpus, idx, cfg.pad_spec());
  std::mt19937_64 mask_rng(11);
  const MaskedBatch masked = mask_one_image(batch, mask_rng);

  SovMasModel<T> model(cfg, 21);
  std::vector<Tensor<T>> params = model.parameters();
  const LossWeights weights{1.0, 1.0};
  const ForwardCtx ctx = ForwardCtx::eval();

  auto build_loss = [&]() {
    Tensor<T> l_mas = loss_mas(model.forward_mas(batch, ctx),
                               std::span<const int32_t>(batch.summary_ids),
                               cfg.label_smoothing);
    Tensor<T> l_v2s = loss_vis2sum(model.forward_vis2sum(batch, ctx),
                                   std::span<const int32_t>(batch.summary_ids),
                                   cfg.label_smoothing);
    MimForward<T> mim = model.forward_mim(masked.batch, masked.plan, ctx);
    Tensor<T> l_mim = loss_mim(mim.predictions,
                               gather_mask_targets<T>(masked.batch, masked.plan),
                               masked.plan);
    return joint_mono(l_mas, l_v2s, l_mim, weights);
  };
  return grad_check<T>(build_loss, params, eps, max_entries, 97);
}

}  // namespace

double reference_grad_tolerance(int precision_bits) {
  return precision_bits == 64 ? 1e-5 : 1e-3;
}

double reference_joint_grad_check(int precision_bits, double eps, int max_entries) {
  if (precision_bits == 64) {
    if (eps <= 0) eps = 1e-4;
    return run_reference_check<double>(eps, max_entries);
  }
  if (precision_bits == 32) {
    if (eps <= 0) eps = 1e-3;
    return run_reference_check<float>(eps, max_entries);
  }
  reject("gradcheck: precision must be 32 or 64");
}

}  // namespace sovmas
