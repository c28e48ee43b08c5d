// Loss constructors for the three training tasks, the joint objectives, and
// the region-masking procedures that feed the masked-image task.

#ifndef SOVMAS_OBJECTIVES_HPP
#define SOVMAS_OBJECTIVES_HPP

#include <random>
#include <span>
#include <utility>
#include <vector>

#include "sovmas/dataio.hpp"
#include "sovmas/tensor.hpp"

namespace sovmas {

struct LossWeights {
  double alpha = 1.0;  // vision-to-summary weight
  double beta = 1.0;   // masked-image weight
};

struct MaskedBatch {
  Batch batch;
  MaskPlan plan;
};

// Zeroes the stored feature vectors of one uniformly chosen present image
// per example; boxes, class distributions, and the id embeddings are left
// intact so the masked slots keep their position identity.
inline MaskedBatch mask_one_image(const Batch& input, std::mt19937_64& rng) {
  MaskedBatch out{input, {}};
  out.plan.mode = MaskPlan::Mode::kOneImage;
  const int64_t m = input.regions_per_image;
  for (int64_t b = 0; b < input.batch_size; ++b) {
    const int32_t present = input.n_images_present[static_cast<size_t>(b)];
    if (present < 1)
      reject("mask_one_image: example " + std::to_string(b) + " has zero images");
    std::uniform_int_distribution<int32_t> pick(0, present - 1);
    const int32_t img = pick(rng);
    std::vector<int32_t> slots;
    slots.reserve(static_cast<size_t>(m));
    auto feats = out.batch.features_row_mut(b);
    for (int64_t j = 0; j < m; ++j) {
      const int64_t slot = static_cast<int64_t>(img) * m + j;
      slots.push_back(static_cast<int32_t>(slot));
      std::fill_n(feats.data() + slot * input.d_v, input.d_v, 0.0f);
    }
    out.plan.masked_image.push_back(img);
    out.plan.masked_slots.push_back(std::move(slots));
  }
  return out;
}

// Independent Bernoulli(p) masking over present regions only.
inline MaskedBatch mask_regions(const Batch& input, double p, std::mt19937_64& rng) {
  if (p <= 0.0 || p >= 1.0) reject("mask_regions: p must be in (0, 1)");
  MaskedBatch out{input, {}};
  out.plan.mode = MaskPlan::Mode::kRandomRegions;
  std::bernoulli_distribution pick(p);
  for (int64_t b = 0; b < input.batch_size; ++b) {
    std::vector<int32_t> slots;
    auto feats = out.batch.features_row_mut(b);
    const auto mask = input.region_mask_row(b);
    for (int64_t s = 0; s < input.region_slots; ++s) {
      if (mask[static_cast<size_t>(s)] == 0) continue;
      if (!pick(rng)) continue;
      slots.push_back(static_cast<int32_t>(s));
      std::fill_n(feats.data() + s * input.d_v, input.d_v, 0.0f);
    }
    out.plan.masked_image.push_back(-1);
    out.plan.masked_slots.push_back(std::move(slots));
  }
  return out;
}

// Class-distribution targets for the masked slots, in plan order.
template <typename T>
Tensor<T> gather_mask_targets(const Batch& batch, const MaskPlan& plan) {
  const int64_t c = batch.detector_classes;
  std::vector<T> data;
  data.reserve(static_cast<size_t>(plan.total_masked() * c));
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    const auto q = batch.class_dists_row(b);
    for (int32_t slot : plan.masked_slots[static_cast<size_t>(b)])
      for (int64_t j = 0; j < c; ++j)
        data.push_back(static_cast<T>(q[static_cast<size_t>(slot * c + j)]));
  }
  return Tensor<T>::from({plan.total_masked(), c}, std::move(data));
}

// Mean label-smoothed NLL over non-pad summary tokens.
template <typename T>
Tensor<T> loss_mas(const Tensor<T>& log_probs, std::span<const int32_t> targets,
                   double label_smoothing) {
  return cross_entropy(log_probs, targets, label_smoothing, kPadId);
}

// Same loss form as the main task, applied to the vision-only path.
template <typename T>
Tensor<T> loss_vis2sum(const Tensor<T>& log_probs, std::span<const int32_t> targets,
                       double label_smoothing) {
  return cross_entropy(log_probs, targets, label_smoothing, kPadId);
}

// Sum of per-masked-region KL divergences, averaged over the batch.
template <typename T>
Tensor<T> loss_mim(const Tensor<T>& predictions, const Tensor<T>& target_dists,
                   const MaskPlan& plan) {
  if (predictions.dim(0) != plan.total_masked() ||
      target_dists.dim(0) != plan.total_masked())
    reject("loss_mim: prediction rows do not match the mask plan");
  const int64_t batch_size = static_cast<int64_t>(plan.masked_slots.size());
  if (batch_size == 0) reject("loss_mim: empty plan");
  return scale(kl_divergence(target_dists, predictions),
               static_cast<T>(1.0 / static_cast<double>(batch_size)));
}

// J = L_MAS + alpha * L_Vis2Sum + beta * L_MIM. Zero-weight terms are left
// out of the graph entirely; they contribute neither value nor gradient.
template <typename T>
Tensor<T> joint_mono(const Tensor<T>& l_mas, const Tensor<T>& l_v2s,
                     const Tensor<T>& l_mim, const LossWeights& w) {
  if (w.alpha < 0 || w.beta < 0) reject("joint_mono: weights must be non-negative");
  for (const Tensor<T>* l : {&l_mas, &l_v2s, &l_mim}) {
    if (!l->defined()) continue;
    if (!std::isfinite(static_cast<double>(l->value())))
      reject("joint_mono: non-finite loss term");
  }
  Tensor<T> j = l_mas;
  if (w.alpha != 0) {
    if (!l_v2s.defined()) reject("joint_mono: alpha > 0 but no vision-to-summary loss");
    j = add(j, scale(l_v2s, static_cast<T>(w.alpha)));
  }
  if (w.beta != 0) {
    if (!l_mim.defined()) reject("joint_mono: beta > 0 but no masked-image loss");
    j = add(j, scale(l_mim, static_cast<T>(w.beta)));
  }
  return j;
}

// Literal sum over per-language objectives, for reporting. The training loop
// realizes this per step by sampling a single language per batch.
inline double joint_multi(std::span<const double> per_language) {
  if (per_language.empty()) reject("joint_multi: need at least one language");
  double total = 0;
  for (double j : per_language) total += j;
  return total;
}

}  // namespace sovmas

#endif  // SOVMAS_OBJECTIVES_HPP
