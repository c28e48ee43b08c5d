// The four-part vision-guided summarization network: textual encoder,
// visual encoder over four-way region embeddings, text-vision fusion with a
// forget gate, and a decoder with cross-attention — plus the two
// summary-oriented task heads and beam-search inference.
//
// All sublayers are pre-normalized (RMS) residual blocks; a zero-layer stack
// is therefore the identity map. Attention masking is additive with a finite
// sentinel large enough to underflow to exact zero probability, so padded
// positions cannot influence live ones.

#ifndef SOVMAS_MODEL_HPP
#define SOVMAS_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sovmas/dataio.hpp"
#include "sovmas/tensor.hpp"

namespace sovmas {

struct ModelConfig {
  int64_t vocab_size = 512;
  int64_t d = 768;    // text / model width
  int64_t d_c = 256;  // fusion width
  int64_t d_v = 2048; // visual width
  int64_t text_layers = 12;   // encoder and decoder depth
  int64_t vision_layers = 4;
  int64_t heads = 8;
  int64_t ffn_dim = 2048;
  int64_t max_text_len = 512;
  int64_t max_summary_len = 84;
  int64_t n_images = 5;
  int64_t regions_per_image = 36;
  int64_t detector_classes = 16;
  double dropout = 0.1;
  double label_smoothing = 0.1;

  int64_t region_slots() const { return n_images * regions_per_image; }

  PadSpec pad_spec() const {
    return {max_text_len, max_summary_len, n_images, regions_per_image};
  }

  void validate() const {
    for (int64_t e : {vocab_size, d, d_c, d_v, heads, ffn_dim, max_text_len,
                      max_summary_len, n_images, regions_per_image, detector_classes})
      if (e <= 0) reject("model config: all extents must be positive");
    if (text_layers < 0 || vision_layers < 0)
      reject("model config: layer counts must be non-negative");
    if (d % heads || d_c % heads || d_v % heads)
      reject("model config: d, d_c and d_v must be divisible by heads");
    if (dropout < 0 || dropout >= 1) reject("model config: dropout must be in [0, 1)");
    if (label_smoothing < 0 || label_smoothing >= 1)
      reject("model config: label_smoothing must be in [0, 1)");
    if (vocab_size <= kStartId) reject("model config: vocab too small for control tokens");
  }
};

struct ForwardCtx {
  bool training = false;
  std::mt19937_64* rng = nullptr;

  static ForwardCtx eval() { return {}; }
  static ForwardCtx train(std::mt19937_64& rng) { return {true, &rng}; }
};

namespace detail {

template <typename T>
inline constexpr T kMaskSentinel = T(-1e9);

// Deterministic sinusoidal position table, rows [len x width].
template <typename T>
Tensor<T> sinusoid_table(int64_t len, int64_t width) {
  std::vector<T> data(static_cast<size_t>(len * width));
  for (int64_t p = 0; p < len; ++p) {
    for (int64_t i = 0; i < width; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(width);
      const double angle = static_cast<double>(p) / std::pow(10000.0, exponent);
      data[static_cast<size_t>(p * width + i)] =
          static_cast<T>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>::from({len, width}, std::move(data));
}

}  // namespace detail

template <typename T>
struct AttentionWeights {
  Tensor<T> wq, wk, wv, wo;
};

template <typename T>
struct FfnWeights {
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct EncoderLayerWeights {
  Tensor<T> attn_norm;
  AttentionWeights<T> attn;
  Tensor<T> ffn_norm;
  FfnWeights<T> ffn;
};

template <typename T>
struct DecoderLayerWeights {
  Tensor<T> self_norm;
  AttentionWeights<T> self_attn;
  Tensor<T> cross_norm;
  AttentionWeights<T> cross_attn;
  Tensor<T> ffn_norm;
  FfnWeights<T> ffn;
};

// Output of the masked-image forward pass: one predicted class distribution
// per masked region slot, batch-major, plus the per-example row counts.
template <typename T>
struct MimForward {
  Tensor<T> predictions;               // [total_masked x C]
  std::vector<int64_t> rows_per_example;
};

template <typename T>
class SovMasModel {
 public:
  SovMasModel(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int64_t pe_len = std::max(cfg_.max_text_len, cfg_.max_summary_len + 1);
    pe_text_ = detail::sinusoid_table<T>(pe_len, cfg_.d);
    pe_vis_ = detail::sinusoid_table<T>(cfg_.max_summary_len + 1, cfg_.d_v);

    token_table_ = normal_init(rng, {cfg_.vocab_size, cfg_.d}, 0.02);
    box_proj_w_ = glorot_init(rng, {4, cfg_.d_v});
    box_proj_b_ = Tensor<T>::zeros({cfg_.d_v}, true);
    image_table_ = normal_init(rng, {cfg_.n_images, cfg_.d_v}, 0.02);
    region_table_ = normal_init(rng, {cfg_.regions_per_image, cfg_.d_v}, 0.02);

    for (int64_t l = 0; l < cfg_.text_layers; ++l)
      text_layers_.push_back(make_encoder_layer(rng, cfg_.d));
    for (int64_t h = 0; h < cfg_.vision_layers; ++h)
      vision_layers_.push_back(make_encoder_layer(rng, cfg_.d_v));

    fusion_attn_.wq = glorot_init(rng, {cfg_.d, cfg_.d_c});
    fusion_attn_.wk = glorot_init(rng, {cfg_.d_v, cfg_.d_c});
    fusion_attn_.wv = glorot_init(rng, {cfg_.d_v, cfg_.d_c});
    fusion_attn_.wo = glorot_init(rng, {cfg_.d_c, cfg_.d_c});
    gate_w_ = glorot_init(rng, {cfg_.d + cfg_.d_c, cfg_.d_c});
    gate_b_ = Tensor<T>::zeros({cfg_.d_c}, true);
    fusion_out_w_ = glorot_init(rng, {cfg_.d + cfg_.d_c, cfg_.d});
    fusion_out_b_ = Tensor<T>::zeros({cfg_.d}, true);

    for (int64_t l = 0; l < cfg_.text_layers; ++l)
      decoder_layers_.push_back(make_decoder_layer(rng, cfg_.d));
    out_proj_w_ = glorot_init(rng, {cfg_.d, cfg_.vocab_size});
    out_proj_b_ = Tensor<T>::zeros({cfg_.vocab_size}, true);

    v2s_bridge_w_ = glorot_init(rng, {cfg_.d_v, cfg_.d});
    mim_text_proj_w_ = glorot_init(rng, {cfg_.d, cfg_.d_v});
    mim_text_proj_b_ = Tensor<T>::zeros({cfg_.d_v}, true);
    const int64_t hidden = std::max<int64_t>(1, cfg_.d_v / 2);
    mim_mlp_.w1 = glorot_init(rng, {cfg_.d_v, hidden});
    mim_mlp_.b1 = Tensor<T>::zeros({hidden}, true);
    mim_mlp_.w2 = glorot_init(rng, {hidden, cfg_.detector_classes});
    mim_mlp_.b2 = Tensor<T>::zeros({cfg_.detector_classes}, true);
  }

  const ModelConfig& config() const { return cfg_; }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.emplace_back("text_embed.table", token_table_);
    out.emplace_back("vis_embed.box_proj.w", box_proj_w_);
    out.emplace_back("vis_embed.box_proj.b", box_proj_b_);
    out.emplace_back("vis_embed.image_table", image_table_);
    out.emplace_back("vis_embed.region_table", region_table_);
    append_encoder("text_enc", text_layers_, out);
    append_encoder("vis_enc", vision_layers_, out);
    out.emplace_back("fusion.attn.wq", fusion_attn_.wq);
    out.emplace_back("fusion.attn.wk", fusion_attn_.wk);
    out.emplace_back("fusion.attn.wv", fusion_attn_.wv);
    out.emplace_back("fusion.attn.wo", fusion_attn_.wo);
    out.emplace_back("fusion.gate.w", gate_w_);
    out.emplace_back("fusion.gate.b", gate_b_);
    out.emplace_back("fusion.out.w", fusion_out_w_);
    out.emplace_back("fusion.out.b", fusion_out_b_);
    for (size_t l = 0; l < decoder_layers_.size(); ++l) {
      const std::string base = "decoder.layer." + std::to_string(l) + ".";
      const auto& lay = decoder_layers_[l];
      out.emplace_back(base + "self_norm.gain", lay.self_norm);
      append_attention(base + "self_attn.", lay.self_attn, out);
      out.emplace_back(base + "cross_norm.gain", lay.cross_norm);
      append_attention(base + "cross_attn.", lay.cross_attn, out);
      out.emplace_back(base + "ffn_norm.gain", lay.ffn_norm);
      append_ffn(base + "ffn.", lay.ffn, out);
    }
    out.emplace_back("decoder.out_proj.w", out_proj_w_);
    out.emplace_back("decoder.out_proj.b", out_proj_b_);
    out.emplace_back("aux.v2s_bridge.w", v2s_bridge_w_);
    out.emplace_back("aux.mim_text_proj.w", mim_text_proj_w_);
    out.emplace_back("aux.mim_text_proj.b", mim_text_proj_b_);
    out.emplace_back("aux.mim_mlp.w1", mim_mlp_.w1);
    out.emplace_back("aux.mim_mlp.b1", mim_mlp_.b1);
    out.emplace_back("aux.mim_mlp.w2", mim_mlp_.w2);
    out.emplace_back("aux.mim_mlp.b2", mim_mlp_.b2);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  // -------------------------------------------------------------------------
  // Stages

  // Token embedding plus deterministic positional rows.
  Tensor<T> embed_text(std::span<const int32_t> ids) const {
    if (static_cast<int64_t>(ids.size()) > cfg_.max_text_len)
      reject("embed_text: sequence of " + std::to_string(ids.size()) +
             " exceeds max_text_len " + std::to_string(cfg_.max_text_len));
    Tensor<T> emb = embedding(token_table_, ids);
    return add(emb, pe_slice(pe_text_, static_cast<int64_t>(ids.size()), cfg_.d));
  }

  Tensor<T> encode_text(const Tensor<T>& z0, std::span<const uint8_t> mask,
                        const ForwardCtx& ctx) const {
    return run_encoder(z0, mask, text_layers_, ctx);
  }

  // Four-way region embedding: feature + box projection + image id + region
  // id, flattened image-major over all n*m slots.
  Tensor<T> embed_vision(std::span<const float> features,
                         std::span<const float> boxes) const {
    const int64_t slots = cfg_.region_slots();
    if (static_cast<int64_t>(features.size()) != slots * cfg_.d_v)
      reject("embed_vision: feature buffer does not match n*m*d_v");
    if (static_cast<int64_t>(boxes.size()) != slots * 4)
      reject("embed_vision: box buffer does not match n*m*4");
    for (float b : boxes)
      if (!(b >= 0.0f && b <= 1.0f))
        reject("embed_vision: box coordinate outside [0, 1]");
    std::vector<T> fdata(features.begin(), features.end());
    std::vector<T> bdata(boxes.begin(), boxes.end());
    Tensor<T> v = Tensor<T>::from({slots, cfg_.d_v}, std::move(fdata));
    Tensor<T> bx = Tensor<T>::from({slots, 4}, std::move(bdata));
    std::vector<int32_t> image_ids(static_cast<size_t>(slots));
    std::vector<int32_t> region_ids(static_cast<size_t>(slots));
    for (int64_t s = 0; s < slots; ++s) {
      image_ids[static_cast<size_t>(s)] = static_cast<int32_t>(s / cfg_.regions_per_image);
      region_ids[static_cast<size_t>(s)] = static_cast<int32_t>(s % cfg_.regions_per_image);
    }
    Tensor<T> box_e = add_row(matmul(bx, box_proj_w_), box_proj_b_);
    Tensor<T> img_e = embedding(image_table_, image_ids);
    Tensor<T> reg_e = embedding(region_table_, region_ids);
    return add(add(v, box_e), add(img_e, reg_e));
  }

  Tensor<T> encode_vision(const Tensor<T>& o, std::span<const uint8_t> mask,
                          const ForwardCtx& ctx) const {
    return run_encoder(o, mask, vision_layers_, ctx);
  }

  // Vision-guided fusion: cross-modal attention from text queries into the
  // visual stream, a sigmoid forget gate over the attended features, then a
  // projection of [text ; gated vision] back to width d.
  Tensor<T> fuse(const Tensor<T>& z_text, const Tensor<T>& z_vision,
                 std::span<const uint8_t> region_mask, const ForwardCtx& ctx) const {
    (void)ctx;
    Tensor<T> m = multi_head_attention(z_text, z_vision, fusion_attn_, region_mask,
                                       /*causal=*/false);
    Tensor<T> gate_in = concat_cols(z_text, m);
    Tensor<T> gate = sigmoid(add_row(matmul(gate_in, gate_w_), gate_b_));
    Tensor<T> fused_in = concat_cols(z_text, mul(gate, m));
    return add_row(matmul(fused_in, fusion_out_w_), fusion_out_b_);
  }

  // Causal self-attention over the prefix, cross-attention over `memory`,
  // then the vocabulary projection. Returns logits, one row per prefix
  // position.
  Tensor<T> decode(std::span<const int32_t> prefix, const Tensor<T>& memory,
                   std::span<const uint8_t> memory_mask, const ForwardCtx& ctx) const {
    if (static_cast<int64_t>(prefix.size()) > cfg_.max_summary_len + 1)
      reject("decode: prefix longer than max_summary_len");
    Tensor<T> x = add(embedding(token_table_, prefix),
                      pe_slice(pe_text_, static_cast<int64_t>(prefix.size()), cfg_.d));
    for (const auto& layer : decoder_layers_) {
      Tensor<T> h = rms_norm(x, layer.self_norm);
      h = multi_head_attention(h, h, layer.self_attn, {}, /*causal=*/true);
      x = add(x, apply_dropout(h, ctx));
      h = rms_norm(x, layer.cross_norm);
      h = multi_head_attention(h, memory, layer.cross_attn, memory_mask,
                               /*causal=*/false);
      x = add(x, apply_dropout(h, ctx));
      h = rms_norm(x, layer.ffn_norm);
      h = run_ffn(h, layer.ffn);
      x = add(x, apply_dropout(h, ctx));
    }
    return add_row(matmul(x, out_proj_w_), out_proj_b_);
  }

  // -------------------------------------------------------------------------
  // Task paths (per-token log-probabilities, [B x S x V])

  Tensor<T> forward_mas(const Batch& batch, const ForwardCtx& ctx) const {
    check_batch(batch);
    std::vector<Tensor<T>> rows;
    rows.reserve(static_cast<size_t>(batch.batch_size));
    for (int64_t b = 0; b < batch.batch_size; ++b) {
      Tensor<T> memory = fused_memory(batch, b, ctx);
      Tensor<T> logits = decode(decoder_input(batch.summary(b)), memory,
                                batch.article_mask_row(b), ctx);
      rows.push_back(log_softmax(logits));
    }
    return reshape(concat_rows(rows),
                   {batch.batch_size, batch.summary_len, cfg_.vocab_size});
  }

  // The article is not an input here: the decoder cross-attends over the
  // bridged visual features alone.
  Tensor<T> forward_vis2sum(const Batch& batch, const ForwardCtx& ctx) const {
    check_batch(batch);
    std::vector<Tensor<T>> rows;
    rows.reserve(static_cast<size_t>(batch.batch_size));
    for (int64_t b = 0; b < batch.batch_size; ++b) {
      Tensor<T> memory = vis2sum_memory(batch, b, ctx);
      Tensor<T> logits = decode(decoder_input(batch.summary(b)), memory,
                                batch.region_mask_row(b), ctx);
      rows.push_back(log_softmax(logits));
    }
    return reshape(concat_rows(rows),
                   {batch.batch_size, batch.summary_len, cfg_.vocab_size});
  }

  // Region classification at the masked slots of a pre-masked batch: the
  // summary tokens are embedded with the text table, projected into the
  // visual width, appended after the region sequence, and the combined
  // sequence runs through the visual encoder.
  MimForward<T> forward_mim(const Batch& batch, const MaskPlan& plan,
                            const ForwardCtx& ctx) const {
    check_batch(batch);
    if (static_cast<int64_t>(plan.masked_slots.size()) != batch.batch_size)
      reject("forward_mim: plan does not cover the batch");
    if (plan.total_masked() == 0) reject("forward_mim: no masked region present");
    std::vector<Tensor<T>> predictions;
    std::vector<int64_t> rows_per_example;
    for (int64_t b = 0; b < batch.batch_size; ++b) {
      const auto& slots = plan.masked_slots[static_cast<size_t>(b)];
      rows_per_example.push_back(static_cast<int64_t>(slots.size()));
      if (slots.empty()) continue;
      Tensor<T> o = embed_vision(batch.features_row(b), batch.boxes_row(b));
      Tensor<T> y = embedding(token_table_, batch.summary(b));
      y = add_row(matmul(y, mim_text_proj_w_), mim_text_proj_b_);
      y = add(y, pe_slice(pe_vis_, batch.summary_len, cfg_.d_v));
      Tensor<T> seq = concat_rows(std::vector<Tensor<T>>{o, y});
      std::vector<uint8_t> mask;
      mask.reserve(static_cast<size_t>(batch.region_slots + batch.summary_len));
      const auto rmask = batch.region_mask_row(b);
      const auto smask = batch.summary_mask_row(b);
      mask.insert(mask.end(), rmask.begin(), rmask.end());
      mask.insert(mask.end(), smask.begin(), smask.end());
      Tensor<T> enc = encode_vision(seq, mask, ctx);
      std::vector<Tensor<T>> picked;
      picked.reserve(slots.size());
      for (int32_t s : slots) picked.push_back(slice_rows(enc, s, 1));
      Tensor<T> h = concat_rows(picked);
      h = relu(add_row(matmul(h, mim_mlp_.w1), mim_mlp_.b1));
      h = add_row(matmul(h, mim_mlp_.w2), mim_mlp_.b2);
      predictions.push_back(softmax(h, -1));
    }
    return {concat_rows(predictions), std::move(rows_per_example)};
  }

  // -------------------------------------------------------------------------
  // Inference

  std::vector<int32_t> greedy_decode(const Batch& batch, int64_t example,
                                     int64_t max_len = -1) const {
    NoGradGuard no_grad;
    const ForwardCtx ctx = ForwardCtx::eval();
    Tensor<T> memory = fused_memory(batch, example, ctx);
    const auto memory_mask = batch.article_mask_row(example);
    if (max_len < 0) max_len = cfg_.max_summary_len;
    std::vector<int32_t> prefix{kStartId};
    for (int64_t step = 0; step < max_len; ++step) {
      const std::vector<double> logp = next_token_log_probs(prefix, memory, memory_mask);
      int32_t best = 0;
      for (int32_t v = 1; v < static_cast<int32_t>(logp.size()); ++v)
        if (logp[static_cast<size_t>(v)] > logp[static_cast<size_t>(best)]) best = v;
      prefix.push_back(best);
      if (best == kEndId) break;
    }
    return strip_control(prefix);
  }

  // Standard beam search; hypotheses are expanded by cumulative log
  // probability and compared, once finished, by logP / lp(|Y|) with
  // lp(|Y|) = ((5 + |Y|) / 6)^gamma.
  std::vector<int32_t> beam_search(const Batch& batch, int64_t example, int64_t beam,
                                   double length_penalty, int64_t max_len = -1) const {
    if (beam < 1) reject("beam_search: beam must be >= 1");
    NoGradGuard no_grad;
    const ForwardCtx ctx = ForwardCtx::eval();
    Tensor<T> memory = fused_memory(batch, example, ctx);
    const auto memory_mask = batch.article_mask_row(example);
    if (max_len < 0) max_len = cfg_.max_summary_len;

    struct Hypothesis {
      std::vector<int32_t> tokens;  // includes the leading start marker
      double log_prob = 0.0;
    };
    const auto penalized = [length_penalty](const Hypothesis& h) {
      const double len = static_cast<double>(h.tokens.size() - 1);
      return h.log_prob / std::pow((5.0 + len) / 6.0, length_penalty);
    };

    std::vector<Hypothesis> live{{{kStartId}, 0.0}};
    std::vector<Hypothesis> done;
    for (int64_t step = 0; step < max_len && !live.empty(); ++step) {
      struct Candidate {
        double score;
        int32_t token;
        size_t from;
      };
      std::vector<Candidate> candidates;
      candidates.reserve(live.size() * static_cast<size_t>(cfg_.vocab_size));
      for (size_t h = 0; h < live.size(); ++h) {
        const std::vector<double> logp =
            next_token_log_probs(live[h].tokens, memory, memory_mask);
        for (int32_t v = 0; v < static_cast<int32_t>(logp.size()); ++v)
          candidates.push_back({live[h].log_prob + logp[static_cast<size_t>(v)], v, h});
      }
      std::partial_sort(candidates.begin(),
                        candidates.begin() +
                            std::min<size_t>(candidates.size(), static_cast<size_t>(beam)),
                        candidates.end(), [](const Candidate& a, const Candidate& b) {
                          if (a.score != b.score) return a.score > b.score;
                          if (a.token != b.token) return a.token < b.token;
                          return a.from < b.from;
                        });
      std::vector<Hypothesis> next;
      for (size_t c = 0; c < candidates.size() && c < static_cast<size_t>(beam); ++c) {
        Hypothesis h = live[candidates[c].from];
        h.tokens.push_back(candidates[c].token);
        h.log_prob = candidates[c].score;
        if (candidates[c].token == kEndId)
          done.push_back(std::move(h));
        else
          next.push_back(std::move(h));
      }
      live = std::move(next);
    }
    for (auto& h : live) done.push_back(std::move(h));
    const Hypothesis* best = nullptr;
    double best_score = 0;
    for (const auto& h : done) {
      const double s = penalized(h);
      if (best == nullptr || s > best_score) {
        best = &h;
        best_score = s;
      }
    }
    return strip_control(best->tokens);
  }

  // Length-penalized score of an arbitrary candidate under this model, on
  // the same scale beam_search uses for ranking.
  double candidate_score(const Batch& batch, int64_t example,
                         std::span<const int32_t> tokens, double length_penalty) const {
    NoGradGuard no_grad;
    Tensor<T> memory = fused_memory(batch, example, ForwardCtx::eval());
    const auto memory_mask = batch.article_mask_row(example);
    std::vector<int32_t> prefix{kStartId};
    double log_prob = 0;
    int64_t emitted = 0;
    for (size_t i = 0; i <= tokens.size(); ++i) {
      const int32_t next = i < tokens.size() ? tokens[i] : kEndId;
      const std::vector<double> logp = next_token_log_probs(prefix, memory, memory_mask);
      log_prob += logp[static_cast<size_t>(next)];
      prefix.push_back(next);
      ++emitted;
      if (static_cast<int64_t>(prefix.size()) > cfg_.max_summary_len) break;
    }
    return log_prob / std::pow((5.0 + static_cast<double>(emitted)) / 6.0, length_penalty);
  }

  // Exposed for tests: memory used by the summarization path.
  Tensor<T> fused_memory(const Batch& batch, int64_t b, const ForwardCtx& ctx) const {
    Tensor<T> z_t = encode_text(embed_text(batch.article(b)), batch.article_mask_row(b), ctx);
    Tensor<T> z_v = encode_vision(embed_vision(batch.features_row(b), batch.boxes_row(b)),
                                  batch.region_mask_row(b), ctx);
    return fuse(z_t, z_v, batch.region_mask_row(b), ctx);
  }

  Tensor<T> vis2sum_memory(const Batch& batch, int64_t b, const ForwardCtx& ctx) const {
    Tensor<T> z_v = encode_vision(embed_vision(batch.features_row(b), batch.boxes_row(b)),
                                  batch.region_mask_row(b), ctx);
    return matmul(z_v, v2s_bridge_w_);
  }

  static std::vector<int32_t> decoder_input(std::span<const int32_t> summary_row) {
    std::vector<int32_t> in(summary_row.size());
    in[0] = kStartId;
    for (size_t i = 1; i < summary_row.size(); ++i) in[i] = summary_row[i - 1];
    return in;
  }

 private:
  Tensor<T> glorot_init(std::mt19937_64& rng, Shape shape) {
    const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<T> data(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : data) v = static_cast<T>(dist(rng));
    return Tensor<T>::from(std::move(shape), std::move(data), true);
  }

  Tensor<T> normal_init(std::mt19937_64& rng, Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> data(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : data) v = static_cast<T>(dist(rng));
    return Tensor<T>::from(std::move(shape), std::move(data), true);
  }

  EncoderLayerWeights<T> make_encoder_layer(std::mt19937_64& rng, int64_t width) {
    EncoderLayerWeights<T> l;
    l.attn_norm = Tensor<T>::filled({width}, T(1), true);
    l.attn = make_attention(rng, width, width);
    l.ffn_norm = Tensor<T>::filled({width}, T(1), true);
    l.ffn = make_ffn(rng, width);
    return l;
  }

  DecoderLayerWeights<T> make_decoder_layer(std::mt19937_64& rng, int64_t width) {
    DecoderLayerWeights<T> l;
    l.self_norm = Tensor<T>::filled({width}, T(1), true);
    l.self_attn = make_attention(rng, width, width);
    l.cross_norm = Tensor<T>::filled({width}, T(1), true);
    l.cross_attn = make_attention(rng, width, width);
    l.ffn_norm = Tensor<T>::filled({width}, T(1), true);
    l.ffn = make_ffn(rng, width);
    return l;
  }

  AttentionWeights<T> make_attention(std::mt19937_64& rng, int64_t q_width,
                                     int64_t kv_width) {
    AttentionWeights<T> w;
    w.wq = glorot_init(rng, {q_width, q_width});
    w.wk = glorot_init(rng, {kv_width, q_width});
    w.wv = glorot_init(rng, {kv_width, q_width});
    w.wo = glorot_init(rng, {q_width, q_width});
    return w;
  }

  FfnWeights<T> make_ffn(std::mt19937_64& rng, int64_t width) {
    FfnWeights<T> f;
    f.w1 = glorot_init(rng, {width, cfg_.ffn_dim});
    f.b1 = Tensor<T>::zeros({cfg_.ffn_dim}, true);
    f.w2 = glorot_init(rng, {cfg_.ffn_dim, width});
    f.b2 = Tensor<T>::zeros({width}, true);
    return f;
  }

  static void append_attention(const std::string& base, const AttentionWeights<T>& w,
                               std::vector<std::pair<std::string, Tensor<T>>>& out) {
    out.emplace_back(base + "wq", w.wq);
    out.emplace_back(base + "wk", w.wk);
    out.emplace_back(base + "wv", w.wv);
    out.emplace_back(base + "wo", w.wo);
  }

  static void append_ffn(const std::string& base, const FfnWeights<T>& f,
                         std::vector<std::pair<std::string, Tensor<T>>>& out) {
    out.emplace_back(base + "w1", f.w1);
    out.emplace_back(base + "b1", f.b1);
    out.emplace_back(base + "w2", f.w2);
    out.emplace_back(base + "b2", f.b2);
  }

  static void append_encoder(const std::string& module,
                             const std::vector<EncoderLayerWeights<T>>& layers,
                             std::vector<std::pair<std::string, Tensor<T>>>& out) {
    for (size_t l = 0; l < layers.size(); ++l) {
      const std::string base = module + ".layer." + std::to_string(l) + ".";
      out.emplace_back(base + "attn_norm.gain", layers[l].attn_norm);
      append_attention(base + "attn.", layers[l].attn, out);
      out.emplace_back(base + "ffn_norm.gain", layers[l].ffn_norm);
      append_ffn(base + "ffn.", layers[l].ffn, out);
    }
  }

  static Tensor<T> pe_slice(const Tensor<T>& table, int64_t rows, int64_t width) {
    std::vector<T> data(table.values().begin(),
                        table.values().begin() + rows * width);
    return Tensor<T>::from({rows, width}, std::move(data));
  }

  Tensor<T> apply_dropout(const Tensor<T>& x, const ForwardCtx& ctx) const {
    return dropout(x, cfg_.dropout, ctx.rng, ctx.training);
  }

  Tensor<T> run_ffn(const Tensor<T>& x, const FfnWeights<T>& f) const {
    Tensor<T> h = relu(add_row(matmul(x, f.w1), f.b1));
    return add_row(matmul(h, f.w2), f.b2);
  }

  Tensor<T> run_encoder(const Tensor<T>& x0, std::span<const uint8_t> mask,
                        const std::vector<EncoderLayerWeights<T>>& layers,
                        const ForwardCtx& ctx) const {
    if (static_cast<int64_t>(mask.size()) != x0.dim(0))
      reject("encode: mask length does not match sequence length");
    Tensor<T> x = x0;
    for (const auto& layer : layers) {
      Tensor<T> h = rms_norm(x, layer.attn_norm);
      h = multi_head_attention(h, h, layer.attn, mask, /*causal=*/false);
      x = add(x, apply_dropout(h, ctx));
      h = rms_norm(x, layer.ffn_norm);
      h = run_ffn(h, layer.ffn);
      x = add(x, apply_dropout(h, ctx));
    }
    return x;
  }

  // Additive attention mask: 0 where a query may look, a large negative
  // sentinel otherwise. exp() of the sentinel underflows to exact zero, so
  // masked keys contribute nothing.
  Tensor<T> attention_mask(int64_t q_len, int64_t k_len,
                           std::span<const uint8_t> key_mask, bool causal) const {
    std::vector<T> data(static_cast<size_t>(q_len * k_len), T(0));
    for (int64_t i = 0; i < q_len; ++i)
      for (int64_t j = 0; j < k_len; ++j) {
        const bool key_dead = !key_mask.empty() && key_mask[static_cast<size_t>(j)] == 0;
        if (key_dead || (causal && j > i))
          data[static_cast<size_t>(i * k_len + j)] = detail::kMaskSentinel<T>;
      }
    return Tensor<T>::from({q_len, k_len}, std::move(data));
  }

  Tensor<T> multi_head_attention(const Tensor<T>& q_src, const Tensor<T>& kv_src,
                                 const AttentionWeights<T>& w,
                                 std::span<const uint8_t> key_mask, bool causal) const {
    const int64_t inner = w.wq.dim(1);
    const int64_t head_dim = inner / cfg_.heads;
    Tensor<T> q = matmul(q_src, w.wq);
    Tensor<T> k = matmul(kv_src, w.wk);
    Tensor<T> v = matmul(kv_src, w.wv);
    Tensor<T> mask = attention_mask(q_src.dim(0), kv_src.dim(0), key_mask, causal);
    std::vector<Tensor<T>> heads;
    heads.reserve(static_cast<size_t>(cfg_.heads));
    for (int64_t h = 0; h < cfg_.heads; ++h) {
      Tensor<T> qh = slice_cols(q, h * head_dim, head_dim);
      Tensor<T> kh = slice_cols(k, h * head_dim, head_dim);
      Tensor<T> vh = slice_cols(v, h * head_dim, head_dim);
      Tensor<T> scores = scale(matmul(qh, kh, false, true),
                               static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim))));
      scores = add(scores, mask);
      heads.push_back(matmul(softmax(scores, -1), vh));
    }
    Tensor<T> ctx = heads[0];
    for (size_t h = 1; h < heads.size(); ++h) ctx = concat_cols(ctx, heads[h]);
    return matmul(ctx, w.wo);
  }

  std::vector<double> next_token_log_probs(std::span<const int32_t> prefix,
                                           const Tensor<T>& memory,
                                           std::span<const uint8_t> memory_mask) const {
    Tensor<T> logits = decode(prefix, memory, memory_mask, ForwardCtx::eval());
    const int64_t last = logits.dim(0) - 1;
    const int64_t v = logits.dim(1);
    std::vector<double> out(static_cast<size_t>(v));
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < v; ++j) {
      out[static_cast<size_t>(j)] = static_cast<double>(logits.at(last * v + j));
      mx = std::max(mx, out[static_cast<size_t>(j)]);
    }
    double denom = 0;
    for (double x : out) denom += std::exp(x - mx);
    const double lse = mx + std::log(denom);
    for (double& x : out) x -= lse;
    return out;
  }

  static std::vector<int32_t> strip_control(const std::vector<int32_t>& tokens) {
    std::vector<int32_t> out;
    for (size_t i = 1; i < tokens.size(); ++i) {
      if (tokens[i] == kEndId) break;
      out.push_back(tokens[i]);
    }
    return out;
  }

  void check_batch(const Batch& batch) const {
    if (batch.text_len > cfg_.max_text_len || batch.summary_len > cfg_.max_summary_len)
      reject("batch exceeds configured sequence lengths");
    if (batch.region_slots != cfg_.region_slots() || batch.d_v != cfg_.d_v)
      reject("batch region layout does not match model config");
    if (batch.detector_classes != cfg_.detector_classes)
      reject("batch detector class count does not match model config");
  }

  ModelConfig cfg_;
  Tensor<T> pe_text_, pe_vis_;
  Tensor<T> token_table_;
  Tensor<T> box_proj_w_, box_proj_b_, image_table_, region_table_;
  std::vector<EncoderLayerWeights<T>> text_layers_;
  std::vector<EncoderLayerWeights<T>> vision_layers_;
  AttentionWeights<T> fusion_attn_;
  Tensor<T> gate_w_, gate_b_, fusion_out_w_, fusion_out_b_;
  std::vector<DecoderLayerWeights<T>> decoder_layers_;
  Tensor<T> out_proj_w_, out_proj_b_;
  Tensor<T> v2s_bridge_w_;
  Tensor<T> mim_text_proj_w_, mim_text_proj_b_;
  FfnWeights<T> mim_mlp_;
};

}  // namespace sovmas

#endif  // SOVMAS_MODEL_HPP
