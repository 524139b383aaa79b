#pragma once

// Stage 1: span-level masked auto-encoding.
//
// The encoder reconstructs masked tokens of a span from the span's own
// unmasked tokens (self-supervised). A one-block decoder reconstructs a more
// heavily masked copy of the following span, seeing only that span's unmasked
// tokens plus the encoder's [CLS] vector of the preceding span as a prefix
// (context-supervised). Only the encoder outlives this stage.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "pfr/encoder.hpp"
#include "pfr/optim.hpp"
#include "pfr/text.hpp"

namespace pfr {

struct PretrainConfig {
  double lr = 1e-4;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  std::size_t batch_size = 54;
  std::size_t steps = 200;
  double encoder_mask_ratio = 0.30;
  double decoder_mask_ratio = 0.45;
  double self_weight = 1.0;
  double context_weight = 1.0;
  std::size_t max_span_len = kMaxSpanLength;
  std::uint64_t seed = 42;
};

/// One training unit: a span and, when its document continues, the next span.
struct PretrainItem {
  Span first;
  std::optional<Span> second;
};

/// Segments every document and emits all adjacent pairs; documents that fit
/// in a single span become unpaired items (self-supervised loss only).
std::vector<PretrainItem> build_pretrain_items(const std::vector<TokenSequence>& documents,
                                               std::span<const TokenId> terminals,
                                               std::size_t max_span_len);

/// Encoder plus the stage-1-only heads: an output bias for the tied encoder
/// vocabulary projection ("pretrain.*") and the decoder block ("decoder.*").
class ScpModel {
 public:
  ScpModel(DualEncoderModel& encoder, std::uint64_t seed);

  DualEncoderModel& encoder() { return *encoder_; }
  const DualEncoderModel& encoder() const { return *encoder_; }
  ParamStore& heads() { return heads_; }
  const ParamStore& heads() const { return heads_; }

  std::vector<Tensor> trainable() const;
  NamedTensors all_params() const;

  // Vocabulary logits from encoder outputs (tied to the token embeddings).
  Tensor encoder_logits(const Tensor& rows) const;
  // Runs the decoder block; prefix is [n, hidden], one vector per span.
  Tensor decoder_logits(const Tensor& prefix, std::span<const MaskedSpan> spans) const;

 private:
  DualEncoderModel* encoder_;
  ParamStore heads_;
  Tensor mlm_bias_;
  TransformerStack decoder_;
  Tensor decoder_ln_gamma_, decoder_ln_beta_;
  Tensor decoder_out_w_, decoder_out_b_;
};

/// Mean cross-entropy over the masked positions of `spans`, predicted from
/// the encoder outputs of the masked inputs.
Tensor self_supervised_loss(const ScpModel& model, std::span<const MaskedSpan> spans);
Tensor self_supervised_loss(const ScpModel& model, const MaskedSpan& span);

/// Mean cross-entropy over the decoder-masked positions of each `second`,
/// conditioned on the encoder [CLS] of the matching encoder-masked `first`.
/// With `use_context` false the prefix is a zero vector.
Tensor context_supervised_loss(const ScpModel& model, std::span<const MaskedSpan> first,
                               std::span<const MaskedSpan> second, bool use_context = true);

struct PretrainStepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double self_loss = 0.0;
  double context_loss = 0.0;
  double total = 0.0;
};

/// Deterministic AdamW + linear-warmup trainer. Batches and mask seeds are a
/// pure function of (seed, step), so a restored trainer continues exactly.
class Pretrainer {
 public:
  Pretrainer(ScpModel& model, std::vector<PretrainItem> items, PretrainConfig config);

  PretrainStepLog step();
  std::vector<PretrainStepLog> run(const std::function<void(const PretrainStepLog&)>& on_step = {});

  // Loss on the batch the given step would draw, without updating anything.
  PretrainStepLog evaluate(std::size_t step) const;

  std::size_t completed() const { return adam_.state().step; }
  // Model parameters plus optimizer moments ("optim.*").
  NamedTensors full_state() const;
  void restore(const NamedTensors& state);

 private:
  struct Batch {
    std::vector<MaskedSpan> encoder_views;  // pairs' firsts, then seconds, then singles
    std::vector<MaskedSpan> firsts;
    std::vector<MaskedSpan> seconds;
  };
  Batch draw(std::size_t step) const;
  std::pair<Tensor, Tensor> losses(const Batch& batch) const;

  ScpModel* model_;
  std::vector<PretrainItem> items_;
  PretrainConfig config_;
  AdamW adam_;
};

}  // namespace pfr
