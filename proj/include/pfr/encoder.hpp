#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pfr/params.hpp"
#include "pfr/text.hpp"
#include "pfr/transformer.hpp"

namespace pfr {

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden = 64;
  std::size_t feedforward = 0;  // 0 means 4 * hidden
  std::size_t max_position = 130;
  std::size_t vocab_size = 0;
  bool tied = true;  // one trunk for questions and answers
  double init_std = 0.02;

  std::size_t ff() const { return feedforward ? feedforward : 4 * hidden; }
};

enum class Side { Question, Answer };

/// Adds [CLS] ... [SEP] around at most `max_tokens` leading tokens.
TokenSequence frame(const TokenSequence& tokens, std::size_t max_tokens = kMaxSpanLength);

/// Output of one padded batch: hidden is [batch * seq_len, hidden].
struct EncodedBatch {
  Tensor hidden;
  std::size_t seq_len = 0;
  std::vector<std::size_t> lengths;  // framed lengths, specials included

  std::size_t size() const { return lengths.size(); }
  // Non-pad rows of sequence b, shape [lengths[b], hidden].
  Tensor sequence(std::size_t b) const;
  // Row 0 of every sequence, shape [batch, hidden].
  Tensor cls() const;
};

/// Transformer encoder with learned absolute positions and a final layer
/// norm; aggregates a sequence through its [CLS] row. Parameters live under
/// "encoder." (and "answer_encoder." when question/answer trunks are untied).
class DualEncoderModel {
 public:
  DualEncoderModel(EncoderConfig config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Frames and pads `sequences`. Tokens beyond kMaxSpanLength are dropped.
  EncodedBatch encode_batch(std::span<const TokenSequence> sequences, Side side = Side::Question,
                            std::vector<Tensor>* attention = nullptr) const;

  // Runs pre-framed id rows (already containing specials and PAD) through a
  // trunk. Used where callers control framing, e.g. masked spans.
  EncodedBatch encode_framed(std::span<const TokenSequence> framed, Side side = Side::Question,
                             std::vector<Tensor>* attention = nullptr) const;

  // Question-trunk tables, shared with the pre-training heads.
  const Tensor& token_embeddings() const { return question_.tokens; }
  const Tensor& position_embeddings() const { return question_.positions; }

 private:
  struct Trunk {
    Tensor tokens;
    Tensor positions;
    TransformerStack stack;
    Tensor ln_gamma;
    Tensor ln_beta;
  };

  Trunk make_trunk(const std::string& prefix, Rng& rng);
  const Trunk& trunk(Side side) const;

  EncoderConfig config_;
  ParamStore params_;
  Trunk question_;
  Trunk answer_;
};

/// Contextual vectors of one sequence, shape [(len + 2), hidden].
Tensor encode(const DualEncoderModel& model, const TokenSequence& tokens, Side side = Side::Question);

/// Row 0 of an encode() result, shape [hidden].
Tensor cls_embedding(const Tensor& encoded);

/// Cosine of the question's and the answer's [CLS] vectors.
Tensor qa_similarity(const DualEncoderModel& model, const TokenSequence& question,
                     const TokenSequence& answer);

/// [CLS] embeddings of many sequences without recording a graph, encoded in
/// chunks of `chunk` sequences. Result is [count, hidden].
Tensor embed_all(const DualEncoderModel& model, std::span<const TokenSequence> sequences, Side side,
                 std::size_t chunk = 64);

}  // namespace pfr
