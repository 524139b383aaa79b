#include "pfr/encoder.hpp"

#include <algorithm>

#include "pfr/error.hpp"

namespace pfr {

TokenSequence frame(const TokenSequence& tokens, std::size_t max_tokens) {
  const std::size_t kept = std::min(tokens.size(), max_tokens);
  TokenSequence framed;
  framed.reserve(kept + 2);
  framed.push_back(special::kCls);
  framed.insert(framed.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(kept));
  framed.push_back(special::kSep);
  return framed;
}

Tensor EncodedBatch::sequence(std::size_t b) const {
  return slice(hidden, 0, b * seq_len, lengths.at(b));
}

Tensor EncodedBatch::cls() const {
  std::vector<std::size_t> rows(lengths.size());
  for (std::size_t b = 0; b < rows.size(); ++b) rows[b] = b * seq_len;
  return gather_rows(hidden, rows);
}

DualEncoderModel::DualEncoderModel(EncoderConfig config, std::uint64_t seed) : config_(config) {
  if (config_.vocab_size <= special::kCount) {
    throw ContractError("encoder: vocab_size must exceed the reserved ids");
  }
  if (config_.max_position < kMaxSpanLength + 2) {
    throw ContractError("encoder: max_position must hold a framed 128-token input");
  }
  Rng rng(seed);
  question_ = make_trunk("encoder", rng);
  if (!config_.tied) answer_ = make_trunk("answer_encoder", rng);
}

DualEncoderModel::Trunk DualEncoderModel::make_trunk(const std::string& prefix, Rng& rng) {
  const std::size_t d = config_.hidden;
  Trunk t;
  t.tokens = params_.normal(prefix + ".tok_emb", {config_.vocab_size, d}, config_.init_std, rng);
  t.positions = params_.normal(prefix + ".pos_emb", {config_.max_position, d}, config_.init_std, rng);
  t.stack = TransformerStack(params_, prefix,
                             TransformerShape{config_.layers, d, config_.heads, config_.ff()},
                             config_.init_std, rng);
  t.ln_gamma = params_.ones(prefix + ".ln_f.gamma", {d});
  t.ln_beta = params_.zeros(prefix + ".ln_f.beta", {d});
  return t;
}

const DualEncoderModel::Trunk& DualEncoderModel::trunk(Side side) const {
  return side == Side::Answer && !config_.tied ? answer_ : question_;
}

EncodedBatch DualEncoderModel::encode_framed(std::span<const TokenSequence> framed, Side side,
                                             std::vector<Tensor>* attention) const {
  if (framed.empty()) throw ContractError("encode: empty batch");
  EncodedBatch out;
  for (const auto& seq : framed) {
    if (seq.empty() || seq.size() > config_.max_position) {
      throw DimensionError("encode: framed length " + std::to_string(seq.size()) +
                           " outside [1, " + std::to_string(config_.max_position) + "]");
    }
    out.lengths.push_back(seq.size());
    out.seq_len = std::max(out.seq_len, seq.size());
  }
  std::vector<std::size_t> ids(framed.size() * out.seq_len, special::kPad);
  std::vector<std::size_t> positions(ids.size());
  for (std::size_t b = 0; b < framed.size(); ++b) {
    for (std::size_t t = 0; t < out.seq_len; ++t) {
      positions[b * out.seq_len + t] = t;
      if (t < framed[b].size()) {
        if (framed[b][t] >= config_.vocab_size) {
          throw DimensionError("encode: token id " + std::to_string(framed[b][t]) +
                               " outside vocabulary of " + std::to_string(config_.vocab_size));
        }
        ids[b * out.seq_len + t] = framed[b][t];
      }
    }
  }
  const Trunk& t = trunk(side);
  const Tensor x = add(gather_rows(t.tokens, ids), gather_rows(t.positions, positions));
  const Tensor h = t.stack.forward(x, out.seq_len, out.lengths, attention);
  out.hidden = layer_norm(h, t.ln_gamma, t.ln_beta);
  return out;
}

EncodedBatch DualEncoderModel::encode_batch(std::span<const TokenSequence> sequences, Side side,
                                            std::vector<Tensor>* attention) const {
  std::vector<TokenSequence> framed;
  framed.reserve(sequences.size());
  for (const auto& s : sequences) framed.push_back(frame(s));
  return encode_framed(framed, side, attention);
}

Tensor encode(const DualEncoderModel& model, const TokenSequence& tokens, Side side) {
  const TokenSequence one[] = {tokens};
  return model.encode_batch(one, side).sequence(0);
}

Tensor cls_embedding(const Tensor& encoded) {
  return reshape(slice(encoded, 0, 0, 1), {encoded.dim(1)});
}

Tensor qa_similarity(const DualEncoderModel& model, const TokenSequence& question,
                     const TokenSequence& answer) {
  return cosine(cls_embedding(encode(model, question, Side::Question)),
                cls_embedding(encode(model, answer, Side::Answer)));
}

Tensor embed_all(const DualEncoderModel& model, std::span<const TokenSequence> sequences, Side side,
                 std::size_t chunk) {
  NoGradGuard guard;
  const std::size_t d = model.config().hidden;
  std::vector<double> out;
  out.reserve(sequences.size() * d);
  for (std::size_t start = 0; start < sequences.size(); start += chunk) {
    const auto n = std::min(chunk, sequences.size() - start);
    const Tensor cls = model.encode_batch(sequences.subspan(start, n), side).cls();
    out.insert(out.end(), cls.data().begin(), cls.data().end());
  }
  return Tensor::from({sequences.size(), d}, std::move(out));
}

}  // namespace pfr
