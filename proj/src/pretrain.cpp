#include "pfr/pretrain.hpp"

#include <algorithm>
#include <unordered_map>

#include "pfr/error.hpp"

namespace pfr {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Rows of the masked positions inside a framed batch ([CLS] at row 0).
std::vector<std::size_t> masked_rows(std::span<const MaskedSpan> spans, std::size_t seq_len,
                                     std::vector<std::size_t>& labels) {
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < spans.size(); ++b) {
    for (std::size_t k = 0; k < spans[b].positions.size(); ++k) {
      rows.push_back(b * seq_len + 1 + spans[b].positions[k]);
      labels.push_back(spans[b].labels[k]);
    }
  }
  return rows;
}

std::vector<TokenSequence> framed_inputs(std::span<const MaskedSpan> spans) {
  std::vector<TokenSequence> framed;
  framed.reserve(spans.size());
  for (const auto& s : spans) framed.push_back(frame(s.input));
  return framed;
}

Tensor context_loss_from_prefix(const ScpModel& model, const Tensor& prefix,
                                std::span<const MaskedSpan> second) {
  std::vector<std::size_t> labels;
  for (const auto& s : second) labels.insert(labels.end(), s.labels.begin(), s.labels.end());
  return cross_entropy(model.decoder_logits(prefix, second), labels);
}

}  // namespace

std::vector<PretrainItem> build_pretrain_items(const std::vector<TokenSequence>& documents,
                                               std::span<const TokenId> terminals,
                                               std::size_t max_span_len) {
  std::vector<PretrainItem> items;
  for (std::size_t d = 0; d < documents.size(); ++d) {
    if (documents[d].empty()) continue;
    const auto spans = segment_spans(documents[d], terminals, d, max_span_len);
    if (spans.size() == 1) {
      items.push_back(PretrainItem{spans[0], std::nullopt});
      continue;
    }
    for (auto& pair : adjacent_pairs(spans)) {
      items.push_back(PretrainItem{std::move(pair.first), std::move(pair.second)});
    }
  }
  return items;
}

// --- model ------------------------------------------------------------------

ScpModel::ScpModel(DualEncoderModel& encoder, std::uint64_t seed) : encoder_(&encoder) {
  const auto& cfg = encoder.config();
  Rng rng(seed);
  mlm_bias_ = heads_.zeros("pretrain.mlm_bias", {cfg.vocab_size});
  decoder_ = TransformerStack(heads_, "decoder",
                              TransformerShape{1, cfg.hidden, cfg.heads, cfg.ff()}, cfg.init_std,
                              rng);
  decoder_ln_gamma_ = heads_.ones("decoder.ln_f.gamma", {cfg.hidden});
  decoder_ln_beta_ = heads_.zeros("decoder.ln_f.beta", {cfg.hidden});
  decoder_out_w_ = heads_.normal("decoder.out.weight", {cfg.hidden, cfg.vocab_size}, cfg.init_std, rng);
  decoder_out_b_ = heads_.zeros("decoder.out.bias", {cfg.vocab_size});
}

std::vector<Tensor> ScpModel::trainable() const {
  auto all = encoder_->params().tensors();
  for (const auto& t : heads_.tensors()) all.push_back(t);
  return all;
}

NamedTensors ScpModel::all_params() const {
  NamedTensors all = encoder_->params().entries();
  for (const auto& e : heads_.entries()) all.push_back(e);
  return all;
}

Tensor ScpModel::encoder_logits(const Tensor& rows) const {
  return add(matmul(rows, transpose(encoder_->token_embeddings())), mlm_bias_);
}

Tensor ScpModel::decoder_logits(const Tensor& prefix, std::span<const MaskedSpan> spans) const {
  const std::size_t d = encoder_->config().hidden;
  if (prefix.rank() != 2 || prefix.dim(0) != spans.size() || prefix.dim(1) != d) {
    throw DimensionError("decoder: prefix " + shape_str(prefix.shape()) + " for " +
                         std::to_string(spans.size()) + " spans");
  }
  std::size_t seq_len = 0;
  std::vector<std::size_t> lengths;
  for (const auto& s : spans) {
    lengths.push_back(s.input.size() + 1);
    seq_len = std::max(seq_len, s.input.size() + 1);
  }
  const std::size_t rows = spans.size() * seq_len;
  std::vector<std::size_t> ids(rows, special::kPad), positions(rows), placement(rows, spans.size());
  std::vector<double> keep(rows * d, 1.0);
  for (std::size_t b = 0; b < spans.size(); ++b) {
    placement[b * seq_len] = b;
    std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(b * seq_len * d), d, 0.0);
    for (std::size_t t = 0; t < seq_len; ++t) {
      positions[b * seq_len + t] = t;
      if (t >= 1 && t - 1 < spans[b].input.size()) ids[b * seq_len + t] = spans[b].input[t - 1];
    }
  }
  const Tensor tokens = mul(add(gather_rows(encoder_->token_embeddings(), ids),
                                gather_rows(encoder_->position_embeddings(), positions)),
                            Tensor::from({rows, d}, std::move(keep)));
  const Tensor prefixes = concat({prefix, Tensor::zeros({1, d})}, 0);
  const Tensor x = add(tokens, gather_rows(prefixes, placement));
  const Tensor h = layer_norm(decoder_.forward(x, seq_len, lengths), decoder_ln_gamma_,
                              decoder_ln_beta_);
  std::vector<std::size_t> labels;
  const auto targets = masked_rows(spans, seq_len, labels);
  return add(matmul(gather_rows(h, targets), decoder_out_w_), decoder_out_b_);
}

// --- losses -----------------------------------------------------------------

Tensor self_supervised_loss(const ScpModel& model, std::span<const MaskedSpan> spans) {
  if (spans.empty()) throw ContractError("self_supervised_loss: no spans");
  const auto framed = framed_inputs(spans);
  const EncodedBatch enc = model.encoder().encode_framed(framed);
  std::vector<std::size_t> labels;
  const auto rows = masked_rows(spans, enc.seq_len, labels);
  return cross_entropy(model.encoder_logits(gather_rows(enc.hidden, rows)), labels);
}

Tensor self_supervised_loss(const ScpModel& model, const MaskedSpan& span) {
  return self_supervised_loss(model, std::span<const MaskedSpan>(&span, 1));
}

Tensor context_supervised_loss(const ScpModel& model, std::span<const MaskedSpan> first,
                               std::span<const MaskedSpan> second, bool use_context) {
  if (first.size() != second.size() || first.empty()) {
    throw ContractError("context_supervised_loss: need matching, non-empty span lists");
  }
  Tensor prefix;
  if (use_context) {
    const auto framed = framed_inputs(first);
    prefix = model.encoder().encode_framed(framed).cls();
  } else {
    prefix = Tensor::zeros({first.size(), model.encoder().config().hidden});
  }
  return context_loss_from_prefix(model, prefix, second);
}

// --- trainer ----------------------------------------------------------------

Pretrainer::Pretrainer(ScpModel& model, std::vector<PretrainItem> items, PretrainConfig config)
    : model_(&model),
      items_(std::move(items)),
      config_(config),
      adam_(model.trainable(), AdamWOptions{config.lr, 0.9, 0.999, 1e-8, config.weight_decay}) {
  if (items_.empty()) throw IngestionError("pretrain: corpus produced no spans");
  if (config_.batch_size == 0 || config_.steps == 0) {
    throw ConfigError("pretrain: batch_size and steps must be positive");
  }
  const std::size_t vocab = model.encoder().config().vocab_size;
  for (const auto& item : items_) {
    for (const Span* s : {&item.first, item.second ? &*item.second : nullptr}) {
      if (!s) continue;
      for (TokenId t : s->tokens) {
        if (t >= vocab) {
          throw IngestionError("pretrain: document " + std::to_string(s->document) + " holds token id " +
                               std::to_string(t) + ", outside the vocabulary of " + std::to_string(vocab));
        }
      }
    }
  }
}

Pretrainer::Batch Pretrainer::draw(std::size_t step) const {
  Rng rng(splitmix(config_.seed ^ splitmix(step + 1)));
  std::vector<std::size_t> order(items_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t take = std::min(config_.batch_size, order.size());
  for (std::size_t i = 0; i < take; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);

  Batch batch;
  std::vector<MaskedSpan> singles;
  for (std::size_t i = 0; i < take; ++i) {
    const PretrainItem& item = items_[order[i]];
    auto first = apply_mask(item.first.tokens, config_.encoder_mask_ratio, rng.fork());
    if (!item.second) {
      singles.push_back(std::move(first));
      continue;
    }
    batch.firsts.push_back(std::move(first));
    batch.encoder_views.push_back(
        apply_mask(item.second->tokens, config_.encoder_mask_ratio, rng.fork()));
    // The decoder sees an independent, heavier mask of the same span.
    batch.seconds.push_back(apply_mask(item.second->tokens, config_.decoder_mask_ratio, rng.fork()));
  }
  // Encoder views: pair firsts, then pair seconds, then singles.
  batch.encoder_views.insert(batch.encoder_views.begin(), batch.firsts.begin(), batch.firsts.end());
  batch.encoder_views.insert(batch.encoder_views.end(), singles.begin(), singles.end());
  return batch;
}

std::pair<Tensor, Tensor> Pretrainer::losses(const Batch& batch) const {
  const auto framed = framed_inputs(batch.encoder_views);
  const EncodedBatch enc = model_->encoder().encode_framed(framed);
  std::vector<std::size_t> labels;
  const auto rows = masked_rows(batch.encoder_views, enc.seq_len, labels);
  Tensor self = cross_entropy(model_->encoder_logits(gather_rows(enc.hidden, rows)), labels);
  Tensor context;
  if (!batch.firsts.empty()) {
    std::vector<std::size_t> cls_rows(batch.firsts.size());
    for (std::size_t b = 0; b < cls_rows.size(); ++b) cls_rows[b] = b * enc.seq_len;
    context = context_loss_from_prefix(*model_, gather_rows(enc.hidden, cls_rows), batch.seconds);
  }
  return {self, context};
}

PretrainStepLog Pretrainer::evaluate(std::size_t step) const {
  NoGradGuard guard;
  const auto [self, context] = losses(draw(step));
  PretrainStepLog log;
  log.step = step;
  log.self_loss = self.item();
  log.context_loss = context.defined() ? context.item() : 0.0;
  log.total = config_.self_weight * log.self_loss + config_.context_weight * log.context_loss;
  return log;
}

PretrainStepLog Pretrainer::step() {
  const std::size_t s = completed();
  const auto [self, context] = losses(draw(s));
  Tensor total = scale(self, config_.self_weight);
  if (context.defined()) total = add(total, scale(context, config_.context_weight));
  backward(total);

  PretrainStepLog log;
  log.step = s;
  log.lr = lr_schedule(ScheduleKind::LinearWarmup, s, config_.steps, config_.warmup_ratio, config_.lr);
  log.self_loss = self.item();
  log.context_loss = context.defined() ? context.item() : 0.0;
  log.total = total.item();
  // Parameters the batch never touched (e.g. unused decoder paths) still
  // need a gradient slot for the optimizer contract.
  for (auto& p : model_->trainable()) {
    if (!p.has_grad()) Tensor(p).node()->grad_buffer();
  }
  adam_.step(log.lr);
  return log;
}

std::vector<PretrainStepLog> Pretrainer::run(const std::function<void(const PretrainStepLog&)>& on_step) {
  std::vector<PretrainStepLog> logs;
  while (completed() < config_.steps) {
    logs.push_back(step());
    if (on_step) on_step(logs.back());
  }
  return logs;
}

NamedTensors Pretrainer::full_state() const {
  NamedTensors state = model_->all_params();
  const auto params = model_->all_params();
  const auto& opt = adam_.state();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& shape = params[k].second.shape();
    state.emplace_back("optim.m." + params[k].first, Tensor::from(shape, opt.first[k]));
    state.emplace_back("optim.v." + params[k].first, Tensor::from(shape, opt.second[k]));
  }
  state.emplace_back("optim.step", Tensor::scalar(static_cast<double>(opt.step)));
  return state;
}

void Pretrainer::restore(const NamedTensors& state) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : state) by_name[name] = &t;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw IngestionError("pretrain: checkpoint lacks " + name);
    if (it->second->shape() != shape) throw IngestionError("pretrain: shape mismatch for " + name);
    return *it->second;
  };
  const auto params = model_->all_params();
  auto& opt = adam_.state();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& [name, tensor] = params[k];
    const auto src = fetch(name, tensor.shape()).data();
    auto dst = Tensor(tensor).mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
    const auto m = fetch("optim.m." + name, tensor.shape()).data();
    const auto v = fetch("optim.v." + name, tensor.shape()).data();
    opt.first[k].assign(m.begin(), m.end());
    opt.second[k].assign(v.begin(), v.end());
  }
  opt.step = static_cast<std::size_t>(fetch("optim.step", {}).item());
}

}  // namespace pfr
