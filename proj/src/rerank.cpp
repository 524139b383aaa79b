#include "pfr/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pfr/error.hpp"
#include "pfr/log.hpp"

namespace pfr {
namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t step) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (step + 1));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

std::span<const double> row_of(const Tensor& m, std::size_t r) {
  const std::size_t d = m.dim(1);
  return m.data().subspan(r * d, d);
}

}  // namespace

QuestionBank QuestionBank::build(const DualEncoderModel& model, const QaTokens& corpus) {
  QuestionBank bank;
  bank.ids = corpus.ids;
  for (std::size_t i = 0; i < bank.ids.size(); ++i) bank.index.emplace(bank.ids[i], i);
  bank.embeddings = embed_all(model, corpus.questions, Side::Question);
  return bank;
}

std::span<const double> QuestionBank::row(std::size_t i) const { return row_of(embeddings, i); }

std::vector<std::string> place_query_first(const std::string& qid, const std::vector<std::string>& ranked,
                                           std::size_t k) {
  std::vector<std::string> out{qid};
  for (const auto& id : ranked) {
    if (out.size() == k) break;
    if (id != qid) out.push_back(id);
  }
  return out;
}

CandidateList assemble_candidates(const std::string& qid, const TokenSequence& query,
                                  const InvertedIndex& index, const QuestionBank& bank,
                                  const DualEncoderModel& encoder, std::size_t k) {
  if (index.num_docs() == 0) throw ConfigError("assemble_candidates: empty index");
  if (k < 2) throw ConfigError("assemble_candidates: need at least 2 candidates");
  if (index.num_docs() + 1 < k) {
    throw ConfigError("assemble_candidates: index holds " + std::to_string(index.num_docs()) +
                      " documents, too few for " + std::to_string(k) + " candidates");
  }
  // The query itself may be among the hits; place_query_first handles both cases.
  std::vector<std::string> ranked;
  for (const auto& hit : index.retrieve_topk(query, k)) ranked.push_back(index.id(hit.doc));

  CandidateList list;
  list.qid = qid;
  list.ids = place_query_first(qid, ranked, k);
  const std::size_t d = encoder.config().hidden;
  std::vector<double> rows;
  rows.reserve(list.ids.size() * d);
  const auto self = bank.index.find(qid);
  if (self != bank.index.end()) {
    const auto r = bank.row(self->second);
    rows.insert(rows.end(), r.begin(), r.end());
  } else {
    const TokenSequence one[] = {query};
    const Tensor q = embed_all(encoder, one, Side::Question);
    rows.insert(rows.end(), q.data().begin(), q.data().end());
  }
  for (std::size_t j = 1; j < list.ids.size(); ++j) {
    const auto it = bank.index.find(list.ids[j]);
    if (it == bank.index.end()) throw IngestionError("assemble_candidates: " + list.ids[j] + " not in question bank");
    const auto r = bank.row(it->second);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  NoGradGuard guard;
  list.embeddings = l2_normalize(Tensor::from({list.ids.size(), d}, std::move(rows)));
  return list;
}

Tensor compute_affinity(const Tensor& embeddings, std::size_t anchors, bool include_query) {
  if (embeddings.rank() != 2) throw DimensionError("compute_affinity: embeddings must be [K, d]");
  const std::size_t k = embeddings.dim(0);
  const std::size_t first = include_query ? 0 : 1;
  if (anchors == 0 || first + anchors > k) {
    throw ConfigError("compute_affinity: " + std::to_string(anchors) + " anchors do not fit " +
                      std::to_string(k) + " candidates");
  }
  std::vector<double> q(k * anchors);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < anchors; ++i) q[j * anchors + i] = dot(row_of(embeddings, j), row_of(embeddings, first + i));
  }
  return Tensor::from({k, anchors}, std::move(q));
}

std::vector<RankedCandidate> order_by_scores(const CandidateList& list, std::span<const double> scores) {
  if (scores.size() != list.ids.size()) throw DimensionError("order_by_scores: one score per candidate expected");
  std::vector<std::size_t> order(list.ids.size() - 1);
  std::iota(order.begin(), order.end(), std::size_t{1});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RankedCandidate> out;
  for (std::size_t j : order) out.push_back(RankedCandidate{list.ids[j], scores[j]});
  return out;
}

std::vector<RankedCandidate> rank_by_embedding(const CandidateList& list) {
  std::vector<double> scores(list.ids.size(), 0.0);
  for (std::size_t j = 1; j < scores.size(); ++j) scores[j] = dot(row_of(list.embeddings, 0), row_of(list.embeddings, j));
  return order_by_scores(list, scores);
}

// --- model ------------------------------------------------------------------

RerankerModel::RerankerModel(RerankConfig config, std::uint64_t seed) : config_(config) {
  if (config_.anchors == 0 || config_.projected == 0 || config_.candidates < 2) {
    throw ConfigError("reranker: anchors, projected width and candidates must be positive");
  }
  if (config_.projected % config_.heads != 0) throw ConfigError("reranker: projected width must divide by heads");
  Rng rng(seed);
  const double in_std = 1.0 / std::sqrt(static_cast<double>(config_.anchors));
  const double mid_std = 1.0 / std::sqrt(static_cast<double>(config_.projected));
  projection_ = params_.normal("rerank.projection", {config_.anchors, config_.projected}, in_std, rng);
  if (config_.positions) {
    positions_ = params_.normal("rerank.positions", {config_.candidates, config_.projected}, config_.init_std, rng);
  }
  stack_ = TransformerStack(params_, "rerank.transformer",
                            TransformerShape{config_.layers, config_.projected, config_.heads, config_.ff()},
                            config_.init_std, rng);
  ln_gamma_ = params_.ones("rerank.ln_f.gamma", {config_.projected});
  ln_beta_ = params_.zeros("rerank.ln_f.beta", {config_.projected});
  rho_w1_ = params_.normal("rerank.rho.w1", {config_.projected, config_.projected}, mid_std, rng);
  rho_b1_ = params_.zeros("rerank.rho.b1", {config_.projected});
  rho_w2_ = params_.normal("rerank.rho.w2", {config_.projected, config_.anchors}, mid_std, rng);
  rho_b2_ = params_.zeros("rerank.rho.b2", {config_.anchors});
}

Tensor RerankerModel::refine(const Tensor& affinity) const { return refine_batch(affinity, affinity.dim(0)); }

Tensor RerankerModel::refine_batch(const Tensor& affinities, std::size_t k) const {
  if (affinities.rank() != 2 || affinities.dim(1) != config_.anchors || k == 0 || affinities.dim(0) % k != 0) {
    throw DimensionError("reranker: affinities " + shape_str(affinities.shape()) + " do not stack lists of " +
                         std::to_string(k) + " x " + std::to_string(config_.anchors));
  }
  const std::size_t batch = affinities.dim(0) / k;
  Tensor x = matmul(affinities, projection_);
  if (config_.positions) {
    if (k > config_.candidates) throw DimensionError("reranker: more candidates than position rows");
    const Tensor pos = slice(positions_, 0, 0, k);
    std::vector<Tensor> tiled(batch, pos);
    x = add(x, batch == 1 ? pos : concat(tiled, 0));
  }
  const std::vector<std::size_t> lengths(batch, k);
  return layer_norm(stack_.forward(x, k, lengths), ln_gamma_, ln_beta_);
}

Tensor RerankerModel::reconstruct(const Tensor& z) const {
  return add(matmul(gelu(add(matmul(z, rho_w1_), rho_b1_)), rho_w2_), rho_b2_);
}

// --- labels and losses ------------------------------------------------------

RerankLabels threshold_labels(const CandidateList& list, double tau) {
  RerankLabels labels;
  for (std::size_t j = 1; j < list.ids.size(); ++j) {
    const double s = dot(row_of(list.embeddings, 0), row_of(list.embeddings, j));
    (s >= tau ? labels.positives : labels.negatives).push_back(j);
  }
  return labels;
}

RerankLabels gold_labels(const CandidateList& list, const std::function<bool(const std::string&)>& relevant) {
  RerankLabels labels;
  for (std::size_t j = 1; j < list.ids.size(); ++j) {
    (relevant(list.ids[j]) ? labels.positives : labels.negatives).push_back(j);
  }
  return labels;
}

Tensor contrastive_loss(const Tensor& z, const RerankLabels& labels, CircleParams params) {
  if (labels.degenerate()) {
    log::warn("contrastive_loss: empty positive or negative set, loss is 0");
    return Tensor::scalar(0.0);
  }
  const Tensor anchor = slice(z, 0, 0, 1);
  auto sims = [&](const std::vector<std::size_t>& rows) {
    std::vector<Tensor> out;
    for (std::size_t j : rows) {
      if (j == 0 || j >= z.dim(0)) throw ContractError("contrastive_loss: label position out of range");
      out.push_back(cosine(anchor, slice(z, 0, j, 1)));
    }
    return concat(out, 0);
  };
  return circle_loss(sims(labels.positives), sims(labels.negatives), params);
}

Tensor mse_loss(const Tensor& affinity, const Tensor& reconstructed, bool unsquared) {
  if (affinity.shape() != reconstructed.shape()) {
    throw DimensionError("mse_loss: " + shape_str(affinity.shape()) + " vs " + shape_str(reconstructed.shape()));
  }
  const Tensor diff = sub(affinity, reconstructed);
  if (unsquared) return sum(row_norms(diff));
  return mean(mul(diff, diff));
}

Tensor joint_loss(const Tensor& contrastive, const Tensor& mse, double lambda) {
  return add(contrastive, scale(mse, lambda));
}

double joint_loss(double contrastive, double mse, double lambda) { return contrastive + lambda * mse; }

Tensor list_loss(const RerankerModel& model, const Tensor& affinity, const RerankLabels& labels) {
  const auto& c = model.config();
  const Tensor z = model.refine(affinity);
  return joint_loss(contrastive_loss(z, labels, c.circle), mse_loss(affinity, model.reconstruct(z), c.unsquared_norm),
                    c.lambda);
}

// --- training ---------------------------------------------------------------

RerankTrainer::RerankTrainer(RerankerModel& model, std::vector<RerankExample> examples)
    : model_(&model),
      sgd_(model.params().tensors(),
           SgdOptions{model.config().lr, model.config().momentum, model.config().weight_decay}) {
  const auto& c = model.config();
  if (c.batch_size == 0 || c.steps == 0) throw ConfigError("rerank: batch_size and steps must be positive");
  std::size_t k = 0;
  for (auto& ex : examples) {
    if (ex.labels.degenerate()) {
      ++skipped_;
      continue;
    }
    if (k == 0) k = ex.affinity.dim(0);
    if (ex.affinity.dim(0) != k || ex.affinity.dim(1) != c.anchors) {
      throw DimensionError("rerank: training lists must share shape [K, L]");
    }
    examples_.push_back(std::move(ex));
  }
  if (examples_.empty()) {
    throw ConfigError("rerank: all " + std::to_string(skipped_) + " candidate lists lack a positive or a negative");
  }
  if (skipped_ > 0) log::info("rerank: skipped " + std::to_string(skipped_) + " degenerate candidate lists");
}

std::vector<std::size_t> RerankTrainer::draw(std::size_t step) const {
  Rng rng(mix(model_->config().seed, step));
  std::vector<std::size_t> order(examples_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(model_->config().batch_size, order.size());
  for (std::size_t i = 0; i < take; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
  order.resize(take);
  return order;
}

Tensor RerankTrainer::batch_loss(std::span<const std::size_t> batch) const {
  const auto& c = model_->config();
  const std::size_t k = examples_.front().affinity.dim(0);
  std::vector<Tensor> stacked;
  for (std::size_t idx : batch) stacked.push_back(examples_[idx].affinity);
  const Tensor q = concat(stacked, 0);
  const Tensor z = model_->refine_batch(q, k);
  const Tensor rebuilt = model_->reconstruct(z);
  std::vector<Tensor> losses;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor zb = slice(z, 0, b * k, k);
    const Tensor cl = contrastive_loss(zb, examples_[batch[b]].labels, c.circle);
    const Tensor mse = mse_loss(stacked[b], slice(rebuilt, 0, b * k, k), c.unsquared_norm);
    losses.push_back(joint_loss(cl, mse, c.lambda));
  }
  return mean(concat(losses, 0));
}

double RerankTrainer::evaluate(std::size_t step) const {
  NoGradGuard guard;
  return batch_loss(draw(step)).item();
}

RerankStepLog RerankTrainer::step() {
  const auto& c = model_->config();
  const std::size_t s = completed();
  const Tensor loss = batch_loss(draw(s));
  RerankStepLog log;
  log.step = s;
  log.loss = loss.item();
  log.lr = lr_schedule(ScheduleKind::CosineDecay, s, c.steps, 0.0, c.lr);
  backward(loss);
  for (auto p : model_->params().tensors()) {
    if (!p.has_grad()) p.node()->grad_buffer();
  }
  sgd_.step(log.lr);
  return log;
}

std::vector<RerankStepLog> RerankTrainer::run(const std::function<void(const RerankStepLog&)>& on_step) {
  std::vector<RerankStepLog> logs;
  while (completed() < model_->config().steps) {
    logs.push_back(step());
    if (on_step) on_step(logs.back());
  }
  return logs;
}

std::vector<RankedCandidate> rerank(const RerankerModel& model, const CandidateList& list) {
  NoGradGuard guard;
  const auto& c = model.config();
  const Tensor z = model.refine(compute_affinity(list.embeddings, c.anchors, c.anchors_include_query));
  const Tensor anchor = slice(z, 0, 0, 1);
  std::vector<double> scores(list.ids.size(), 0.0);
  for (std::size_t j = 1; j < scores.size(); ++j) scores[j] = cosine(anchor, slice(z, 0, j, 1)).item();
  return order_by_scores(list, scores);
}

}  // namespace pfr
