#include "pfr/finetune.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "pfr/circle_core.hpp"
#include "pfr/error.hpp"
#include "pfr/log.hpp"
#include "json.hpp"

namespace pfr {
namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t step) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (step + 1));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

double circle_loss(std::span<const double> pos_sims, std::span<const double> neg_sims,
                   CircleParams params) {
  if (!(params.gamma > 0.0)) throw ContractError("circle_loss: gamma must be positive");
  return circle_objective(pos_sims, neg_sims, params.gamma, params.margin);
}

Tensor circle_loss(const Tensor& pos_sims, const Tensor& neg_sims, CircleParams params) {
  if (!(params.gamma > 0.0)) throw ContractError("circle_loss: gamma must be positive");
  return circle_loss(pos_sims, neg_sims, params.gamma, params.margin);
}

std::vector<TrainingPair> read_training_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::vector<TrainingPair> pairs;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ": line " + std::to_string(line_no) + ": ";
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw IngestionError(where + "malformed JSON");
    auto ids = [&](const char* key, bool required) {
      std::vector<std::string> out;
      const auto it = j.find(key);
      if (it == j.end()) {
        if (required) throw IngestionError(where + "missing field \"" + key + "\"");
        return out;
      }
      if (!it->is_array()) throw IngestionError(where + "\"" + key + "\" must be an array");
      for (const auto& v : *it) {
        if (!v.is_string()) throw IngestionError(where + "\"" + key + "\" holds a non-string id");
        out.push_back(v.get<std::string>());
      }
      return out;
    };
    const auto qid = j.find("qid");
    if (qid == j.end() || !qid->is_string()) throw IngestionError(where + "missing string field \"qid\"");
    pairs.push_back({qid->get<std::string>(), ids("positives", true), ids("negatives", false)});
  }
  if (pairs.empty()) throw IngestionError(path.string() + ": no training pairs");
  return pairs;
}

void write_training_pairs(const std::filesystem::path& path, const std::vector<TrainingPair>& pairs) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["qid"] = p.qid;
    j["positives"] = p.positives;
    j["negatives"] = p.negatives;
    out << j.dump() << '\n';
  }
}

void QaTokens::add(std::string id, TokenSequence question, TokenSequence answer) {
  if (index.count(id)) throw IngestionError("duplicate record id " + id);
  index.emplace(id, ids.size());
  ids.push_back(std::move(id));
  questions.push_back(std::move(question));
  answers.push_back(std::move(answer));
}

std::size_t QaTokens::at(const std::string& id) const {
  const auto it = index.find(id);
  if (it == index.end()) throw IngestionError("unknown record id " + id);
  return it->second;
}

AnswerBank AnswerBank::build(const DualEncoderModel& model, const QaTokens& corpus) {
  return AnswerBank{corpus.ids, embed_all(model, corpus.answers, Side::Answer)};
}

std::vector<std::string> mine_hard_negatives(std::span<const double> query_embedding,
                                             const AnswerBank& bank,
                                             const std::unordered_set<std::string>& positives,
                                             std::size_t k) {
  if (k == 0) throw ContractError("mine_hard_negatives: k must be at least 1");
  const std::size_t n = bank.ids.size();
  const std::size_t d = query_embedding.size();
  if (n > 0 && bank.embeddings.dim(1) != d) {
    throw DimensionError("mine_hard_negatives: query dim " + std::to_string(d) +
                         " vs bank " + shape_str(bank.embeddings.shape()));
  }
  const Tensor q = Tensor::vector({query_embedding.begin(), query_embedding.end()});
  std::vector<double> sims(n);
  {
    NoGradGuard guard;
    for (std::size_t i = 0; i < n; ++i) {
      sims[i] = cosine(q, Tensor::vector({bank.embeddings.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                                          bank.embeddings.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d)}))
                    .item();
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
  if (n < k) log::warn("mine_hard_negatives: corpus has fewer than k answers");
  std::vector<std::string> negatives;
  for (std::size_t r = 0; r < std::min(k, n); ++r) {
    if (!positives.count(bank.ids[order[r]])) negatives.push_back(bank.ids[order[r]]);
  }
  return negatives;
}

std::vector<std::string> mine_hard_negatives(const DualEncoderModel& model,
                                             const TokenSequence& query, const AnswerBank& bank,
                                             const std::unordered_set<std::string>& positives,
                                             std::size_t k) {
  const TokenSequence one[] = {query};
  const Tensor q = embed_all(model, one, Side::Question);
  return mine_hard_negatives(q.data(), bank, positives, k);
}

void attach_mined_negatives(const DualEncoderModel& model, const QaTokens& corpus,
                            std::vector<TrainingPair>& pairs, std::size_t k) {
  const AnswerBank bank = AnswerBank::build(model, corpus);
  std::vector<TokenSequence> queries;
  for (const auto& p : pairs) queries.push_back(corpus.questions[corpus.at(p.qid)]);
  const Tensor q = embed_all(model, queries, Side::Question);
  const std::size_t d = model.config().hidden;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& pair = pairs[i];
    const std::unordered_set<std::string> positives(pair.positives.begin(), pair.positives.end());
    const auto mined = mine_hard_negatives(q.data().subspan(i * d, d), bank, positives, k);
    std::unordered_set<std::string> seen(pair.negatives.begin(), pair.negatives.end());
    for (const auto& id : mined) {
      if (seen.insert(id).second) pair.negatives.push_back(id);
    }
  }
}

Finetuner::Finetuner(DualEncoderModel& model, const QaTokens& corpus, std::vector<TrainingPair> pairs,
                     FinetuneConfig config)
    : model_(&model),
      corpus_(&corpus),
      pairs_(std::move(pairs)),
      config_(config),
      adam_(model.params().tensors(),
            AdamWOptions{config.lr, 0.9, 0.999, 1e-8, config.weight_decay}) {
  if (pairs_.empty()) throw ConfigError("finetune: no training pairs");
  if (config_.batch_size == 0 || config_.steps == 0) {
    throw ConfigError("finetune: batch_size and steps must be positive");
  }
  for (const auto& p : pairs_) {
    if (p.positives.empty()) throw IngestionError("finetune: query " + p.qid + " has no positives");
    corpus.at(p.qid);
    std::unordered_set<std::string> pos(p.positives.begin(), p.positives.end());
    for (const auto& id : p.positives) corpus.at(id);
    for (const auto& id : p.negatives) {
      corpus.at(id);
      if (pos.count(id)) throw IngestionError("finetune: " + id + " is both positive and negative for " + p.qid);
    }
  }
}

std::vector<std::size_t> Finetuner::draw(std::size_t step) const {
  Rng rng(mix(config_.seed, step));
  std::vector<std::size_t> order(pairs_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(config_.batch_size, order.size());
  for (std::size_t i = 0; i < take; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
  order.resize(take);
  return order;
}

Tensor Finetuner::batch_loss(std::span<const std::size_t> batch) const {
  std::vector<TokenSequence> questions;
  std::vector<TokenSequence> answers;
  std::unordered_map<std::string, std::size_t> answer_row;
  for (std::size_t idx : batch) {
    const auto& pair = pairs_[idx];
    questions.push_back(corpus_->questions[corpus_->at(pair.qid)]);
    for (const auto* list : {&pair.positives, &pair.negatives}) {
      for (const auto& id : *list) {
        if (answer_row.emplace(id, answers.size()).second) {
          answers.push_back(corpus_->answers[corpus_->at(id)]);
        }
      }
    }
  }
  const Tensor q = model_->encode_batch(questions, Side::Question).cls();
  const Tensor a = model_->encode_batch(answers, Side::Answer).cls();

  std::vector<Tensor> per_query;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& pair = pairs_[batch[i]];
    const Tensor qi = slice(q, 0, i, 1);
    auto sims = [&](const std::vector<std::string>& ids) {
      std::vector<Tensor> out;
      for (const auto& id : ids) out.push_back(cosine(qi, slice(a, 0, answer_row.at(id), 1)));
      return out.empty() ? Tensor::zeros({0}) : concat(out, 0);
    };
    per_query.push_back(circle_loss(sims(pair.positives), sims(pair.negatives), config_.circle));
  }
  return mean(concat(per_query, 0));
}

double Finetuner::evaluate(std::size_t step) const {
  NoGradGuard guard;
  return batch_loss(draw(step)).item();
}

FinetuneStepLog Finetuner::step() {
  const std::size_t s = completed();
  if (config_.remine_every > 0 && s > 0 && s % config_.remine_every == 0) {
    attach_mined_negatives(*model_, *corpus_, pairs_, config_.mine_k);
  }
  const Tensor loss = batch_loss(draw(s));
  FinetuneStepLog log;
  log.step = s;
  log.loss = loss.item();
  log.lr = lr_schedule(ScheduleKind::LinearWarmup, s, config_.steps, config_.warmup_ratio, config_.lr);
  if (loss.requires_grad()) backward(loss);
  for (auto p : model_->params().tensors()) {
    if (!p.has_grad()) p.node()->grad_buffer();
  }
  adam_.step(log.lr);
  return log;
}

std::vector<FinetuneStepLog> Finetuner::run(const std::function<void(const FinetuneStepLog&)>& on_step) {
  std::vector<FinetuneStepLog> logs;
  while (completed() < config_.steps) {
    logs.push_back(step());
    if (on_step) on_step(logs.back());
  }
  return logs;
}

}  // namespace pfr
