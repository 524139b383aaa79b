#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pfr/encoder.hpp"
#include "pfr/optim.hpp"

namespace pfr {

struct CircleParams {
  double gamma = 20.0;
  double margin = 0.0;
};

/// log(1 + sum over (pos, neg) pairs of exp(gamma (neg - pos + margin))).
double circle_loss(std::span<const double> pos_sims, std::span<const double> neg_sims,
                   CircleParams params = {});
Tensor circle_loss(const Tensor& pos_sims, const Tensor& neg_sims, CircleParams params);

/// One query with its labelled positive answers and (possibly mined) negatives.
struct TrainingPair {
  std::string qid;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
};

/// JSON-lines {"qid", "positives": [ids], "negatives": [ids] (optional)}.
/// Errors name the 1-based line number.
std::vector<TrainingPair> read_training_pairs(const std::filesystem::path& path);
void write_training_pairs(const std::filesystem::path& path, const std::vector<TrainingPair>& pairs);

/// Tokenized question/answer texts addressed by record id.
struct QaTokens {
  std::vector<std::string> ids;
  std::vector<TokenSequence> questions;
  std::vector<TokenSequence> answers;
  std::unordered_map<std::string, std::size_t> index;

  void add(std::string id, TokenSequence question, TokenSequence answer);
  std::size_t at(const std::string& id) const;  // IngestionError when unknown
};

/// Frozen [CLS] embeddings of every answer, for similarity search.
struct AnswerBank {
  std::vector<std::string> ids;
  Tensor embeddings;  // [count, hidden]

  static AnswerBank build(const DualEncoderModel& model, const QaTokens& corpus);
};

/// Top-k answers by cosine to the query embedding (ties by bank order),
/// with labelled positives removed afterwards. When the bank holds fewer
/// than k answers, every non-positive is returned and a warning is logged.
std::vector<std::string> mine_hard_negatives(std::span<const double> query_embedding,
                                             const AnswerBank& bank,
                                             const std::unordered_set<std::string>& positives,
                                             std::size_t k);
std::vector<std::string> mine_hard_negatives(const DualEncoderModel& model,
                                             const TokenSequence& query, const AnswerBank& bank,
                                             const std::unordered_set<std::string>& positives,
                                             std::size_t k);

struct FinetuneConfig {
  double lr = 5e-5;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  std::size_t batch_size = 192;
  std::size_t steps = 200;
  CircleParams circle;
  std::size_t mine_k = 16;
  std::size_t remine_every = 0;  // 0: mine once before training
  std::uint64_t seed = 42;
};

/// Fills in mined negatives for every pair, keeping any negatives already
/// present (merged, de-duplicated, positives excluded).
void attach_mined_negatives(const DualEncoderModel& model, const QaTokens& corpus,
                            std::vector<TrainingPair>& pairs, std::size_t k);

struct FinetuneStepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

/// Mean per-query circle loss over sampled batches, AdamW + linear warmup.
class Finetuner {
 public:
  Finetuner(DualEncoderModel& model, const QaTokens& corpus, std::vector<TrainingPair> pairs,
            FinetuneConfig config);

  FinetuneStepLog step();
  std::vector<FinetuneStepLog> run(const std::function<void(const FinetuneStepLog&)>& on_step = {});

  // Batch loss the given step would see, without updating anything.
  double evaluate(std::size_t step) const;

  const std::vector<TrainingPair>& pairs() const { return pairs_; }
  std::size_t completed() const { return adam_.state().step; }

 private:
  std::vector<std::size_t> draw(std::size_t step) const;
  Tensor batch_loss(std::span<const std::size_t> batch) const;

  DualEncoderModel* model_;
  const QaTokens* corpus_;
  std::vector<TrainingPair> pairs_;
  FinetuneConfig config_;
  AdamW adam_;
};

}  // namespace pfr
