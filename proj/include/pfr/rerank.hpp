#pragma once

// Stage 3: contextual re-ranking of BM25 candidate questions.
//
// Each candidate j is described by its affinities to L anchor candidates,
// Q_j[i] = <H_j, H_anchor(i)>, over L2-normalised fine-tuned embeddings.
// The K affinity vectors are projected (W_p, L -> L'), refined jointly by a
// small transformer into Z, and candidates are ordered by cos(Z_0, Z_j)
// where slot 0 holds the query. Training mixes a circle loss over Z with a
// reconstruction term ||Q_j - rho(Z_j)|| that keeps Z faithful to Q.

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pfr/bm25.hpp"
#include "pfr/encoder.hpp"
#include "pfr/finetune.hpp"
#include "pfr/optim.hpp"
#include "pfr/params.hpp"
#include "pfr/transformer.hpp"

namespace pfr {

struct RerankConfig {
  std::size_t candidates = 16;  // K
  std::size_t anchors = 8;      // L
  std::size_t projected = 32;   // L'
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t feedforward = 0;  // 0 means 4 * L'
  bool positions = false;
  bool anchors_include_query = true;
  double init_std = 0.02;

  CircleParams circle;
  double lambda = 0.2;
  bool unsquared_norm = false;
  double tau = 0.5;
  bool gold_labels = false;

  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  std::size_t batch_size = 256;
  std::size_t steps = 200;
  std::uint64_t seed = 42;

  std::size_t ff() const { return feedforward ? feedforward : 4 * projected; }
};

/// [CLS] embeddings of every corpus question, addressable by record id.
struct QuestionBank {
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> index;
  Tensor embeddings;  // [count, hidden], as produced by the encoder

  static QuestionBank build(const DualEncoderModel& model, const QaTokens& corpus);
  std::span<const double> row(std::size_t i) const;
};

struct CandidateList {
  std::string qid;
  std::vector<std::string> ids;  // ids[0] == qid
  // L2-normalised embeddings, one row per candidate: [K, hidden].
  Tensor embeddings;
};

/// Moves `qid` to the front of a ranked id list, or prepends it and drops
/// the last entry when absent; the result is truncated to `k`.
std::vector<std::string> place_query_first(const std::string& qid, const std::vector<std::string>& ranked,
                                           std::size_t k);

/// BM25 top-K questions for the query, query placed first, embedded with
/// `encoder` (corpus questions come from `bank`; the query is embedded from
/// its tokens unless it is itself a corpus question).
CandidateList assemble_candidates(const std::string& qid, const TokenSequence& query,
                                  const InvertedIndex& index, const QuestionBank& bank,
                                  const DualEncoderModel& encoder, std::size_t k = 16);

/// Q[j][i] = <H_j, H_a(i)> for anchors a(0..L-1): candidates 0..L-1, or
/// 1..L when the query is excluded. Dot products accumulate in index order.
Tensor compute_affinity(const Tensor& embeddings, std::size_t anchors, bool include_query = true);

/// Candidates 1..K-1 ordered by descending score, ties by list position.
struct RankedCandidate {
  std::string id;
  double score = 0.0;
};
std::vector<RankedCandidate> order_by_scores(const CandidateList& list, std::span<const double> scores);

/// Ranking by cos(H_0, H_j) on the list's own embeddings (no re-ranker).
std::vector<RankedCandidate> rank_by_embedding(const CandidateList& list);

class RerankerModel {
 public:
  RerankerModel(RerankConfig config, std::uint64_t seed);

  const RerankConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Affinities of one list [K, L] -> refined rows Z [K, L'].
  Tensor refine(const Tensor& affinity) const;
  // Several lists of equal length stacked as [B * K, L].
  Tensor refine_batch(const Tensor& affinities, std::size_t k) const;
  // rho: two-layer MLP L' -> L' -> L.
  Tensor reconstruct(const Tensor& z) const;

  const Tensor& projection() const { return projection_; }

 private:
  RerankConfig config_;
  ParamStore params_;
  Tensor projection_;
  Tensor positions_;
  TransformerStack stack_;
  Tensor ln_gamma_, ln_beta_;
  Tensor rho_w1_, rho_b1_, rho_w2_, rho_b2_;
};

struct RerankLabels {
  std::vector<std::size_t> positives;  // list positions in 1..K-1
  std::vector<std::size_t> negatives;
  bool degenerate() const { return positives.empty() || negatives.empty(); }
};

/// Positive when <H_0, H_j> >= tau, negative otherwise.
RerankLabels threshold_labels(const CandidateList& list, double tau);
/// Positive when `relevant(ids[j])`.
RerankLabels gold_labels(const CandidateList& list, const std::function<bool(const std::string&)>& relevant);

/// Circle loss over cos(Z_0, Z_j), j in the labelled sets. Empty positive or
/// negative set gives 0 and a warning.
Tensor contrastive_loss(const Tensor& z, const RerankLabels& labels, CircleParams params = {});
/// Mean over all K*L entries of (Q - rho(Z))^2, or with `unsquared` the
/// literal sum over candidates of ||Q_j - rho(Z_j)||.
Tensor mse_loss(const Tensor& affinity, const Tensor& reconstructed, bool unsquared = false);
Tensor joint_loss(const Tensor& contrastive, const Tensor& mse, double lambda);
double joint_loss(double contrastive, double mse, double lambda);

/// Full objective of one list through the model.
Tensor list_loss(const RerankerModel& model, const Tensor& affinity, const RerankLabels& labels);

struct RerankExample {
  Tensor affinity;  // [K, L]
  RerankLabels labels;
};

struct RerankStepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

/// SGD + momentum with cosine decay over `steps`. Lists with no positive or
/// no negative are skipped; ConfigError if every list is.
class RerankTrainer {
 public:
  RerankTrainer(RerankerModel& model, std::vector<RerankExample> examples);

  RerankStepLog step();
  std::vector<RerankStepLog> run(const std::function<void(const RerankStepLog&)>& on_step = {});
  double evaluate(std::size_t step) const;

  std::size_t skipped() const { return skipped_; }
  std::size_t usable() const { return examples_.size(); }
  std::size_t completed() const { return sgd_.state().step; }

 private:
  std::vector<std::size_t> draw(std::size_t step) const;
  Tensor batch_loss(std::span<const std::size_t> batch) const;

  RerankerModel* model_;
  std::vector<RerankExample> examples_;
  std::size_t skipped_ = 0;
  Sgd sgd_;
};

/// Candidates 1..K-1 ordered by cos(Z_0, Z_j).
std::vector<RankedCandidate> rerank(const RerankerModel& model, const CandidateList& list);

}  // namespace pfr
