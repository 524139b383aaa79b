#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "../support/helpers.hpp"
#include "../support/oracles.hpp"
#include "pfr/error.hpp"
#include "pfr/finetune.hpp"

using namespace pfr;

TEST(CircleLoss, Anchors) {
  const double one[] = {1.0}, half[] = {0.5};
  EXPECT_EQ(circle_loss(one, one, {1.0, 0.0}), std::log(2.0));
  // Very separated pair: exp underflows to 0 and the loss is exactly 0.
  const double hi[] = {1.0}, lo[] = {-1.0};
  EXPECT_EQ(circle_loss(hi, lo, {1000.0, 0.0}), 0.0);
  EXPECT_EQ(circle_loss(std::span<const double>{}, half, {}), 0.0);
  EXPECT_EQ(circle_loss(half, std::span<const double>{}, {}), 0.0);
}

TEST(CircleLoss, MatchesPairwiseOracle) {
  Rng rng(1);
  for (int set = 0; set < 20; ++set) {
    std::vector<double> pos(1 + rng.below(4)), neg(1 + rng.below(12));
    for (auto& x : pos) x = 2.0 * rng.uniform() - 1.0;
    for (auto& x : neg) x = 2.0 * rng.uniform() - 1.0;
    const CircleParams p{1.0 + 30.0 * rng.uniform(), 0.5 * rng.uniform() - 0.25};
    const long double expected = oracle::circle_direct(pos, neg, p.gamma, p.margin);
    EXPECT_NEAR(circle_loss(pos, neg, p), static_cast<double>(expected), 1e-10) << "set " << set;
    const Tensor tp = Tensor::vector(pos), tn = Tensor::vector(neg);
    EXPECT_NEAR(circle_loss(tp, tn, p).item(), static_cast<double>(expected), 1e-10);
  }
}

TEST(CircleLoss, MonotoneInEachSimilarity) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> pos(3), neg(5);
    for (auto& x : pos) x = 2.0 * rng.uniform() - 1.0;
    for (auto& x : neg) x = 2.0 * rng.uniform() - 1.0;
    const double base = circle_loss(pos, neg);
    auto up_pos = pos;
    up_pos[rng.below(3)] += 0.05;
    auto up_neg = neg;
    up_neg[rng.below(5)] += 0.05;
    EXPECT_LE(circle_loss(up_pos, neg), base);
    EXPECT_GE(circle_loss(pos, up_neg), base);
    EXPECT_GE(base, 0.0);
  }
}

TEST(CircleLoss, StableAtExtremeExponents) {
  const double pos[] = {-1.0, 1.0}, neg[] = {1.0, -1.0};
  // gamma 350 drives exponents to +-700.
  const double loss = circle_loss(pos, neg, {350.0, 0.0});
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, 700.0, 1e-9);
  Tensor tp = Tensor::vector({-1.0, 1.0}, true), tn = Tensor::vector({1.0, -1.0}, true);
  backward(circle_loss(tp, tn, {350.0, 0.0}));
  for (double g : tp.grad()) EXPECT_TRUE(std::isfinite(g));
  for (double g : tn.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(CircleLoss, RejectsNonPositiveGamma) {
  const double x[] = {0.1};
  EXPECT_THROW(circle_loss(x, x, {0.0, 0.0}), ContractError);
}

// --- mining ---------------------------------------------------------------

namespace {

AnswerBank random_bank(Rng& rng, std::size_t n, std::size_t d) {
  AnswerBank bank;
  for (std::size_t i = 0; i < n; ++i) bank.ids.push_back("a" + std::to_string(i));
  bank.embeddings = testing_support::random_tensor(rng, {n, d}, false);
  return bank;
}

}  // namespace

TEST(Mining, MatchesBruteForceAndExcludesPositives) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 5 + rng.below(40), d = 8, k = 1 + rng.below(12);
    const AnswerBank bank = random_bank(rng, n, d);
    std::vector<double> q(d);
    for (auto& x : q) x = rng.normal();
    std::unordered_set<std::string> positives;
    for (std::size_t i = 0; i < 3; ++i) positives.insert(bank.ids[rng.below(n)]);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<long double> sims(n);
    std::vector<double> qh(q), all(bank.embeddings.data().begin(), bank.embeddings.data().end());
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> two(qh);
      two.insert(two.end(), all.begin() + i * d, all.begin() + (i + 1) * d);
      sims[i] = oracle::cosine_rows(two, d, 0, 1);
    }
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return sims[a] > sims[b]; });
    std::vector<std::string> expected;
    for (std::size_t r = 0; r < std::min(k, n); ++r) {
      if (!positives.count(bank.ids[order[r]])) expected.push_back(bank.ids[order[r]]);
    }
    const auto mined = mine_hard_negatives(q, bank, positives, k);
    EXPECT_EQ(mined, expected);
    for (const auto& id : mined) EXPECT_FALSE(positives.count(id));
  }
}

TEST(Mining, SmallBankReturnsEveryNonPositive) {
  Rng rng(4);
  const AnswerBank bank = random_bank(rng, 4, 6);
  const std::vector<double> q = {1, 0, 0, 0, 0, 0};
  const auto mined = mine_hard_negatives(q, bank, {"a2"}, 10);
  EXPECT_EQ(mined.size(), 3u);
  EXPECT_THROW(mine_hard_negatives(q, bank, {}, 0), ContractError);
  const std::vector<double> wrong(5, 1.0);
  EXPECT_THROW(mine_hard_negatives(wrong, bank, {}, 2), DimensionError);
}

// --- training ---------------------------------------------------------------

namespace {

// Question/answer pairs where each answer repeats a distinctive token of
// its question, so a few hundred updates visibly separate them.
QaTokens toy_corpus(std::size_t n) {
  QaTokens corpus;
  for (std::size_t i = 0; i < n; ++i) {
    const TokenId key = static_cast<TokenId>(special::kCount + 1 + i);
    corpus.add("r" + std::to_string(i), {special::kCount, key, key},
               {key, static_cast<TokenId>(special::kCount), key});
  }
  return corpus;
}

EncoderConfig toy_encoder(std::size_t vocab) {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.hidden = 16;
  cfg.vocab_size = vocab;
  cfg.init_std = 0.1;
  return cfg;
}

std::vector<TrainingPair> self_pairs(const QaTokens& corpus) {
  std::vector<TrainingPair> pairs;
  for (const auto& id : corpus.ids) pairs.push_back({id, {id}, {}});
  return pairs;
}

}  // namespace

TEST(Finetuner, AttachedNegativesNeverIncludePositives) {
  const QaTokens corpus = toy_corpus(12);
  const DualEncoderModel model(toy_encoder(30), 1);
  auto pairs = self_pairs(corpus);
  pairs[0].negatives = {"r5"};
  attach_mined_negatives(model, corpus, pairs, 4);
  for (const auto& p : pairs) {
    EXPECT_FALSE(p.negatives.empty());
    for (const auto& n : p.negatives) EXPECT_NE(n, p.qid);
    const std::unordered_set<std::string> unique(p.negatives.begin(), p.negatives.end());
    EXPECT_EQ(unique.size(), p.negatives.size());
  }
  EXPECT_EQ(pairs[0].negatives.front(), "r5");
}

TEST(Finetuner, LossDecreasesAndIsDeterministic) {
  const QaTokens corpus = toy_corpus(12);
  FinetuneConfig fc;
  fc.lr = 5e-3;
  fc.batch_size = 6;
  fc.steps = 120;
  fc.mine_k = 4;
  fc.seed = 7;
  auto train = [&] {
    DualEncoderModel model(toy_encoder(30), 2);
    auto pairs = self_pairs(corpus);
    attach_mined_negatives(model, corpus, pairs, fc.mine_k);
    Finetuner tuner(model, corpus, pairs, fc);
    const double before = tuner.evaluate(0);
    tuner.run();
    return std::make_pair(before, tuner.evaluate(0));
  };
  const auto [before, after] = train();
  EXPECT_LT(after, 0.5 * before);
  EXPECT_EQ(train().second, after);
}

TEST(Finetuner, Errors) {
  const QaTokens corpus = toy_corpus(4);
  DualEncoderModel model(toy_encoder(30), 3);
  FinetuneConfig fc;
  EXPECT_THROW(Finetuner(model, corpus, {}, fc), ConfigError);
  EXPECT_THROW(Finetuner(model, corpus, {{"r0", {}, {"r1"}}}, fc), IngestionError);
  EXPECT_THROW(Finetuner(model, corpus, {{"r0", {"r1"}, {"r1"}}}, fc), IngestionError);
  QaTokens dup = toy_corpus(2);
  EXPECT_THROW(dup.add("r0", {6}, {7}), IngestionError);
  EXPECT_THROW(dup.at("nope"), IngestionError);
}
