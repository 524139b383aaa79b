#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "../support/oracles.hpp"
#include "pfr/error.hpp"
#include "pfr/metrics.hpp"
#include "pfr/random.hpp"

using namespace pfr;
using V = std::vector<std::string>;

TEST(Metrics, Examples) {
  const std::unordered_set<std::string> rel = {"b"};
  EXPECT_EQ(precision_at_1(V{"b", "a"}, rel), 1.0);
  EXPECT_EQ(precision_at_1(V{"a", "b"}, rel), 0.0);
  EXPECT_EQ(reciprocal_rank(V{"a", "c", "b"}, rel), 1.0 / 3.0);
  EXPECT_EQ(reciprocal_rank(V{"a", "c"}, rel), 0.0);
  EXPECT_EQ(reciprocal_rank(V{"a", "b", "b"}, {"b", "a"}), 1.0);
  V long_list(16, "x");
  long_list.push_back("b");
  EXPECT_EQ(mrr_at_16(long_list, rel), 0.0);  // rank 17 is past the cutoff
  long_list[15] = "b";
  EXPECT_EQ(mrr_at_16(long_list, rel), 1.0 / 16.0);
}

TEST(Metrics, EmptyRankingIsContractError) {
  EXPECT_THROW(precision_at_1(V{}, {"a"}), ContractError);
  EXPECT_THROW(reciprocal_rank(V{}, {"a"}), ContractError);
}

TEST(Metrics, RecomputationOnRandomPermutations) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    V ids;
    const std::size_t n = 1 + rng.below(30);
    for (std::size_t i = 0; i < n; ++i) ids.push_back("d" + std::to_string(i));
    rng.shuffle(ids);
    std::unordered_set<std::string> rel;
    for (std::size_t i = 0; i < 1 + rng.below(3); ++i) rel.insert("d" + std::to_string(rng.below(n + 5)));
    EXPECT_NEAR(reciprocal_rank(ids, rel), oracle::reciprocal_rank(ids, rel), 1e-12);
    EXPECT_EQ(precision_at_1(ids, rel), rel.count(ids[0]) ? 1.0 : 0.0);
  }
}

namespace {

std::vector<EvalQuery> queries() {
  return {{"q1", "t1", {"a"}}, {"q2", "t2", {"b", "c"}}, {"q3", "t3", {"z"}}};
}

Ranking fixed_ranker(const EvalQuery& q) {
  static const std::map<std::string, V> lists = {
      {"q1", {"a", "b"}}, {"q2", {"a", "x", "c"}}, {"q3", {"a", "b", "c"}}};
  const V& ids = lists.at(q.qid);
  return {ids, std::vector<double>(ids.size(), 1.0)};
}

}  // namespace

TEST(Evaluate, MeansAndRows) {
  const auto qs = queries();
  const EvalReport r = evaluate("bm25", qs, fixed_ranker);
  EXPECT_EQ(r.stage, "bm25");
  EXPECT_NEAR(r.p_at_1, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.mrr, (1.0 + 1.0 / 3.0 + 0.0) / 3.0, 1e-15);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[1].qid, "q2");
  EXPECT_EQ(r.rows[1].rr, 1.0 / 3.0);
}

TEST(Evaluate, InvariantToQueryOrder) {
  auto qs = queries();
  const EvalReport a = evaluate("s", qs, fixed_ranker);
  std::reverse(qs.begin(), qs.end());
  const EvalReport b = evaluate("s", qs, fixed_ranker);
  EXPECT_EQ(a.mrr, b.mrr);
  EXPECT_EQ(a.p_at_1, b.p_at_1);
}

TEST(Evaluate, Errors) {
  EXPECT_THROW(evaluate("s", std::vector<EvalQuery>{}, fixed_ranker), ConfigError);
  auto dup = queries();
  dup.push_back(dup[0]);
  EXPECT_THROW(evaluate("s", dup, fixed_ranker), ConfigError);
}

TEST(Evaluate, JsonRoundTripAndTable) {
  const auto qs = queries();
  const EvalReport r = evaluate("finetuned", qs, fixed_ranker);
  const EvalReport back = EvalReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_EQ(back.stage, r.stage);
  EXPECT_EQ(back.mrr, r.mrr);
  EXPECT_EQ(back.p_at_1, r.p_at_1);
  ASSERT_EQ(back.rows.size(), r.rows.size());
  EXPECT_EQ(back.rows[2].ranked, r.rows[2].ranked);
  const EvalReport both[] = {r, back};
  const std::string table = format_table(both);
  EXPECT_NE(table.find("finetuned"), std::string::npos);
  EXPECT_NE(table.find("MRR@16"), std::string::npos);
}
