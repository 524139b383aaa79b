#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

namespace pfr {

inline constexpr std::size_t kMrrCutoff = 16;

/// 1 when ranked[0] is relevant, else 0. ContractError on an empty ranking.
double precision_at_1(std::span<const std::string> ranked, const std::unordered_set<std::string>& relevant);

/// 1 / rank of the first relevant id within the first `cutoff`, else 0.
double reciprocal_rank(std::span<const std::string> ranked, const std::unordered_set<std::string>& relevant,
                       std::size_t cutoff = kMrrCutoff);
inline double mrr_at_16(std::span<const std::string> ranked, const std::unordered_set<std::string>& relevant) {
  return reciprocal_rank(ranked, relevant, kMrrCutoff);
}

struct EvalQuery {
  std::string qid;
  std::string text;
  std::vector<std::string> relevant;
};

struct QueryResult {
  std::string qid;
  std::vector<std::string> ranked;
  std::vector<double> scores;
  double p_at_1 = 0.0;
  double rr = 0.0;
};

struct EvalReport {
  std::string stage;
  double p_at_1 = 0.0;
  double mrr = 0.0;
  std::vector<QueryResult> rows;  // in eval-set order

  nlohmann::ordered_json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

struct Ranking {
  std::vector<std::string> ids;
  std::vector<double> scores;
};

/// Runs `ranker` on every query and macro-averages. Means are reduced in
/// ascending qid order so they do not depend on the eval file's ordering.
/// ConfigError on an empty set or repeated qids.
EvalReport evaluate(const std::string& stage, std::span<const EvalQuery> queries,
                    const std::function<Ranking(const EvalQuery&)>& ranker);

/// Fixed-width table, one line per stage.
std::string format_table(std::span<const EvalReport> reports);

}  // namespace pfr
