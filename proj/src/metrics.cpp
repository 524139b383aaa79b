#include "pfr/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "pfr/error.hpp"

namespace pfr {

double precision_at_1(std::span<const std::string> ranked, const std::unordered_set<std::string>& relevant) {
  if (ranked.empty()) throw ContractError("precision_at_1: empty ranking");
  return relevant.count(ranked.front()) ? 1.0 : 0.0;
}

double reciprocal_rank(std::span<const std::string> ranked, const std::unordered_set<std::string>& relevant,
                       std::size_t cutoff) {
  if (ranked.empty()) throw ContractError("reciprocal_rank: empty ranking");
  const std::size_t n = std::min(cutoff, ranked.size());
  for (std::size_t r = 0; r < n; ++r) {
    if (relevant.count(ranked[r])) return 1.0 / static_cast<double>(r + 1);
  }
  return 0.0;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["p_at_1"] = p_at_1;
  j["mrr_at_16"] = mrr;
  j["queries"] = rows.size();
  auto& out = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["qid"] = r.qid;
    row["p_at_1"] = r.p_at_1;
    row["rr"] = r.rr;
    row["ranked"] = r.ranked;
    row["scores"] = r.scores;
    out.push_back(std::move(row));
  }
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport report;
  report.stage = j.at("stage").get<std::string>();
  report.p_at_1 = j.at("p_at_1").get<double>();
  report.mrr = j.at("mrr_at_16").get<double>();
  for (const auto& row : j.at("rows")) {
    QueryResult r;
    r.qid = row.at("qid").get<std::string>();
    r.p_at_1 = row.at("p_at_1").get<double>();
    r.rr = row.at("rr").get<double>();
    r.ranked = row.at("ranked").get<std::vector<std::string>>();
    r.scores = row.at("scores").get<std::vector<double>>();
    report.rows.push_back(std::move(r));
  }
  return report;
}

EvalReport evaluate(const std::string& stage, std::span<const EvalQuery> queries,
                    const std::function<Ranking(const EvalQuery&)>& ranker) {
  if (queries.empty()) throw ConfigError("evaluate: empty eval set");
  EvalReport report;
  report.stage = stage;
  std::unordered_set<std::string> seen;
  for (const auto& q : queries) {
    if (!seen.insert(q.qid).second) throw ConfigError("evaluate: repeated query id " + q.qid);
    if (q.relevant.empty()) throw ConfigError("evaluate: query " + q.qid + " has no relevant ids");
    Ranking ranking = ranker(q);
    const std::unordered_set<std::string> relevant(q.relevant.begin(), q.relevant.end());
    QueryResult row;
    row.qid = q.qid;
    row.p_at_1 = precision_at_1(ranking.ids, relevant);
    row.rr = mrr_at_16(ranking.ids, relevant);
    row.ranked = std::move(ranking.ids);
    row.scores = std::move(ranking.scores);
    report.rows.push_back(std::move(row));
  }
  std::vector<std::size_t> order(report.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return report.rows[a].qid < report.rows[b].qid; });
  double p = 0.0, rr = 0.0;
  for (std::size_t i : order) {
    p += report.rows[i].p_at_1;
    rr += report.rows[i].rr;
  }
  const auto n = static_cast<double>(report.rows.size());
  report.p_at_1 = p / n;
  report.mrr = rr / n;
  return report;
}

std::string format_table(std::span<const EvalReport> reports) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%-12s %8s %8s %8s\n", "stage", "P@1", "MRR@16", "queries");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-12s %8.4f %8.4f %8zu\n", r.stage.c_str(), r.p_at_1, r.mrr, r.rows.size());
    out += line;
  }
  return out;
}

}  // namespace pfr
