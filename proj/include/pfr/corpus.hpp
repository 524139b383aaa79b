#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "pfr/metrics.hpp"

namespace pfr {

struct QaRecord {
  std::string id;
  std::string question;
  std::string answer;
  std::string category;
  std::string group;  // optional duplicate-group id; empty when unknown
};

struct Corpus {
  std::vector<QaRecord> records;
  std::unordered_map<std::string, std::size_t> index;

  std::size_t size() const { return records.size(); }
  const QaRecord& at(const std::string& id) const;  // IngestionError when unknown
  bool contains(const std::string& id) const { return index.count(id) > 0; }
  void add(QaRecord record);  // IngestionError on a duplicate id
  // Ids sharing the record's group (the record itself included); just the
  // record when it has no group.
  std::vector<std::string> group_of(const std::string& id) const;
};

/// JSON-lines, one {"id","question","answer","category","group"?} per line.
/// Blank lines are skipped. Errors name the 1-based line number.
Corpus ingest(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);

/// JSON-lines {"qid","text","relevant":[ids]}.
std::vector<EvalQuery> read_eval_set(const std::filesystem::path& path);
void write_eval_set(const std::filesystem::path& path, const std::vector<EvalQuery>& queries);
/// IngestionError when a query has no relevant ids or names an unknown one.
void validate_eval_set(const Corpus& corpus, const std::vector<EvalQuery>& queries);

inline const std::vector<std::string>& category_labels() {
  static const std::vector<std::string> labels = {
      "marriage_family",   "labor_disputes",       "intellectual_property",
      "criminal_offenses", "property_disputes",    "corporate_compliance",
      "urban_renewal",     "traffic_accidents",    "medical_accidents"};
  return labels;
}

/// Knobs of the planted-paraphrase generator.
///
/// Every concept is a set of `synonyms` invented words. A group owns
/// `specific_concepts` question concepts and `answer_concepts` answer-only
/// concepts; each category owns `category_concepts` concepts shared by all of
/// its groups. A paraphrase mentions every group concept through a randomly
/// chosen synonym plus `category_mentions` random category concepts, with
/// function words in between. Lexical overlap inside a group is therefore
/// partial, and category-mates overlap lexically without being relevant.
struct SyntheticProfile {
  std::size_t synonyms = 4;
  std::size_t specific_concepts = 3;
  std::size_t answer_concepts = 3;
  std::size_t category_concepts = 10;
  std::size_t category_mentions = 3;
  std::size_t answer_category_mentions = 2;
  std::size_t max_filler = 2;  // function words before each concept mention
};

struct SyntheticData {
  Corpus corpus;
  std::vector<EvalQuery> eval;
};

/// n_groups x paraphrases records plus one held-out paraphrase per group as
/// an eval query whose relevant set is the group. Deterministic in `seed`.
SyntheticData generate_synthetic(std::uint64_t seed, std::size_t n_groups, std::size_t paraphrases,
                                 const SyntheticProfile& profile = {});

}  // namespace pfr
