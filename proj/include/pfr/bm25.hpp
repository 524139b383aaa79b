#pragma once

// Okapi BM25 over an in-memory inverted index.
//
//   idf(t)     = ln(1 + (N - df + 0.5) / (df + 0.5))        (never negative)
//   weight     = idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
//   score(q,d) = sum over query tokens (repeats included) of weight(t, d)
//
// Documents are numbered in insertion order; that number breaks score ties.
//
// On-disk layout (little-endian, version 1):
//   "PFRB" | u32 version | f64 k1 | f64 b | varint N
//   N x { varint id length | id bytes | varint doc length }
//   varint T (distinct terms), T x { varint term-id delta | varint df }
//   for each term, df x { varint docno delta | varint tf }

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pfr/text.hpp"

namespace pfr {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct Posting {
  std::uint32_t doc = 0;
  std::uint32_t tf = 0;
};

struct ScoredDoc {
  std::uint32_t doc = 0;
  double score = 0.0;
};

class InvertedIndex {
 public:
  // Throws IngestionError on an empty corpus or a duplicate id.
  static InvertedIndex build(const std::vector<std::pair<std::string, TokenSequence>>& docs,
                             Bm25Params params = {});
  static InvertedIndex load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t num_docs() const { return ids_.size(); }
  double avgdl() const { return avgdl_; }
  const Bm25Params& params() const { return params_; }
  const std::string& id(std::uint32_t doc) const { return ids_.at(doc); }
  std::optional<std::uint32_t> find(const std::string& id) const;
  std::uint32_t doc_length(std::uint32_t doc) const { return lengths_.at(doc); }
  const std::vector<Posting>& postings(TokenId term) const;
  std::size_t df(TokenId term) const { return postings(term).size(); }
  std::size_t num_terms() const { return postings_.size(); }

  double idf(TokenId term) const;
  // Contribution of one query token occurrence to a document.
  double term_weight(TokenId term, std::uint32_t tf, std::uint32_t doc) const;

  // Direct evaluation: scans the document's term frequencies.
  double score(const TokenSequence& query, std::uint32_t doc) const;

  // Documents by descending score, ties by ascending docno. When fewer than
  // k documents score above zero, the list is filled with the lowest-numbered
  // remaining documents at score 0, up to min(k, N).
  std::vector<ScoredDoc> retrieve_topk(const TokenSequence& query, std::size_t k = 16) const;

  bool operator==(const InvertedIndex& other) const;

 private:
  Bm25Params params_;
  std::vector<std::string> ids_;
  std::vector<std::uint32_t> lengths_;
  double avgdl_ = 0.0;
  std::unordered_map<TokenId, std::vector<Posting>> postings_;
  std::unordered_map<std::string, std::uint32_t> by_id_;
  // Forward view for direct scoring: per doc, sorted (term, tf).
  std::vector<std::vector<std::pair<TokenId, std::uint32_t>>> forward_;

  void finalize();
};

}  // namespace pfr
