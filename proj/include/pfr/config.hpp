#pragma once

// Flat key=value run configuration. Keys carry a section prefix
// ("pretrain.lr", "rerank.lambda", ...); '#' starts a comment. Unknown keys
// and unparsable values are rejected with the offending line.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pfr/bm25.hpp"
#include "pfr/corpus.hpp"
#include "pfr/encoder.hpp"
#include "pfr/finetune.hpp"
#include "pfr/pretrain.hpp"
#include "pfr/rerank.hpp"

namespace pfr {

struct RunConfig {
  std::uint64_t seed = 42;

  // Empty paths select the synthetic generator.
  std::string corpus_path;
  std::string eval_path;
  std::size_t synthetic_groups = 200;
  std::size_t synthetic_paraphrases = 4;
  SyntheticProfile synthetic;

  std::size_t vocab_min_freq = 1;
  std::size_t vocab_max_size = 8192;
  Bm25Params bm25;
  EncoderConfig encoder;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  std::string pairs_path;  // optional training pairs file; empty derives pairs from groups
  std::size_t bm25_negatives = 4;  // sampled per positive from the BM25 pool
  std::size_t bm25_pool = 50;
  RerankConfig rerank;
  std::vector<std::string> eval_stages = {"bm25", "random", "pretrained", "finetuned", "reranked"};

  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  // Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> echo() const;
  std::string to_text() const;

 private:
  struct Field {
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> put;
  };
  std::vector<Field> fields();
  std::vector<Field> fields() const;
};

}  // namespace pfr
