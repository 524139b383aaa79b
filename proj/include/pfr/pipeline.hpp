#pragma once

// End-to-end orchestration. Every command reads and writes fixed artifact
// names inside one output directory and leaves a manifest
// (manifest.<command>.json) with the config echo, the seed, and git-style
// blob hashes of its inputs and outputs. Stage order is enforced by the
// artifacts each command demands:
//
//   generate -> index -> pretrain -> finetune -> rerank-train -> eval / query

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pfr/config.hpp"
#include "pfr/corpus.hpp"
#include "pfr/metrics.hpp"

namespace pfr {

namespace artifact {
inline constexpr const char* kCorpus = "corpus.jsonl";
inline constexpr const char* kEvalSet = "eval.jsonl";
inline constexpr const char* kVocab = "vocab.txt";
inline constexpr const char* kQuestionIndex = "questions.bm25";
inline constexpr const char* kAnswerIndex = "answers.bm25";
inline constexpr const char* kPretrained = "encoder_pretrained.pfrl";
inline constexpr const char* kPretrainState = "pretrain_state.pfrl";  // encoder, heads and optimizer
inline constexpr const char* kFinetuned = "encoder_finetuned.pfrl";
inline constexpr const char* kReranker = "reranker.pfrl";
inline constexpr const char* kPretrainLog = "pretrain_log.tsv";
inline constexpr const char* kFinetuneLog = "finetune_log.tsv";
inline constexpr const char* kRerankLog = "rerank_log.tsv";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kRankings = "rankings.jsonl";
}  // namespace artifact

/// SHA-1 of "blob <size>\0<content>", as `git hash-object` prints it.
std::string git_blob_hash(const std::filesystem::path& path);

struct QueryHit {
  std::string id;
  double score = 0.0;
  std::string question;
  std::string answer;
};

class Pipeline {
 public:
  Pipeline(RunConfig config, std::filesystem::path out);

  const RunConfig& config() const { return config_; }
  const std::filesystem::path& out() const { return out_; }

  void generate();
  void index();
  void pretrain();
  void finetune();
  void rerank_train();
  std::vector<EvalReport> eval();
  std::vector<EvalReport> run_all();

  // stage: bm25 | random | pretrained | finetuned | reranked
  std::vector<QueryHit> query(const std::string& text, const std::string& stage) const;

  // Re-executes the command recorded in `manifest` into this pipeline's
  // output directory (using the manifest's config) and checks that every
  // recorded artifact hash is reproduced. IngestionError on any mismatch.
  static void replay(const std::filesystem::path& manifest, const std::filesystem::path& out);

 private:
  std::filesystem::path path(const char* name) const { return out_ / name; }
  std::filesystem::path require(const char* name, const char* producer) const;
  void write_manifest(const std::string& command, const std::vector<std::filesystem::path>& inputs,
                      const std::vector<std::filesystem::path>& outputs) const;

  RunConfig config_;
  std::filesystem::path out_;
};

/// Runs one named command ("generate", "index", ..., "run").
void run_command(Pipeline& pipeline, const std::string& command);

}  // namespace pfr
