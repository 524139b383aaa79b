#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "../support/helpers.hpp"
#include "pfr/bm25.hpp"
#include "pfr/error.hpp"
#include "pfr/pipeline.hpp"
#include "pfr/text.hpp"

using namespace pfr;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  return RunConfig::parse(
      "seed=3\n"
      "synthetic.groups=12\n"
      "synthetic.paraphrases=3\n"
      "encoder.layers=1\n"
      "encoder.heads=2\n"
      "encoder.hidden=16\n"
      "pretrain.steps=4\n"
      "pretrain.batch_size=4\n"
      "pretrain.max_span_len=16\n"
      "finetune.steps=4\n"
      "finetune.batch_size=4\n"
      "finetune.mine_k=4\n"
      "finetune.bm25_negatives=1\n"
      "rerank.candidates=8\n"
      "rerank.anchors=4\n"
      "rerank.projected=8\n"
      "rerank.heads=2\n"
      "rerank.gold_labels=true\n"
      "rerank.steps=4\n"
      "rerank.batch_size=8\n",
      "tiny");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

class PipelineRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(testing_support::scratch_dir("pipeline"));
    Pipeline p(tiny_config(), *dir_);
    reports_ = new std::vector<EvalReport>(p.run_all());
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete reports_;
  }
  static fs::path* dir_;
  static std::vector<EvalReport>* reports_;
};

fs::path* PipelineRun::dir_ = nullptr;
std::vector<EvalReport>* PipelineRun::reports_ = nullptr;

TEST_F(PipelineRun, ProducesEveryStageAndArtifact) {
  std::set<std::string> stages;
  for (const auto& r : *reports_) {
    stages.insert(r.stage);
    EXPECT_GE(r.mrr, 0.0);
    EXPECT_LE(r.mrr, 1.0);
    EXPECT_EQ(r.rows.size(), 12u);
  }
  EXPECT_EQ(stages, (std::set<std::string>{"bm25", "random", "pretrained", "finetuned", "reranked"}));
  for (const char* name : {artifact::kCorpus, artifact::kVocab, artifact::kQuestionIndex, artifact::kPretrained,
                           artifact::kFinetuned, artifact::kReranker, artifact::kReport, "manifest.run.json"}) {
    EXPECT_TRUE(fs::exists(*dir_ / name)) << name;
  }
}

TEST_F(PipelineRun, EvalIsIdempotent) {
  const std::string before = slurp(*dir_ / artifact::kReport);
  Pipeline p(tiny_config(), *dir_);
  p.eval();
  EXPECT_EQ(slurp(*dir_ / artifact::kReport), before);
}

TEST_F(PipelineRun, QueryStages) {
  const Pipeline p(tiny_config(), *dir_);
  const Corpus corpus = ingest(*dir_ / artifact::kCorpus);
  const std::string text = corpus.records[0].question;

  const auto finetuned = p.query(text, "finetuned");
  const auto reranked = p.query(text, "reranked");
  EXPECT_LE(finetuned.size(), 7u);
  ASSERT_EQ(finetuned.size(), reranked.size());
  std::set<std::string> a, b;
  for (const auto& h : finetuned) a.insert(h.id);
  for (const auto& h : reranked) b.insert(h.id);
  EXPECT_EQ(a, b);
  for (const auto& h : reranked) EXPECT_FALSE(h.question.empty());

  // bm25 stage is the index's own ranking of the question text.
  const auto bm25 = p.query(text, "bm25");
  const InvertedIndex index = InvertedIndex::load(*dir_ / artifact::kQuestionIndex);
  const Vocab vocab = Vocab::load(*dir_ / artifact::kVocab);
  const auto direct = index.retrieve_topk(tokenize(vocab, text), 8);
  ASSERT_FALSE(bm25.empty());
  EXPECT_EQ(bm25[0].id, index.id(direct[0].doc));
  EXPECT_NEAR(bm25[0].score, direct[0].score, 1e-12);

  EXPECT_THROW(p.query("   ", "bm25"), UsageError);
  EXPECT_THROW(p.query(text, "psychic"), UsageError);
}

TEST_F(PipelineRun, ReplayReproducesArtifacts) {
  const fs::path again = testing_support::scratch_dir("pipeline_replay");
  Pipeline::replay(*dir_ / "manifest.run.json", again);
  for (const char* name : {artifact::kFinetuned, artifact::kReranker, artifact::kReport}) {
    EXPECT_EQ(git_blob_hash(again / name), git_blob_hash(*dir_ / name)) << name;
  }
}

TEST(Pipeline, MissingPrerequisitesNameTheProducer) {
  const fs::path dir = testing_support::scratch_dir("pipeline_empty");
  Pipeline p(tiny_config(), dir);
  try {
    p.finetune();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("generate"), std::string::npos) << e.what();
  }
  EXPECT_THROW(p.index(), ConfigError);
  EXPECT_THROW(p.eval(), ConfigError);
  EXPECT_THROW(p.query("who pays", "bm25"), ConfigError);
  EXPECT_THROW(run_command(p, "dance"), UsageError);
}

TEST(Pipeline, GitBlobHash) {
  const fs::path dir = testing_support::scratch_dir("blob");
  std::ofstream(dir / "hello.txt", std::ios::binary) << "hello\n";
  // `printf 'hello\n' | git hash-object --stdin`
  EXPECT_EQ(git_blob_hash(dir / "hello.txt"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Pipeline, TrainingPairsFile) {
  const fs::path dir = testing_support::scratch_dir("pipeline_pairs");
  RunConfig cfg = tiny_config();
  Pipeline p(cfg, dir);
  p.generate();
  p.index();
  p.pretrain();
  const Corpus corpus = ingest(dir / artifact::kCorpus);
  const auto& a = corpus.records[0];
  const auto& b = corpus.records[5];
  write_training_pairs(dir / "pairs.jsonl", {{a.id, {a.id}, {b.id}}, {b.id, {b.id}, {}}});
  const auto back = read_training_pairs(dir / "pairs.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].negatives, (std::vector<std::string>{b.id}));
  EXPECT_TRUE(back[1].negatives.empty());

  cfg.pairs_path = (dir / "pairs.jsonl").string();
  Pipeline with_pairs(cfg, dir);
  with_pairs.finetune();
  EXPECT_TRUE(fs::exists(dir / artifact::kFinetuned));
  EXPECT_NE(slurp(dir / "manifest.finetune.json").find("pairs.jsonl"), std::string::npos);

  std::ofstream(dir / "bad.jsonl") << R"({"qid":"x","positives":["nope"]})" << "\n";
  cfg.pairs_path = (dir / "bad.jsonl").string();
  EXPECT_THROW(Pipeline(cfg, dir).finetune(), IngestionError);
  std::ofstream(dir / "worse.jsonl") << R"({"qid":"x"})" << "\n";
  try {
    read_training_pairs(dir / "worse.jsonl");
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
  }
}
