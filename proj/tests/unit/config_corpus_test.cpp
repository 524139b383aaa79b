#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>

#include "../support/helpers.hpp"
#include "pfr/config.hpp"
#include "pfr/corpus.hpp"
#include "pfr/error.hpp"

using namespace pfr;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, ParsesKeysAndComments) {
  const RunConfig c = RunConfig::parse(
      "# comment\n"
      "seed = 7\n"
      "\n"
      "encoder.hidden=32   # trailing\n"
      "rerank.gold_labels=true\n"
      "finetune.lr=2e-3\n");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.encoder.hidden, 32u);
  EXPECT_TRUE(c.rerank.gold_labels);
  EXPECT_EQ(c.finetune.lr, 2e-3);
  EXPECT_EQ(c.pretrain.steps, RunConfig{}.pretrain.steps);
}

TEST(Config, ErrorsNameTheLine) {
  EXPECT_THROW(RunConfig::parse("bogus.key=1\n"), ConfigError);
  const std::string msg = error_of([] { RunConfig::parse("seed=1\nencoder.hidden=abc\n", "x.cfg"); });
  EXPECT_NE(msg.find("x.cfg"), std::string::npos) << msg;
  EXPECT_NE(msg.find('2'), std::string::npos) << msg;
  EXPECT_THROW(RunConfig::parse("seed\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("rerank.positions=maybe\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("eval.stages=bm25,nope\n"), ConfigError);
  EXPECT_THROW(RunConfig::load("/nonexistent/run.cfg"), ConfigError);
}

TEST(Config, EchoRoundTrips) {
  RunConfig c;
  c.set("pretrain.lr", "0.00025");
  c.set("rerank.anchors", "4");
  c.set("eval.stages", "bm25,reranked");
  const RunConfig back = RunConfig::parse(c.to_text());
  EXPECT_EQ(back.echo(), c.echo());
  std::set<std::string> keys;
  for (const auto& [k, v] : c.echo()) EXPECT_TRUE(keys.insert(k).second) << "repeated key " << k;
}

TEST(Config, DeskConfigLoads) {
  const RunConfig c = RunConfig::load(std::string(PFR_SOURCE_DIR) + "/configs/desk.cfg");
  EXPECT_EQ(c.encoder.hidden, 64u);
  EXPECT_EQ(c.rerank.candidates, 16u);
}

// --- corpus -----------------------------------------------------------------

namespace {

std::filesystem::path write_file(const std::string& dir, const std::string& name, const std::string& text) {
  const auto path = testing_support::scratch_dir(dir) / name;
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST(Corpus, IngestsAndRoundTrips) {
  const auto path = write_file("corpus_ok", "c.jsonl",
                               R"({"id":"1","question":"who pays?","answer":"the seller.","category":"labor_disputes"})"
                               "\n\n"
                               R"({"id":"2","question":"q","answer":"a","category":"x","group":"g"})"
                               "\n");
  const Corpus c = ingest(path);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.at("1").answer, "the seller.");
  EXPECT_EQ(c.at("2").group, "g");
  EXPECT_EQ(c.group_of("1"), (std::vector<std::string>{"1"}));
  write_corpus(path.parent_path() / "back.jsonl", c);
  const Corpus back = ingest(path.parent_path() / "back.jsonl");
  EXPECT_EQ(back.at("2").question, "q");
  EXPECT_THROW(c.at("3"), IngestionError);
}

TEST(Corpus, IngestErrorsNameTheLine) {
  const auto missing = write_file("corpus_bad1", "c.jsonl",
                                  R"({"id":"1","question":"q","answer":"a","category":"c"})"
                                  "\n"
                                  R"({"id":"2","question":"q","category":"c"})"
                                  "\n");
  const std::string msg = error_of([&] { ingest(missing); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;

  const auto dup = write_file("corpus_bad2", "c.jsonl",
                              R"({"id":"1","question":"q","answer":"a","category":"c"})"
                              "\n"
                              R"({"id":"1","question":"q","answer":"a","category":"c"})"
                              "\n");
  EXPECT_NE(error_of([&] { ingest(dup); }).find("duplicate"), std::string::npos);
  EXPECT_THROW(ingest(write_file("corpus_bad3", "c.jsonl", "{not json\n")), IngestionError);
  EXPECT_THROW(ingest(write_file("corpus_bad4", "c.jsonl", "\n\n")), IngestionError);
  EXPECT_THROW(ingest("/nonexistent/c.jsonl"), IngestionError);
}

TEST(Corpus, EvalSetValidation) {
  const auto data = generate_synthetic(3, 4, 2);
  validate_eval_set(data.corpus, data.eval);
  EXPECT_THROW(validate_eval_set(data.corpus, {{"e", "t", {}}}), IngestionError);
  EXPECT_THROW(validate_eval_set(data.corpus, {{"e", "t", {"missing"}}}), IngestionError);
  const auto dir = testing_support::scratch_dir("eval_rt");
  write_eval_set(dir / "e.jsonl", data.eval);
  const auto back = read_eval_set(dir / "e.jsonl");
  ASSERT_EQ(back.size(), data.eval.size());
  EXPECT_EQ(back[1].relevant, data.eval[1].relevant);
}

TEST(Synthetic, CountsGroupsAndDeterminism) {
  const auto a = generate_synthetic(11, 10, 3), b = generate_synthetic(11, 10, 3);
  EXPECT_EQ(a.corpus.size(), 30u);
  EXPECT_EQ(a.eval.size(), 10u);
  for (std::size_t i = 0; i < a.corpus.size(); ++i) {
    EXPECT_EQ(a.corpus.records[i].question, b.corpus.records[i].question);
    EXPECT_EQ(a.corpus.records[i].answer, b.corpus.records[i].answer);
  }
  for (const auto& q : a.eval) {
    ASSERT_EQ(q.relevant.size(), 3u);
    EXPECT_EQ(a.corpus.group_of(q.relevant[0]).size(), 3u);
    EXPECT_FALSE(a.corpus.contains(q.qid));
  }
  const auto& labels = category_labels();
  for (const auto& r : a.corpus.records) {
    EXPECT_NE(std::find(labels.begin(), labels.end(), r.category), labels.end());
  }
  EXPECT_NE(generate_synthetic(12, 10, 3).corpus.records[0].question, a.corpus.records[0].question);
  EXPECT_THROW(generate_synthetic(1, 1, 3), ConfigError);
}
