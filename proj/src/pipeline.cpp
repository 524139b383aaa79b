#include "pfr/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "pfr/bm25.hpp"
#include "pfr/checkpoint.hpp"
#include "pfr/encoder.hpp"
#include "pfr/error.hpp"
#include "pfr/finetune.hpp"
#include "pfr/log.hpp"
#include "pfr/pretrain.hpp"
#include "pfr/rerank.hpp"
#include "pfr/text.hpp"

namespace fs = std::filesystem;

namespace pfr {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Fixed offsets keep every stage's randomness independent of the others.
enum SeedSlot : std::uint64_t {
  kEncoderInit = 1,
  kHeadsInit = 2,
  kPretrainStream = 3,
  kFinetuneStream = 4,
  kNegativeSampling = 5,
  kRerankInit = 6,
  kRerankStream = 7,
};

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct Base {
  Corpus corpus;
  Vocab vocab;
  QaTokens tokens;
};

Base load_base(const fs::path& corpus_path, const fs::path& vocab_path) {
  Base b;
  b.corpus = ingest(corpus_path);
  b.vocab = Vocab::load(vocab_path);
  for (const auto& r : b.corpus.records) {
    b.tokens.add(r.id, tokenize(b.vocab, r.question), tokenize(b.vocab, r.answer));
  }
  return b;
}

EncoderConfig encoder_config(const RunConfig& config, const Vocab& vocab) {
  EncoderConfig e = config.encoder;
  e.vocab_size = vocab.size();
  return e;
}

class TsvLog {
 public:
  TsvLog(const fs::path& p, const std::string& header) : out_(p, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IngestionError("cannot write " + p.string());
    out_ << header << '\n';
  }
  void row(std::initializer_list<std::string> cells) {
    bool first = true;
    for (const auto& c : cells) {
      out_ << (first ? "" : "\t") << c;
      first = false;
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

void progress(const std::string& stage, std::size_t step, std::size_t total, double loss) {
  if (step == 0 || (step + 1) % 25 == 0 || step + 1 == total) {
    log::info(stage + " step " + std::to_string(step + 1) + "/" + std::to_string(total) + " loss " + num(loss));
  }
}

std::uint64_t sampling_seed(std::uint64_t seed, std::size_t record) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (record + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Candidates {
  std::vector<std::string> ids;  // without the query
  std::vector<double> scores;
};

Candidates bm25_candidates(const InvertedIndex& index, const std::string& qid, const TokenSequence& query,
                           std::size_t k) {
  Candidates c;
  for (const auto& hit : index.retrieve_topk(query, k)) {
    if (c.ids.size() + 1 == k) break;
    if (index.id(hit.doc) == qid) continue;
    c.ids.push_back(index.id(hit.doc));
    c.scores.push_back(hit.score);
  }
  return c;
}

}  // namespace

std::string git_blob_hash(const fs::path& path) {
  const std::string content = read_file(path);
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IngestionError("sha1 failed for " + path.string());
  }
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

Pipeline::Pipeline(RunConfig config, fs::path out) : config_(std::move(config)), out_(out.lexically_normal()) {
  if (!out_.has_filename()) out_ = out_.parent_path();
  fs::create_directories(out_);
}

fs::path Pipeline::require(const char* name, const char* producer) const {
  const fs::path p = path(name);
  if (!fs::exists(p)) {
    throw ConfigError("missing prerequisite artifact " + p.string() + " (produced by `pfr " + producer + "`)");
  }
  return p;
}

void Pipeline::write_manifest(const std::string& command, const std::vector<fs::path>& inputs,
                              const std::vector<fs::path>& outputs) const {
  ordered_json m;
  m["command"] = command;
  m["seed"] = config_.seed;
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : config_.echo()) cfg[k] = v;
  m["config"] = cfg;
  auto entries = [&](const std::vector<fs::path>& files) {
    ordered_json list = ordered_json::array();
    for (const auto& f : files) {
      // Files inside the output directory are recorded by name so a manifest
      // can be replayed into a different directory.
      const bool local = f.parent_path() == out_;
      list.push_back(ordered_json{{"path", local ? f.filename().string() : f.string()},
                                  {"local", local},
                                  {"sha1", git_blob_hash(f)}});
    }
    return list;
  };
  m["inputs"] = entries(inputs);
  m["artifacts"] = entries(outputs);
  std::ofstream out(out_ / ("manifest." + command + ".json"), std::ios::binary | std::ios::trunc);
  out << m.dump(2) << '\n';
}

void Pipeline::generate() {
  std::vector<fs::path> inputs;
  if (config_.corpus_path.empty() != config_.eval_path.empty()) {
    throw ConfigError("corpus.path and eval.path must be given together (or both left empty for synthetic data)");
  }
  Corpus corpus;
  std::vector<EvalQuery> eval;
  if (config_.corpus_path.empty()) {
    auto data = generate_synthetic(config_.seed, config_.synthetic_groups, config_.synthetic_paraphrases,
                                   config_.synthetic);
    corpus = std::move(data.corpus);
    eval = std::move(data.eval);
    log::info("generate: synthetic corpus of " + std::to_string(corpus.size()) + " records, " +
              std::to_string(eval.size()) + " eval queries");
  } else {
    inputs = {fs::absolute(config_.corpus_path), fs::absolute(config_.eval_path)};
    corpus = ingest(config_.corpus_path);
    eval = read_eval_set(config_.eval_path);
    log::info("generate: ingested " + std::to_string(corpus.size()) + " records");
  }
  validate_eval_set(corpus, eval);
  write_corpus(path(artifact::kCorpus), corpus);
  write_eval_set(path(artifact::kEvalSet), eval);
  write_manifest("generate", inputs, {path(artifact::kCorpus), path(artifact::kEvalSet)});
}

void Pipeline::index() {
  const fs::path corpus_path = require(artifact::kCorpus, "generate");
  const Corpus corpus = ingest(corpus_path);
  std::vector<std::string> texts;
  for (const auto& r : corpus.records) {
    texts.push_back(r.question);
    texts.push_back(r.answer);
  }
  const Vocab vocab = Vocab::build(texts, config_.vocab_min_freq, config_.vocab_max_size);
  vocab.save(path(artifact::kVocab));
  std::vector<std::pair<std::string, TokenSequence>> questions, answers;
  for (const auto& r : corpus.records) {
    questions.emplace_back(r.id, tokenize(vocab, r.question));
    answers.emplace_back(r.id, tokenize(vocab, r.answer));
  }
  InvertedIndex::build(questions, config_.bm25).save(path(artifact::kQuestionIndex));
  InvertedIndex::build(answers, config_.bm25).save(path(artifact::kAnswerIndex));
  log::info("index: vocabulary " + std::to_string(vocab.size()) + ", " + std::to_string(corpus.size()) +
            " questions and answers indexed");
  write_manifest("index", {corpus_path},
                 {path(artifact::kVocab), path(artifact::kQuestionIndex), path(artifact::kAnswerIndex)});
}

void Pipeline::pretrain() {
  const fs::path corpus_path = require(artifact::kCorpus, "generate");
  const fs::path vocab_path = require(artifact::kVocab, "index");
  const Base base = load_base(corpus_path, vocab_path);

  // Questions and answers are separate documents.
  std::vector<TokenSequence> documents = base.tokens.questions;
  documents.insert(documents.end(), base.tokens.answers.begin(), base.tokens.answers.end());
  DualEncoderModel encoder(encoder_config(config_, base.vocab), config_.seed + kEncoderInit);
  ScpModel model(encoder, config_.seed + kHeadsInit);
  PretrainConfig pc = config_.pretrain;
  pc.seed = config_.seed + kPretrainStream;
  auto items = build_pretrain_items(documents, sentence_terminals(base.vocab), pc.max_span_len);
  std::size_t paired = 0;
  for (const auto& it : items) paired += it.second.has_value();
  log::info("pretrain: " + std::to_string(items.size()) + " items (" + std::to_string(paired) + " span pairs)");

  Pretrainer trainer(model, std::move(items), pc);
  TsvLog tsv(path(artifact::kPretrainLog), "step\tlr\tself_loss\tcontext_loss\ttotal");
  trainer.run([&](const PretrainStepLog& s) {
    tsv.row({std::to_string(s.step), num(s.lr), num(s.self_loss), num(s.context_loss), num(s.total)});
    progress("pretrain", s.step, pc.steps, s.total);
  });
  save_checkpoint(path(artifact::kPretrained), encoder.params().entries());
  save_checkpoint(path(artifact::kPretrainState), trainer.full_state());
  write_manifest("pretrain", {corpus_path, vocab_path},
                 {path(artifact::kPretrained), path(artifact::kPretrainState), path(artifact::kPretrainLog)});
}

void Pipeline::finetune() {
  const fs::path corpus_path = require(artifact::kCorpus, "generate");
  const fs::path vocab_path = require(artifact::kVocab, "index");
  const fs::path answers_path = require(artifact::kAnswerIndex, "index");
  const fs::path encoder_path = require(artifact::kPretrained, "pretrain");
  const Base base = load_base(corpus_path, vocab_path);
  const InvertedIndex answers = InvertedIndex::load(answers_path);

  DualEncoderModel encoder(encoder_config(config_, base.vocab), config_.seed + kEncoderInit);
  load_into(encoder.params(), encoder_path);

  std::vector<fs::path> inputs = {corpus_path, vocab_path, answers_path, encoder_path};
  std::vector<TrainingPair> pairs;
  if (!config_.pairs_path.empty()) {
    // Supplied pairs keep their negatives; only those without any are mined.
    const fs::path pairs_path = fs::absolute(config_.pairs_path);
    inputs.push_back(pairs_path);
    pairs = read_training_pairs(pairs_path);
    std::vector<TrainingPair> to_mine;
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      base.tokens.at(pairs[i].qid);
      for (const auto& id : pairs[i].positives) base.tokens.at(id);
      for (const auto& id : pairs[i].negatives) base.tokens.at(id);
      if (pairs[i].negatives.empty()) {
        to_mine.push_back(pairs[i]);
        slots.push_back(i);
      }
    }
    if (config_.finetune.mine_k > 0 && !to_mine.empty()) {
      attach_mined_negatives(encoder, base.tokens, to_mine, config_.finetune.mine_k);
      for (std::size_t i = 0; i < slots.size(); ++i) pairs[slots[i]] = std::move(to_mine[i]);
    }
  } else {
    // Positives: the answers of the record's group. Negatives: a sample of the
    // non-relevant answers in the BM25 pool, then the encoder's hard negatives.
    for (std::size_t i = 0; i < base.corpus.size(); ++i) {
      const auto& r = base.corpus.records[i];
      TrainingPair pair{r.id, base.corpus.group_of(r.id), {}};
      const std::unordered_set<std::string> positives(pair.positives.begin(), pair.positives.end());
      std::vector<std::string> pool;
      for (const auto& hit : answers.retrieve_topk(base.tokens.questions[i], config_.bm25_pool)) {
        if (!positives.count(answers.id(hit.doc))) pool.push_back(answers.id(hit.doc));
      }
      Rng rng(sampling_seed(config_.seed + kNegativeSampling, i));
      const std::size_t take = std::min(pool.size(), config_.bm25_negatives * pair.positives.size());
      for (std::size_t k = 0; k < take; ++k) std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
      pool.resize(take);
      pair.negatives = std::move(pool);
      pairs.push_back(std::move(pair));
    }
    if (config_.finetune.mine_k > 0) attach_mined_negatives(encoder, base.tokens, pairs, config_.finetune.mine_k);
  }

  FinetuneConfig fc = config_.finetune;
  fc.seed = config_.seed + kFinetuneStream;
  Finetuner trainer(encoder, base.tokens, std::move(pairs), fc);
  TsvLog tsv(path(artifact::kFinetuneLog), "step\tlr\tloss");
  trainer.run([&](const FinetuneStepLog& s) {
    tsv.row({std::to_string(s.step), num(s.lr), num(s.loss)});
    progress("finetune", s.step, fc.steps, s.loss);
  });
  save_checkpoint(path(artifact::kFinetuned), encoder.params().entries());
  write_manifest("finetune", inputs, {path(artifact::kFinetuned), path(artifact::kFinetuneLog)});
}

void Pipeline::rerank_train() {
  const fs::path corpus_path = require(artifact::kCorpus, "generate");
  const fs::path vocab_path = require(artifact::kVocab, "index");
  const fs::path questions_path = require(artifact::kQuestionIndex, "index");
  const fs::path encoder_path = require(artifact::kFinetuned, "finetune");
  const Base base = load_base(corpus_path, vocab_path);
  const InvertedIndex questions = InvertedIndex::load(questions_path);

  DualEncoderModel encoder(encoder_config(config_, base.vocab), config_.seed + kEncoderInit);
  load_into(encoder.params(), encoder_path);
  const QuestionBank bank = QuestionBank::build(encoder, base.tokens);

  const RerankConfig& rc = config_.rerank;
  std::vector<RerankExample> examples;
  for (std::size_t i = 0; i < base.corpus.size(); ++i) {
    const auto& r = base.corpus.records[i];
    const CandidateList list =
        assemble_candidates(r.id, base.tokens.questions[i], questions, bank, encoder, rc.candidates);
    RerankLabels labels;
    if (rc.gold_labels) {
      const auto group = base.corpus.group_of(r.id);
      const std::unordered_set<std::string> relevant(group.begin(), group.end());
      labels = gold_labels(list, [&](const std::string& id) { return relevant.count(id) > 0; });
    } else {
      labels = threshold_labels(list, rc.tau);
    }
    examples.push_back(RerankExample{compute_affinity(list.embeddings, rc.anchors, rc.anchors_include_query),
                                     std::move(labels)});
  }
  RerankConfig model_config = rc;
  model_config.seed = config_.seed + kRerankStream;
  RerankerModel model(model_config, config_.seed + kRerankInit);
  RerankTrainer trainer(model, std::move(examples));
  log::info("rerank: " + std::to_string(trainer.usable()) + " training lists, " + std::to_string(trainer.skipped()) +
            " skipped");
  TsvLog tsv(path(artifact::kRerankLog), "step\tlr\tloss");
  trainer.run([&](const RerankStepLog& s) {
    tsv.row({std::to_string(s.step), num(s.lr), num(s.loss)});
    progress("rerank", s.step, rc.steps, s.loss);
  });
  save_checkpoint(path(artifact::kReranker), model.params().entries());
  write_manifest("rerank-train", {corpus_path, vocab_path, questions_path, encoder_path},
                 {path(artifact::kReranker), path(artifact::kRerankLog)});
}

std::vector<EvalReport> Pipeline::eval() {
  const fs::path corpus_path = require(artifact::kCorpus, "generate");
  const fs::path eval_path = require(artifact::kEvalSet, "generate");
  const fs::path vocab_path = require(artifact::kVocab, "index");
  const fs::path questions_path = require(artifact::kQuestionIndex, "index");
  std::vector<fs::path> inputs = {corpus_path, eval_path, vocab_path, questions_path};
  const auto& stages = config_.eval_stages;
  auto wants = [&](const char* s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); };
  if (wants("pretrained")) inputs.push_back(require(artifact::kPretrained, "pretrain"));
  if (wants("finetuned") || wants("reranked")) inputs.push_back(require(artifact::kFinetuned, "finetune"));
  if (wants("reranked")) inputs.push_back(require(artifact::kReranker, "rerank-train"));

  const Base base = load_base(corpus_path, vocab_path);
  const InvertedIndex questions = InvertedIndex::load(questions_path);
  const std::vector<EvalQuery> queries = read_eval_set(eval_path);
  validate_eval_set(base.corpus, queries);
  const std::size_t k = config_.rerank.candidates;
  std::vector<TokenSequence> query_tokens;
  std::unordered_map<std::string, std::size_t> query_row;
  for (const auto& q : queries) {
    query_row.emplace(q.qid, query_tokens.size());
    query_tokens.push_back(tokenize(base.vocab, q.text));
  }
  const EncoderConfig ecfg = encoder_config(config_, base.vocab);

  std::vector<EvalReport> reports;
  for (const auto& stage : stages) {
    std::function<Ranking(const EvalQuery&)> ranker;
    std::shared_ptr<DualEncoderModel> encoder;
    std::shared_ptr<QuestionBank> bank;
    std::shared_ptr<RerankerModel> reranker;
    if (stage == "bm25") {
      ranker = [&](const EvalQuery& q) {
        auto c = bm25_candidates(questions, q.qid, query_tokens[query_row.at(q.qid)], k);
        return Ranking{std::move(c.ids), std::move(c.scores)};
      };
    } else {
      encoder = std::make_shared<DualEncoderModel>(ecfg, config_.seed + kEncoderInit);
      if (stage == "pretrained") load_into(encoder->params(), path(artifact::kPretrained));
      if (stage == "finetuned" || stage == "reranked") load_into(encoder->params(), path(artifact::kFinetuned));
      bank = std::make_shared<QuestionBank>(QuestionBank::build(*encoder, base.tokens));
      if (stage == "reranked") {
        RerankConfig rc = config_.rerank;
        rc.seed = config_.seed + kRerankStream;
        reranker = std::make_shared<RerankerModel>(rc, config_.seed + kRerankInit);
        load_into(reranker->params(), path(artifact::kReranker));
      }
      ranker = [&, encoder, bank, reranker](const EvalQuery& q) {
        const CandidateList list =
            assemble_candidates(q.qid, query_tokens[query_row.at(q.qid)], questions, *bank, *encoder, k);
        const auto ranked = reranker ? rerank(*reranker, list) : rank_by_embedding(list);
        Ranking r;
        for (const auto& c : ranked) {
          r.ids.push_back(c.id);
          r.scores.push_back(c.score);
        }
        return r;
      };
    }
    reports.push_back(evaluate(stage, queries, ranker));
    log::info("eval: " + stage + " MRR@16 " + num(reports.back().mrr));
  }

  ordered_json report;
  report["candidates"] = k;
  report["stages"] = ordered_json::array();
  for (const auto& r : reports) report["stages"].push_back(r.to_json());
  {
    std::ofstream out(path(artifact::kReport), std::ios::binary | std::ios::trunc);
    out << report.dump(2) << '\n';
  }
  {
    std::ofstream out(path(artifact::kRankings), std::ios::binary | std::ios::trunc);
    for (const auto& r : reports) {
      for (const auto& row : r.rows) {
        ordered_json line;
        line["stage"] = r.stage;
        line["qid"] = row.qid;
        line["ranked"] = ordered_json::array();
        for (std::size_t i = 0; i < row.ranked.size(); ++i) {
          line["ranked"].push_back(ordered_json{{"id", row.ranked[i]}, {"score", row.scores[i]}});
        }
        out << line.dump() << '\n';
      }
    }
  }
  write_manifest("eval", inputs, {path(artifact::kReport), path(artifact::kRankings)});
  return reports;
}

std::vector<QueryHit> Pipeline::query(const std::string& text, const std::string& stage) const {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw UsageError("query: empty query text");
  static const char* kStages[] = {"bm25", "random", "pretrained", "finetuned", "reranked"};
  if (std::find(std::begin(kStages), std::end(kStages), stage) == std::end(kStages)) {
    throw UsageError("query: unknown stage \"" + stage + "\"");
  }
  const fs::path corpus_path = require(artifact::kCorpus, "generate");
  const fs::path vocab_path = require(artifact::kVocab, "index");
  const fs::path questions_path = require(artifact::kQuestionIndex, "index");
  const Base base = load_base(corpus_path, vocab_path);
  const InvertedIndex questions = InvertedIndex::load(questions_path);
  const TokenSequence tokens = tokenize(base.vocab, text);
  const std::size_t k = config_.rerank.candidates;
  const std::string qid = "<query>";

  std::vector<std::pair<std::string, double>> ranked;
  if (stage == "bm25") {
    const auto c = bm25_candidates(questions, qid, tokens, k);
    for (std::size_t i = 0; i < c.ids.size(); ++i) ranked.emplace_back(c.ids[i], c.scores[i]);
  } else {
    DualEncoderModel encoder(encoder_config(config_, base.vocab), config_.seed + kEncoderInit);
    if (stage == "pretrained") load_into(encoder.params(), require(artifact::kPretrained, "pretrain"));
    if (stage == "finetuned" || stage == "reranked") {
      load_into(encoder.params(), require(artifact::kFinetuned, "finetune"));
    }
    const QuestionBank bank = QuestionBank::build(encoder, base.tokens);
    const CandidateList list = assemble_candidates(qid, tokens, questions, bank, encoder, k);
    std::vector<RankedCandidate> out;
    if (stage == "reranked") {
      RerankConfig rc = config_.rerank;
      rc.seed = config_.seed + kRerankStream;
      RerankerModel reranker(rc, config_.seed + kRerankInit);
      load_into(reranker.params(), require(artifact::kReranker, "rerank-train"));
      out = rerank(reranker, list);
    } else {
      out = rank_by_embedding(list);
    }
    for (const auto& c : out) ranked.emplace_back(c.id, c.score);
  }
  std::vector<QueryHit> hits;
  for (const auto& [id, score] : ranked) {
    const auto& r = base.corpus.at(id);
    hits.push_back(QueryHit{id, score, r.question, r.answer});
  }
  return hits;
}

std::vector<EvalReport> Pipeline::run_all() {
  generate();
  index();
  pretrain();
  finetune();
  rerank_train();
  auto reports = eval();
  std::vector<fs::path> inputs;
  if (!config_.corpus_path.empty()) inputs = {fs::absolute(config_.corpus_path), fs::absolute(config_.eval_path)};
  std::vector<fs::path> outputs;
  for (const char* name : {artifact::kCorpus, artifact::kEvalSet, artifact::kVocab, artifact::kQuestionIndex,
                           artifact::kAnswerIndex, artifact::kPretrained, artifact::kPretrainState, artifact::kPretrainLog, artifact::kFinetuned,
                           artifact::kFinetuneLog, artifact::kReranker, artifact::kRerankLog, artifact::kReport,
                           artifact::kRankings}) {
    outputs.push_back(path(name));
  }
  write_manifest("run", inputs, outputs);
  return reports;
}

void run_command(Pipeline& pipeline, const std::string& command) {
  if (command == "generate") pipeline.generate();
  else if (command == "index") pipeline.index();
  else if (command == "pretrain") pipeline.pretrain();
  else if (command == "finetune") pipeline.finetune();
  else if (command == "rerank-train") pipeline.rerank_train();
  else if (command == "eval") pipeline.eval();
  else if (command == "run") pipeline.run_all();
  else throw UsageError("unknown command \"" + command + "\"");
}

void Pipeline::replay(const fs::path& manifest_path, const fs::path& out) {
  const json m = json::parse(read_file(manifest_path), nullptr, false);
  if (m.is_discarded() || !m.is_object()) throw IngestionError(manifest_path.string() + ": malformed manifest");
  RunConfig config;
  for (const auto& [key, value] : m.at("config").items()) config.set(key, value.get<std::string>());
  Pipeline pipeline(config, out);
  for (const auto& in : m.at("inputs")) {
    const fs::path p = in.at("local").get<bool>() ? out / in.at("path").get<std::string>()
                                                  : fs::path(in.at("path").get<std::string>());
    if (!fs::exists(p)) throw ConfigError("replay: missing input " + p.string());
    if (git_blob_hash(p) != in.at("sha1").get<std::string>()) {
      throw IngestionError("replay: input " + p.string() + " differs from the manifest");
    }
  }
  const std::string command = m.at("command").get<std::string>();
  run_command(pipeline, command);
  std::vector<std::string> mismatched;
  for (const auto& a : m.at("artifacts")) {
    const fs::path p = out / a.at("path").get<std::string>();
    if (!fs::exists(p) || git_blob_hash(p) != a.at("sha1").get<std::string>()) mismatched.push_back(p.string());
  }
  if (!mismatched.empty()) {
    std::string list;
    for (const auto& s : mismatched) list += " " + s;
    throw IngestionError("replay: artifacts not reproduced:" + list);
  }
  log::info("replay: " + command + " reproduced " + std::to_string(m.at("artifacts").size()) + " artifacts");
}

}  // namespace pfr
