#include "pfr/corpus.hpp"

#include <fstream>
#include <cstdio>
#include <unordered_set>

#include "json.hpp"
#include "pfr/error.hpp"
#include "pfr/random.hpp"

namespace pfr {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string string_field(const json& j, const char* key, bool required, std::size_t line) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw IngestionError("line " + std::to_string(line) + ": missing field \"" + key + "\"");
    return {};
  }
  if (!it->is_string()) throw IngestionError("line " + std::to_string(line) + ": field \"" + key + "\" must be a string");
  return it->get<std::string>();
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error&) {
      throw IngestionError(path.string() + ": line " + std::to_string(line) + ": malformed JSON");
    }
    if (!j.is_object()) throw IngestionError(path.string() + ": line " + std::to_string(line) + ": expected an object");
    f(j, line);
  }
}

void write_lines(const std::filesystem::path& path, const std::vector<ordered_json>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
}

// --- synthetic generator ----------------------------------------------------

const std::vector<std::string> kFunctionWords = {
    "the", "a", "of", "my", "is", "to", "in", "and", "for", "with",
    "on", "about", "by", "from", "that", "this", "it", "be", "was", "under"};
const std::vector<std::string> kQuestionOpeners = {
    "how do i", "what happens if", "can i", "should i", "who decides", "is it legal when", "what about"};
const std::vector<std::string> kAnswerOpeners = {
    "you should", "the law says", "in general", "it depends on", "first check", "usually"};

class WordMaker {
 public:
  explicit WordMaker(Rng& rng) : rng_(rng) {
    for (const auto& w : kFunctionWords) used_.insert(w);
    for (const auto* list : {&kQuestionOpeners, &kAnswerOpeners}) {
      for (const auto& phrase : *list) {
        std::size_t start = 0;
        while (start < phrase.size()) {
          const auto end = phrase.find(' ', start);
          used_.insert(phrase.substr(start, end - start));
          if (end == std::string::npos) break;
          start = end + 1;
        }
      }
    }
  }

  std::string make() {
    static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr"};
    static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
    static const char* codas[] = {"", "", "n", "r", "s", "k", "l"};
    for (;;) {
      std::string w;
      const std::size_t syllables = 2 + rng_.below(2);
      for (std::size_t s = 0; s < syllables; ++s) {
        w += onsets[rng_.below(std::size(onsets))];
        w += vowels[rng_.below(std::size(vowels))];
      }
      w += codas[rng_.below(std::size(codas))];
      if (used_.insert(w).second) return w;
    }
  }

 private:
  Rng& rng_;
  std::unordered_set<std::string> used_;
};

using Concept = std::vector<std::string>;

std::vector<Concept> make_concepts(WordMaker& words, std::size_t count, std::size_t synonyms) {
  std::vector<Concept> out(count);
  for (auto& c : out) {
    for (std::size_t s = 0; s < synonyms; ++s) c.push_back(words.make());
  }
  return out;
}

// Distributes `mentions` over `sentences` sentences, each started by an
// opener and padded with function words.
std::string realise(Rng& rng, std::vector<std::string> mentions, std::size_t sentences,
                    const std::vector<std::string>& openers, const char* final_mark, std::size_t max_filler) {
  rng.shuffle(mentions);
  std::string out;
  const std::size_t per = (mentions.size() + sentences - 1) / sentences;
  for (std::size_t s = 0; s < sentences; ++s) {
    if (!out.empty()) out += ' ';
    out += openers[rng.below(openers.size())];
    const std::size_t begin = std::min(mentions.size(), s * per);
    const std::size_t end = std::min(mentions.size(), begin + per);
    for (std::size_t m = begin; m < end; ++m) {
      const std::size_t filler = rng.below(max_filler + 1);
      for (std::size_t f = 0; f < filler; ++f) out += ' ' + kFunctionWords[rng.below(kFunctionWords.size())];
      out += ' ' + mentions[m];
    }
    out += s + 1 == sentences ? final_mark : " .";
  }
  return out;
}

std::vector<std::size_t> choose(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace

const QaRecord& Corpus::at(const std::string& id) const {
  const auto it = index.find(id);
  if (it == index.end()) throw IngestionError("unknown record id " + id);
  return records[it->second];
}

void Corpus::add(QaRecord record) {
  if (index.count(record.id)) throw IngestionError("duplicate record id " + record.id);
  index.emplace(record.id, records.size());
  records.push_back(std::move(record));
}

std::vector<std::string> Corpus::group_of(const std::string& id) const {
  const auto& r = at(id);
  if (r.group.empty()) return {id};
  std::vector<std::string> out;
  for (const auto& other : records) {
    if (other.group == r.group) out.push_back(other.id);
  }
  return out;
}

Corpus ingest(const std::filesystem::path& path) {
  Corpus corpus;
  for_each_line(path, [&](const json& j, std::size_t line) {
    QaRecord r;
    r.id = string_field(j, "id", true, line);
    r.question = string_field(j, "question", true, line);
    r.answer = string_field(j, "answer", true, line);
    r.category = string_field(j, "category", false, line);
    r.group = string_field(j, "group", false, line);
    if (r.id.empty()) throw IngestionError(path.string() + ": line " + std::to_string(line) + ": empty id");
    if (corpus.contains(r.id)) {
      throw IngestionError(path.string() + ": line " + std::to_string(line) + ": duplicate id " + r.id);
    }
    corpus.add(std::move(r));
  });
  if (corpus.records.empty()) throw IngestionError(path.string() + ": no records");
  return corpus;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::vector<ordered_json> rows;
  for (const auto& r : corpus.records) {
    ordered_json j;
    j["id"] = r.id;
    j["question"] = r.question;
    j["answer"] = r.answer;
    j["category"] = r.category;
    if (!r.group.empty()) j["group"] = r.group;
    rows.push_back(std::move(j));
  }
  write_lines(path, rows);
}

std::vector<EvalQuery> read_eval_set(const std::filesystem::path& path) {
  std::vector<EvalQuery> out;
  for_each_line(path, [&](const json& j, std::size_t line) {
    EvalQuery q;
    q.qid = string_field(j, "qid", true, line);
    q.text = string_field(j, "text", true, line);
    const auto it = j.find("relevant");
    if (it == j.end() || !it->is_array()) {
      throw IngestionError(path.string() + ": line " + std::to_string(line) + ": \"relevant\" must be an array");
    }
    for (const auto& id : *it) {
      if (!id.is_string()) throw IngestionError(path.string() + ": line " + std::to_string(line) + ": relevant ids must be strings");
      q.relevant.push_back(id.get<std::string>());
    }
    out.push_back(std::move(q));
  });
  if (out.empty()) throw IngestionError(path.string() + ": no queries");
  return out;
}

void write_eval_set(const std::filesystem::path& path, const std::vector<EvalQuery>& queries) {
  std::vector<ordered_json> rows;
  for (const auto& q : queries) {
    ordered_json j;
    j["qid"] = q.qid;
    j["text"] = q.text;
    j["relevant"] = q.relevant;
    rows.push_back(std::move(j));
  }
  write_lines(path, rows);
}

void validate_eval_set(const Corpus& corpus, const std::vector<EvalQuery>& queries) {
  for (const auto& q : queries) {
    if (q.relevant.empty()) throw IngestionError("eval query " + q.qid + " has no relevant ids");
    for (const auto& id : q.relevant) {
      if (!corpus.contains(id)) throw IngestionError("eval query " + q.qid + " names unknown id " + id);
    }
  }
}

SyntheticData generate_synthetic(std::uint64_t seed, std::size_t n_groups, std::size_t paraphrases,
                                 const SyntheticProfile& profile) {
  if (n_groups < 2) throw ConfigError("generate_synthetic: need at least 2 groups");
  if (paraphrases < 1) throw ConfigError("generate_synthetic: need at least 1 paraphrase per group");
  if (profile.synonyms < 1) throw ConfigError("generate_synthetic: need at least 1 synonym per concept");
  Rng rng(seed);
  WordMaker words(rng);
  const auto& categories = category_labels();

  std::vector<std::vector<Concept>> shared(categories.size());
  for (auto& c : shared) c = make_concepts(words, profile.category_concepts, profile.synonyms);

  struct Group {
    std::size_t category;
    std::vector<Concept> question;
    std::vector<Concept> answer;
  };
  std::vector<Group> groups;
  for (std::size_t g = 0; g < n_groups; ++g) {
    groups.push_back(Group{g % categories.size(), make_concepts(words, profile.specific_concepts, profile.synonyms),
                           make_concepts(words, profile.answer_concepts, profile.synonyms)});
  }

  auto pick = [&](const Concept& c) { return c[rng.below(c.size())]; };
  auto category_mentions = [&](const Group& g, std::size_t count) {
    std::vector<std::string> out;
    for (std::size_t i : choose(rng, shared[g.category].size(), count)) out.push_back(pick(shared[g.category][i]));
    return out;
  };
  auto question_text = [&](const Group& g) {
    std::vector<std::string> mentions;
    for (const auto& c : g.question) mentions.push_back(pick(c));
    for (auto& w : category_mentions(g, profile.category_mentions)) mentions.push_back(std::move(w));
    return realise(rng, std::move(mentions), 1 + rng.below(2), kQuestionOpeners, " ?", profile.max_filler);
  };
  auto answer_text = [&](const Group& g) {
    std::vector<std::string> mentions;
    for (const auto& c : g.question) mentions.push_back(pick(c));
    for (const auto& c : g.answer) mentions.push_back(pick(c));
    for (auto& w : category_mentions(g, profile.answer_category_mentions)) mentions.push_back(std::move(w));
    return realise(rng, std::move(mentions), 2 + rng.below(2), kAnswerOpeners, " .", profile.max_filler);
  };

  SyntheticData data;
  std::vector<QaRecord> records;
  char buf[32];
  for (std::size_t g = 0; g < n_groups; ++g) {
    std::snprintf(buf, sizeof buf, "g%04zu", g);
    const std::string group_id = buf;
    EvalQuery query;
    query.qid = "q" + group_id.substr(1);
    for (std::size_t p = 0; p < paraphrases; ++p) {
      QaRecord r;
      r.id = group_id + "-" + std::to_string(p);
      r.question = question_text(groups[g]);
      r.answer = answer_text(groups[g]);
      r.category = categories[groups[g].category];
      r.group = group_id;
      query.relevant.push_back(r.id);
      records.push_back(std::move(r));
    }
    query.text = question_text(groups[g]);
    data.eval.push_back(std::move(query));
  }
  // Interleave groups so insertion order (the BM25 tie-break) carries no
  // group signal.
  rng.shuffle(records);
  for (auto& r : records) data.corpus.add(std::move(r));
  return data;
}

}  // namespace pfr
