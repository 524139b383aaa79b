#include "pfr/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "pfr/error.hpp"

namespace pfr {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError(key + ": cannot parse \"" + value + "\"");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true or false, got \"" + value + "\"");
}

}  // namespace

std::vector<RunConfig::Field> RunConfig::fields() {
  std::vector<Field> out;
  auto num = [&](std::string key, auto& ref) {
    using T = std::remove_reference_t<decltype(ref)>;
    out.push_back(Field{key,
                        [&ref] {
                          if constexpr (std::is_floating_point_v<T>) return format(ref);
                          else return std::to_string(ref);
                        },
                        [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); }});
  };
  auto flag = [&](std::string key, bool& ref) {
    out.push_back(Field{key, [&ref] { return std::string(ref ? "true" : "false"); },
                        [&ref, key](const std::string& v) { ref = parse_bool(key, v); }});
  };
  auto text = [&](std::string key, std::string& ref) {
    out.push_back(Field{key, [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }});
  };

  num("seed", seed);
  text("corpus.path", corpus_path);
  text("eval.path", eval_path);
  num("synthetic.groups", synthetic_groups);
  num("synthetic.paraphrases", synthetic_paraphrases);
  num("synthetic.synonyms", synthetic.synonyms);
  num("synthetic.specific_concepts", synthetic.specific_concepts);
  num("synthetic.answer_concepts", synthetic.answer_concepts);
  num("synthetic.category_concepts", synthetic.category_concepts);
  num("synthetic.category_mentions", synthetic.category_mentions);
  num("synthetic.answer_category_mentions", synthetic.answer_category_mentions);
  num("synthetic.max_filler", synthetic.max_filler);

  num("vocab.min_freq", vocab_min_freq);
  num("vocab.max_size", vocab_max_size);
  num("bm25.k1", bm25.k1);
  num("bm25.b", bm25.b);

  num("encoder.layers", encoder.layers);
  num("encoder.heads", encoder.heads);
  num("encoder.hidden", encoder.hidden);
  num("encoder.feedforward", encoder.feedforward);
  flag("encoder.tied", encoder.tied);
  num("encoder.init_std", encoder.init_std);

  num("pretrain.lr", pretrain.lr);
  num("pretrain.warmup", pretrain.warmup_ratio);
  num("pretrain.weight_decay", pretrain.weight_decay);
  num("pretrain.batch_size", pretrain.batch_size);
  num("pretrain.steps", pretrain.steps);
  num("pretrain.encoder_mask", pretrain.encoder_mask_ratio);
  num("pretrain.decoder_mask", pretrain.decoder_mask_ratio);
  num("pretrain.self_weight", pretrain.self_weight);
  num("pretrain.context_weight", pretrain.context_weight);
  num("pretrain.max_span_len", pretrain.max_span_len);

  num("finetune.lr", finetune.lr);
  num("finetune.warmup", finetune.warmup_ratio);
  num("finetune.weight_decay", finetune.weight_decay);
  num("finetune.batch_size", finetune.batch_size);
  num("finetune.steps", finetune.steps);
  num("finetune.gamma", finetune.circle.gamma);
  num("finetune.margin", finetune.circle.margin);
  num("finetune.mine_k", finetune.mine_k);
  num("finetune.remine_every", finetune.remine_every);
  text("finetune.pairs", pairs_path);
  num("finetune.bm25_negatives", bm25_negatives);
  num("finetune.bm25_pool", bm25_pool);

  num("rerank.candidates", rerank.candidates);
  num("rerank.anchors", rerank.anchors);
  num("rerank.projected", rerank.projected);
  num("rerank.layers", rerank.layers);
  num("rerank.heads", rerank.heads);
  num("rerank.feedforward", rerank.feedforward);
  flag("rerank.positions", rerank.positions);
  flag("rerank.anchors_include_query", rerank.anchors_include_query);
  num("rerank.init_std", rerank.init_std);
  num("rerank.gamma", rerank.circle.gamma);
  num("rerank.margin", rerank.circle.margin);
  num("rerank.lambda", rerank.lambda);
  flag("rerank.unsquared_norm", rerank.unsquared_norm);
  num("rerank.tau", rerank.tau);
  flag("rerank.gold_labels", rerank.gold_labels);
  num("rerank.lr", rerank.lr);
  num("rerank.momentum", rerank.momentum);
  num("rerank.weight_decay", rerank.weight_decay);
  num("rerank.batch_size", rerank.batch_size);
  num("rerank.steps", rerank.steps);

  out.push_back(Field{"eval.stages",
                      [this] {
                        std::string s;
                        for (const auto& st : eval_stages) s += (s.empty() ? "" : ",") + st;
                        return s;
                      },
                      [this](const std::string& v) {
                        std::vector<std::string> stages;
                        std::stringstream in(v);
                        std::string item;
                        while (std::getline(in, item, ',')) {
                          item = trim(item);
                          if (item != "bm25" && item != "random" && item != "pretrained" && item != "finetuned" &&
                              item != "reranked") {
                            throw ConfigError("eval.stages: unknown stage \"" + item + "\"");
                          }
                          stages.push_back(item);
                        }
                        if (stages.empty()) throw ConfigError("eval.stages: no stages");
                        eval_stages = std::move(stages);
                      }});
  return out;
}

std::vector<RunConfig::Field> RunConfig::fields() const { return const_cast<RunConfig*>(this)->fields(); }

void RunConfig::set(const std::string& key, const std::string& value) {
  for (auto& f : fields()) {
    if (f.key == key) {
      f.put(value);
      return;
    }
  }
  throw ConfigError("unknown configuration key \"" + key + "\"");
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig config;
  std::stringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
    try {
      config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

std::vector<std::pair<std::string, std::string>> RunConfig::echo() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get());
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : echo()) out += k + "=" + v + "\n";
  return out;
}

}  // namespace pfr
