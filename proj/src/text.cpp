#include "pfr/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

#include "pfr/error.hpp"
#include "pfr/random.hpp"

namespace pfr {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&]() {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (ch < 0x80 && std::isspace(ch)) {
      flush();
    } else if (ch < 0x80 && std::ispunct(ch)) {
      flush();
      words.emplace_back(1, raw);
    } else {
      current.push_back(ch < 0x80 ? static_cast<char>(std::tolower(ch)) : raw);
    }
  }
  flush();
  return words;
}

Vocab::Vocab() {
  for (const char* reserved : {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"}) push(reserved);
}

void Vocab::push(std::string token) {
  index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocab Vocab::build(const std::vector<std::string>& corpus, std::size_t min_freq,
                   std::size_t max_size) {
  if (corpus.empty()) throw IngestionError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus) {
    for (auto& word : split_words(text)) ++counts[std::move(word)];
  }
  if (counts.empty()) throw IngestionError("build_vocab: corpus contains no tokens");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  for (auto& [token, count] : ranked) {
    if (vocab.size() >= max_size) break;
    if (count < min_freq) continue;
    if (vocab.index_.count(token)) continue;
    vocab.push(token);
  }
  return vocab;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("vocab: cannot open " + path.string());
  Vocab vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || vocab.index_.count(line)) {
      throw IngestionError("vocab: bad or duplicate token on line " + std::to_string(line_no));
    }
    vocab.push(line);
  }
  return vocab;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("vocab: cannot write " + path.string());
  for (std::size_t i = special::kCount; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

TokenId Vocab::id(std::string_view token) const { return find(token).value_or(special::kUnk); }

std::optional<TokenId> Vocab::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw ContractError("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

TokenSequence Vocab::encode(std::string_view text) const {
  TokenSequence ids;
  for (const auto& word : split_words(text)) ids.push_back(id(word));
  return ids;
}

std::string Vocab::decode(const TokenSequence& ids) const {
  std::string text;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) text.push_back(' ');
    text += token(ids[i]);
  }
  return text;
}

std::vector<TokenId> sentence_terminals(const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const char* mark : {".", "?", "!"}) {
    if (auto id = vocab.find(mark)) ids.push_back(*id);
  }
  return ids;
}

std::vector<Span> segment_spans(const TokenSequence& document, std::span<const TokenId> terminals,
                                std::size_t document_id, std::size_t max_len) {
  if (max_len == 0) throw ContractError("segment_spans: max_len must be positive");
  std::vector<TokenSequence> sentences;
  TokenSequence sentence;
  for (TokenId token : document) {
    sentence.push_back(token);
    if (std::find(terminals.begin(), terminals.end(), token) != terminals.end()) {
      sentences.push_back(std::move(sentence));
      sentence.clear();
    }
  }
  if (!sentence.empty()) sentences.push_back(std::move(sentence));

  std::vector<Span> spans;
  TokenSequence current;
  auto flush = [&]() {
    if (current.empty()) return;
    spans.push_back(Span{std::move(current), document_id, spans.size()});
    current.clear();
  };
  for (const auto& s : sentences) {
    if (current.size() + s.size() <= max_len) {
      current.insert(current.end(), s.begin(), s.end());
      continue;
    }
    flush();
    std::size_t offset = 0;
    while (s.size() - offset > max_len) {
      current.assign(s.begin() + offset, s.begin() + offset + max_len);
      flush();
      offset += max_len;
    }
    current.assign(s.begin() + offset, s.end());
  }
  flush();
  return spans;
}

std::vector<SpanPair> adjacent_pairs(const std::vector<Span>& spans) {
  std::vector<SpanPair> pairs;
  for (std::size_t k = 0; k + 1 < spans.size(); ++k) {
    if (spans[k].document == spans[k + 1].document &&
        spans[k + 1].position == spans[k].position + 1) {
      pairs.push_back(SpanPair{spans[k], spans[k + 1]});
    }
  }
  return pairs;
}

MaskedSpan apply_mask(const TokenSequence& span, double mask_ratio, std::uint64_t seed) {
  if (span.empty()) throw ContractError("apply_mask: empty span");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw ContractError("apply_mask: mask_ratio must lie in (0, 1)");
  }
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(mask_ratio * static_cast<double>(span.size()))));
  std::vector<std::size_t> order(span.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` slots become a uniform sample.
  for (std::size_t i = 0; i < count; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
  MaskedSpan masked;
  masked.positions.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(masked.positions.begin(), masked.positions.end());
  masked.input = span;
  for (std::size_t p : masked.positions) {
    masked.labels.push_back(span[p]);
    masked.input[p] = special::kMask;
  }
  return masked;
}

}  // namespace pfr
