#include "pfr/bm25.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "pfr/error.hpp"

namespace pfr {
namespace {

constexpr char kMagic[4] = {'P', 'F', 'R', 'B'};
constexpr std::uint32_t kVersion = 1;
const std::vector<Posting> kNoPostings;

void put_varint(std::string& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<char>((v & 0x7f) | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<char>(v));
}

void put_fixed(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const auto byte = static_cast<unsigned char>(take(1)[0]);
      v |= static_cast<std::uint64_t>(byte & 0x7f) << shift;
      if (!(byte & 0x80)) return v;
    }
    throw IngestionError("bm25 index: malformed varint");
  }

  std::uint64_t fixed(int bytes) {
    const char* p = take(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }

  const char* take(std::size_t n) {
    if (pos_ + n > data_.size()) throw IngestionError("bm25 index: truncated file");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

InvertedIndex InvertedIndex::build(const std::vector<std::pair<std::string, TokenSequence>>& docs,
                                   Bm25Params params) {
  if (docs.empty()) throw IngestionError("bm25: empty corpus");
  InvertedIndex index;
  index.params_ = params;
  for (const auto& [id, tokens] : docs) {
    if (index.by_id_.count(id)) throw IngestionError("bm25: duplicate document id " + id);
    const auto doc = static_cast<std::uint32_t>(index.ids_.size());
    index.by_id_.emplace(id, doc);
    index.ids_.push_back(id);
    index.lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
    std::map<TokenId, std::uint32_t> counts;
    for (TokenId t : tokens) ++counts[t];
    for (const auto& [term, tf] : counts) index.postings_[term].push_back(Posting{doc, tf});
  }
  index.finalize();
  return index;
}

void InvertedIndex::finalize() {
  double total = 0.0;
  for (auto len : lengths_) total += len;
  avgdl_ = ids_.empty() ? 0.0 : total / static_cast<double>(ids_.size());
  forward_.assign(ids_.size(), {});
  std::vector<TokenId> terms;
  for (const auto& [term, list] : postings_) terms.push_back(term);
  std::sort(terms.begin(), terms.end());
  for (TokenId term : terms) {
    for (const auto& p : postings_.at(term)) forward_[p.doc].emplace_back(term, p.tf);
  }
}

std::optional<std::uint32_t> InvertedIndex::find(const std::string& id) const {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

const std::vector<Posting>& InvertedIndex::postings(TokenId term) const {
  const auto it = postings_.find(term);
  return it == postings_.end() ? kNoPostings : it->second;
}

double InvertedIndex::idf(TokenId term) const {
  const double n = static_cast<double>(ids_.size());
  const double df = static_cast<double>(postings(term).size());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double InvertedIndex::term_weight(TokenId term, std::uint32_t tf, std::uint32_t doc) const {
  const double f = static_cast<double>(tf);
  const double norm = 1.0 - params_.b + params_.b * static_cast<double>(lengths_[doc]) / avgdl_;
  return idf(term) * (f * (params_.k1 + 1.0)) / (f + params_.k1 * norm);
}

double InvertedIndex::score(const TokenSequence& query, std::uint32_t doc) const {
  if (doc >= ids_.size()) throw ContractError("bm25: document " + std::to_string(doc) + " not in index");
  const auto& terms = forward_[doc];
  double total = 0.0;
  for (TokenId t : query) {
    const auto it = std::lower_bound(terms.begin(), terms.end(), std::make_pair(t, std::uint32_t{0}));
    if (it != terms.end() && it->first == t) total += term_weight(t, it->second, doc);
  }
  return total;
}

std::vector<ScoredDoc> InvertedIndex::retrieve_topk(const TokenSequence& query, std::size_t k) const {
  if (k == 0) throw ContractError("bm25: k must be at least 1");
  // Accumulate query token by query token so each document's sum is formed
  // in the same order as score().
  std::unordered_map<std::uint32_t, double> acc;
  for (TokenId t : query) {
    for (const auto& p : postings(t)) acc[p.doc] += term_weight(t, p.tf, p.doc);
  }
  std::vector<ScoredDoc> hits;
  for (const auto& [doc, s] : acc) {
    if (s > 0.0) hits.push_back(ScoredDoc{doc, s});
  }
  const auto by_rank = [](const ScoredDoc& a, const ScoredDoc& b) {
    return a.score != b.score ? a.score > b.score : a.doc < b.doc;
  };
  std::sort(hits.begin(), hits.end(), by_rank);
  if (hits.size() > k) hits.resize(k);
  const std::size_t want = std::min(k, ids_.size());
  if (hits.size() < want) {
    std::vector<bool> used(ids_.size(), false);
    for (const auto& h : hits) used[h.doc] = true;
    for (std::uint32_t doc = 0; doc < ids_.size() && hits.size() < want; ++doc) {
      if (!used[doc]) hits.push_back(ScoredDoc{doc, 0.0});
    }
  }
  return hits;
}

bool InvertedIndex::operator==(const InvertedIndex& other) const {
  if (ids_ != other.ids_ || lengths_ != other.lengths_ || params_.k1 != other.params_.k1 ||
      params_.b != other.params_.b || postings_.size() != other.postings_.size()) {
    return false;
  }
  for (const auto& [term, list] : postings_) {
    const auto& theirs = other.postings(term);
    if (theirs.size() != list.size()) return false;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (list[i].doc != theirs[i].doc || list[i].tf != theirs[i].tf) return false;
    }
  }
  return true;
}

void InvertedIndex::save(const std::filesystem::path& path) const {
  std::string out(kMagic, 4);
  put_fixed(out, kVersion, 4);
  put_fixed(out, std::bit_cast<std::uint64_t>(params_.k1), 8);
  put_fixed(out, std::bit_cast<std::uint64_t>(params_.b), 8);
  put_varint(out, ids_.size());
  for (std::size_t d = 0; d < ids_.size(); ++d) {
    put_varint(out, ids_[d].size());
    out += ids_[d];
    put_varint(out, lengths_[d]);
  }
  std::vector<TokenId> terms;
  for (const auto& [term, list] : postings_) terms.push_back(term);
  std::sort(terms.begin(), terms.end());
  put_varint(out, terms.size());
  TokenId previous = 0;
  for (TokenId term : terms) {
    put_varint(out, term - previous);
    put_varint(out, postings_.at(term).size());
    previous = term;
  }
  for (TokenId term : terms) {
    std::uint32_t last = 0;
    for (const auto& p : postings_.at(term)) {
      put_varint(out, p.doc - last);
      put_varint(out, p.tf);
      last = p.doc;
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file || !file.write(out.data(), static_cast<std::streamsize>(out.size()))) {
    throw IngestionError("bm25 index: cannot write " + path.string());
  }
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IngestionError("bm25 index: cannot open " + path.string());
  Reader in(std::string(std::istreambuf_iterator<char>(file), {}));
  if (std::memcmp(in.take(4), kMagic, 4) != 0) throw IngestionError("bm25 index: bad magic");
  if (in.fixed(4) != kVersion) throw IngestionError("bm25 index: unsupported version");
  InvertedIndex index;
  index.params_.k1 = std::bit_cast<double>(in.fixed(8));
  index.params_.b = std::bit_cast<double>(in.fixed(8));
  const auto n = in.varint();
  for (std::uint64_t d = 0; d < n; ++d) {
    const auto len = in.varint();
    std::string id(in.take(len), len);
    index.by_id_.emplace(id, static_cast<std::uint32_t>(d));
    index.ids_.push_back(std::move(id));
    index.lengths_.push_back(static_cast<std::uint32_t>(in.varint()));
  }
  const auto num_terms = in.varint();
  std::vector<std::pair<TokenId, std::uint64_t>> dictionary;
  TokenId term = 0;
  for (std::uint64_t i = 0; i < num_terms; ++i) {
    term += static_cast<TokenId>(in.varint());
    dictionary.emplace_back(term, in.varint());
  }
  for (const auto& [t, df] : dictionary) {
    auto& list = index.postings_[t];
    std::uint32_t doc = 0;
    for (std::uint64_t i = 0; i < df; ++i) {
      doc += static_cast<std::uint32_t>(in.varint());
      const auto tf = static_cast<std::uint32_t>(in.varint());
      if (doc >= n) throw IngestionError("bm25 index: posting beyond document table");
      list.push_back(Posting{doc, tf});
    }
  }
  if (!in.done()) throw IngestionError("bm25 index: trailing bytes");
  index.finalize();
  return index;
}

}  // namespace pfr
