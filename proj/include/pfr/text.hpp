#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pfr {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kCls = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kMask = 3;
inline constexpr TokenId kUnk = 4;
inline constexpr TokenId kCount = 5;
}  // namespace special

inline constexpr std::size_t kMaxSpanLength = 128;

/// Lowercased words; ASCII punctuation characters become standalone tokens.
std::vector<std::string> split_words(std::string_view text);

/// Token <-> id mapping. Ids 0..4 are reserved for PAD, CLS, SEP, MASK, UNK.
class Vocab {
 public:
  Vocab();

  // Tokens ordered by frequency (desc) then lexicographically; tokens below
  // min_freq are dropped, and the table is capped at max_size ids in total.
  static Vocab build(const std::vector<std::string>& corpus, std::size_t min_freq = 1,
                     std::size_t max_size = 8192);

  // One token per line; line i holds id i + 5.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // kUnk when unknown
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const;

  TokenSequence encode(std::string_view text) const;
  std::string decode(const TokenSequence& ids) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void push(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Encodes `text` with `vocab`; empty text gives an empty sequence.
inline TokenSequence tokenize(const Vocab& vocab, std::string_view text) { return vocab.encode(text); }

/// Contiguous run of non-special token ids taken from one document.
struct Span {
  TokenSequence tokens;
  std::size_t document = 0;
  std::size_t position = 0;
};

struct SpanPair {
  Span first;
  Span second;  // the span immediately after `first` in the same document
};

/// Ids of tokens that end a sentence ('.', '?', '!') for this vocabulary.
std::vector<TokenId> sentence_terminals(const Vocab& vocab);

/// Greedily packs whole sentences into spans of at most max_len tokens;
/// sentences longer than max_len are hard-split. Concatenating the result
/// restores `document` exactly.
std::vector<Span> segment_spans(const TokenSequence& document, std::span<const TokenId> terminals,
                                std::size_t document_id, std::size_t max_len = kMaxSpanLength);

/// All (k, k+1) pairs of one document's spans.
std::vector<SpanPair> adjacent_pairs(const std::vector<Span>& spans);

struct MaskedSpan {
  TokenSequence input;                 // MASK substituted at `positions`
  std::vector<std::size_t> positions;  // ascending
  TokenSequence labels;                // original ids at `positions`
};

/// Masks max(1, round(ratio * len)) distinct positions chosen uniformly with
/// a generator seeded by `seed`.
MaskedSpan apply_mask(const TokenSequence& span, double mask_ratio, std::uint64_t seed);

}  // namespace pfr
