#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

double bm25_score(const std::vector<pfr::TokenSequence>& docs, const pfr::TokenSequence& query,
                  std::size_t doc, double k1, double b) {
  const double n = static_cast<double>(docs.size());
  double total_len = 0.0;
  for (const auto& d : docs) total_len += static_cast<double>(d.size());
  const double avgdl = total_len / n;
  double score = 0.0;
  for (const auto term : query) {
    double df = 0.0;
    for (const auto& d : docs) {
      if (std::find(d.begin(), d.end(), term) != d.end()) df += 1.0;
    }
    const double tf = static_cast<double>(std::count(docs[doc].begin(), docs[doc].end(), term));
    if (tf == 0.0) continue;
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    const double dl = static_cast<double>(docs[doc].size());
    score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avgdl));
  }
  return score;
}

std::vector<std::pair<std::uint32_t, double>> bm25_topk(const std::vector<pfr::TokenSequence>& docs,
                                                        const pfr::TokenSequence& query, std::size_t k,
                                                        double k1, double b) {
  std::vector<std::pair<std::uint32_t, double>> all;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    all.emplace_back(static_cast<std::uint32_t>(d), bm25_score(docs, query, d, k1, b));
  }
  std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  std::vector<std::pair<std::uint32_t, double>> out;
  std::vector<bool> used(docs.size(), false);
  for (const auto& e : all) {
    if (out.size() == k || e.second <= 0.0) break;
    out.push_back(e);
    used[e.first] = true;
  }
  for (std::uint32_t d = 0; d < docs.size() && out.size() < std::min(k, docs.size()); ++d) {
    if (!used[d]) out.emplace_back(d, 0.0);
  }
  return out;
}

std::vector<double> affinity(const std::vector<double>& h, std::size_t k, std::size_t d, std::size_t anchors,
                             bool include_query) {
  const std::size_t first = include_query ? 0 : 1;
  std::vector<double> q(k * anchors, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < anchors; ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += h[j * d + c] * h[(first + i) * d + c];
      q[j * anchors + i] = acc;
    }
  }
  return q;
}

long double circle_direct(std::span<const double> pos, std::span<const double> neg, long double gamma,
                          long double margin) {
  long double sum = 0.0L;
  for (const double p : pos) {
    for (const double n : neg) sum += std::exp(gamma * (static_cast<long double>(n) - p + margin));
  }
  return std::log1p(sum);
}

long double cosine_rows(std::span<const double> z, std::size_t d, std::size_t a, std::size_t b) {
  long double ab = 0.0L, aa = 0.0L, bb = 0.0L;
  for (std::size_t c = 0; c < d; ++c) {
    const long double x = z[a * d + c], y = z[b * d + c];
    ab += x * y;
    aa += x * x;
    bb += y * y;
  }
  return ab / std::sqrt(aa * bb);
}

double reciprocal_rank(const std::vector<std::string>& ranked, const std::unordered_set<std::string>& relevant,
                       std::size_t cutoff) {
  for (std::size_t i = 0; i < ranked.size() && i < cutoff; ++i) {
    if (relevant.count(ranked[i])) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

}  // namespace oracle
