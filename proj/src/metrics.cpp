#include "ithn/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

namespace ithn::metrics {

namespace {

using Counts = std::map<std::string, double>;

Counts ngrams(const Tokens& t, int n) {
  Counts c;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= t.size(); ++i) {
    std::string key = t[i];
    for (std::size_t j = 1; j < un; ++j) key += '\x1f' + t[i + j];
    c[key] += 1;
  }
  return c;
}

void check_order(int n, const char* what) {
  if (n < 1 || n > 4) throw std::invalid_argument(std::string(what) + ": n must be in 1..4, got " + std::to_string(n));
}

std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

void TextCorpus::validate() const {
  if (candidates.size() != references.size())
    throw std::invalid_argument("TextCorpus: " + std::to_string(candidates.size()) + " candidates but " +
                                std::to_string(references.size()) + " reference sets");
  if (candidates.empty()) throw std::invalid_argument("TextCorpus: empty corpus");
  for (std::size_t i = 0; i < references.size(); ++i)
    if (references[i].empty()) throw std::invalid_argument("TextCorpus: no references for entry " + std::to_string(i));
}

ClippedCount clipped_ngram_counts(const TextCorpus& corpus, int n) {
  check_order(n, "clipped_ngram_counts");
  corpus.validate();
  ClippedCount out;
  for (std::size_t i = 0; i < corpus.candidates.size(); ++i) {
    Counts max_ref;
    for (const auto& r : corpus.references[i])
      for (const auto& [g, c] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
    for (const auto& [g, c] : ngrams(corpus.candidates[i], n)) {
      out.total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) out.matched += std::min(c, it->second);
    }
  }
  return out;
}

double bleu(const TextCorpus& corpus, int n) {
  check_order(n, "bleu");
  corpus.validate();
  double cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < corpus.candidates.size(); ++i) {
    const double c = static_cast<double>(corpus.candidates[i].size());
    cand_len += c;
    double best = std::numeric_limits<double>::infinity(), best_gap = best;
    for (const auto& r : corpus.references[i]) {
      const double len = static_cast<double>(r.size()), gap = std::abs(len - c);
      if (gap < best_gap || (gap == best_gap && len < best)) {
        best_gap = gap;
        best = len;
      }
    }
    ref_len += best;
  }
  if (cand_len == 0) {
    std::clog << "warning: bleu on empty candidates scores 0\n";
    return 0.0;
  }
  double log_sum = 0;
  for (int k = 1; k <= n; ++k) {
    const auto cc = clipped_ngram_counts(corpus, k);
    if (cc.matched == 0 || cc.total == 0) return 0.0;
    log_sum += std::log(cc.matched / cc.total);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return bp * std::exp(log_sum / n);
}

double rouge_l(const Tokens& candidate, const std::vector<Tokens>& references) {
  if (references.empty()) throw std::invalid_argument("rouge_l: no references");
  if (candidate.empty()) return 0.0;
  double p = 0, r = 0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    const double l = static_cast<double>(lcs(candidate, ref));
    p = std::max(p, l / static_cast<double>(candidate.size()));
    r = std::max(r, l / static_cast<double>(ref.size()));
  }
  if (p == 0 || r == 0) return 0.0;
  const double b2 = kRougeBeta * kRougeBeta;
  return (1 + b2) * p * r / (r + b2 * p);
}

double rouge_l(const TextCorpus& corpus) {
  corpus.validate();
  double s = 0;
  for (std::size_t i = 0; i < corpus.candidates.size(); ++i) s += rouge_l(corpus.candidates[i], corpus.references[i]);
  return s / static_cast<double>(corpus.candidates.size());
}

double cider(const TextCorpus& corpus) {
  corpus.validate();
  const std::size_t docs = corpus.references.size();
  {
    std::set<std::multiset<Tokens>> distinct;
    for (const auto& refs : corpus.references) distinct.insert({refs.begin(), refs.end()});
    if (distinct.size() < 2)
      throw std::invalid_argument("cider: degenerate idf, every reference set in the corpus is identical");
  }
  // Document frequency: number of reference sets containing the n-gram.
  std::array<Counts, 4> df;
  for (const auto& refs : corpus.references)
    for (int n = 1; n <= 4; ++n) {
      std::set<std::string> seen;
      for (const auto& r : refs)
        for (const auto& [g, _] : ngrams(r, n)) seen.insert(g);
      for (const auto& g : seen) df[n - 1][g] += 1;
    }
  const double log_docs = std::log(static_cast<double>(docs));

  auto tfidf = [&](const Tokens& t, int n, double& norm) {
    Counts v = ngrams(t, n);
    norm = 0;
    for (auto& [g, c] : v) {
      auto it = df[n - 1].find(g);
      const double d = it == df[n - 1].end() ? 1.0 : std::max(1.0, it->second);
      c *= log_docs - std::log(d);
      norm += c * c;
    }
    norm = std::sqrt(norm);
    return v;
  };

  double total = 0;
  for (std::size_t i = 0; i < docs; ++i) {
    const auto& cand = corpus.candidates[i];
    double per_ref = 0;
    for (const auto& ref : corpus.references[i]) {
      const double delta = static_cast<double>(cand.size()) - static_cast<double>(ref.size());
      const double penalty = std::exp(-delta * delta / (2 * kCiderSigma * kCiderSigma));
      double sum_n = 0;
      for (int n = 1; n <= 4; ++n) {
        double nc = 0, nr = 0;
        const auto vc = tfidf(cand, n, nc);
        const auto vr = tfidf(ref, n, nr);
        double dot = 0;
        for (const auto& [g, c] : vc) {
          auto it = vr.find(g);
          if (it != vr.end()) dot += std::min(c, it->second) * it->second;
        }
        if (nc != 0 && nr != 0) sum_n += dot / (nc * nr) * penalty;
      }
      per_ref += sum_n / 4.0;
    }
    total += per_ref / static_cast<double>(corpus.references[i].size());
  }
  return 10.0 * total / static_cast<double>(docs);
}

double diversity(const std::vector<Tokens>& generated) {
  if (generated.empty()) throw std::invalid_argument("diversity: no sequences");
  double d = 1.0;
  for (int n = 2; n <= 4; ++n) {
    double unique = 0, total = 0;
    for (const auto& t : generated) {
      const auto c = ngrams(t, n);
      unique += static_cast<double>(c.size());
      for (const auto& [_, k] : c) total += k;
    }
    if (total > 0) d *= unique / total;  // 1 - rep_n
  }
  return d;
}

double recall_at_k(const Tensor& s, std::size_t k) {
  if (s.rank() != 2 || s.rows() != s.cols()) throw std::invalid_argument("recall_at_k: need a square matrix, got " + shape_str(s.shape()));
  const std::size_t b = s.rows();
  if (k < 1 || k > b) throw std::invalid_argument("recall_at_k: k=" + std::to_string(k) + " outside 1.." + std::to_string(b));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t rank = 1;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && s(i, j) >= s(i, i)) ++rank;
    if (rank <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(b);
}

std::vector<std::pair<std::string, double>> named(const MetricSet& m) {
  return {{"bleu1", m.bleu1},         {"bleu2", m.bleu2},        {"bleu3", m.bleu3},
          {"bleu4", m.bleu4},         {"rouge_l", m.rouge_l},    {"cider", m.cider},
          {"diversity", m.diversity}, {"recall_at_1", m.recall_at_1}, {"recall_at_5", m.recall_at_5}};
}

}  // namespace ithn::metrics
