#pragma once

// Caption and retrieval metrics. Tokens are whitespace-split strings; no
// casing or stemming.

#include <string>
#include <vector>

#include "ithn/tensor.hpp"

namespace ithn::metrics {

using Tokens = std::vector<std::string>;

struct TextCorpus {
  std::vector<Tokens> candidates;
  std::vector<std::vector<Tokens>> references;  // parallel to candidates, each non-empty

  void validate() const;
};

struct ClippedCount {
  double matched = 0;  // clipped n-gram matches
  double total = 0;    // candidate n-grams
};

// Corpus-level clipped n-gram counts, summed over candidates.
ClippedCount clipped_ngram_counts(const TextCorpus& corpus, int n);

// Corpus-level BLEU-n: uniform geometric mean of clipped precisions 1..n,
// brevity penalty against the closest reference length (shorter on ties).
// A corpus of empty candidates scores 0 and logs a warning.
double bleu(const TextCorpus& corpus, int n);

constexpr double kRougeBeta = 1.2;

// LCS F-measure; with several references, precision and recall each take
// their maximum over references before combining.
double rouge_l(const Tokens& candidate, const std::vector<Tokens>& references);
double rouge_l(const TextCorpus& corpus);  // mean over candidates

constexpr double kCiderSigma = 6.0;

// CIDEr-D: n = 1..4 tf-idf vectors with document frequency over the
// reference sets, clipped dot product, Gaussian length penalty, mean over
// references and n, times 10. Throws when every reference set is identical.
double cider(const TextCorpus& corpus);

// prod over n = 2..4 of (1 - rep_n), rep_n = 1 - sum(unique) / sum(total)
// with unique and total counted within each sequence. An n for which no
// sequence is long enough contributes a factor of 1.
double diversity(const std::vector<Tokens>& generated);

// Row i is a hit when 1 + #{j != i : S(i,j) >= S(i,i)} <= k, so ties count
// against the diagonal.
double recall_at_k(const Tensor& similarity, std::size_t k);

struct MetricSet {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double rouge_l = 0;
  double cider = 0;
  double diversity = 0;
  double recall_at_1 = 0, recall_at_5 = 0;

  bool operator==(const MetricSet&) const = default;
};

// Fixed key order used by every result file.
std::vector<std::pair<std::string, double>> named(const MetricSet& m);

}  // namespace ithn::metrics
