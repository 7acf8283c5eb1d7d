#pragma once

// Desk-scale paired corpus: every report repeats the same template
// sentences and differs only in a few abnormality sentences, while the
// paired "image" is a noisy sum of per-tag signature vectors. Also hosts the
// tf-idf prior embedder used for hard-negative mining.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "ithn/geometry.hpp"

namespace ithn::corpus {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  Vocabulary();  // special tokens only
  explicit Vocabulary(const std::vector<std::string>& tokens);  // must start with the specials

  int add(const std::string& token);
  int id(const std::string& token) const;  // throws for unknown tokens
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<std::string>& words) const;
  // Stops at EOS and drops BOS / PAD.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct CorpusConfig {
  std::size_t n_pairs = 200;
  std::size_t n_abnormality_tags = 20;
  std::size_t max_tags_per_report = 2;
  std::size_t d_img = 16;
  double noise_sigma = 0.1;
  std::uint64_t seed = 1;
  std::vector<std::string> templates = default_templates();
  std::vector<std::string> abnormality_sentences = default_abnormality_sentences();

  static std::vector<std::string> default_templates();
  static std::vector<std::string> default_abnormality_sentences();
  void validate() const;
  // Hash of every field, including the sentence banks.
  std::uint64_t hash() const;
};

struct PairedSample {
  int id = 0;
  std::vector<double> image_features;
  std::vector<std::string> report_tokens;
  std::vector<int> abnormality_tags;  // ascending
};

struct Corpus {
  Vocabulary vocab;
  std::vector<PairedSample> samples;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;

  std::size_t longest_report() const;
  const PairedSample& by_id(int id) const;
};

// Vocabulary = specials, then template tokens, then abnormality tokens of
// the first n_abnormality_tags sentences, each in order of first appearance.
Vocabulary build_vocabulary(const CorpusConfig& cfg);

Corpus generate_corpus(const CorpusConfig& cfg);

// l2-normalized tf-idf over unigrams and bigrams; idf = ln((1 + N)/(1 + df)) + 1.
geometry::EmbeddingSet embed_reports_prior(const std::vector<PairedSample>& samples);

// Line format (after '#' header lines carrying hash, seed and vocabulary):
//   id<TAB>tags<TAB>image_features<TAB>tokens
// tags comma-separated, features and tokens space-separated.
void write_corpus(std::ostream& os, const Corpus& corpus);
Corpus read_corpus(std::istream& is);

}  // namespace ithn::corpus
