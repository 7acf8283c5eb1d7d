#include "ithn/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ithn/util.hpp"

namespace ithn::corpus {

namespace {

const char* const kSpecials[] = {"<pad>", "<bos>", "<eos>"};

std::vector<std::string> words(const std::string& sentence) { return util::split(sentence, ' '); }

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* s : kSpecials) add(s);
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  if (tokens.size() < 3 || tokens[0] != kSpecials[0] || tokens[1] != kSpecials[1] || tokens[2] != kSpecials[2])
    throw std::invalid_argument("Vocabulary: token list must start with <pad> <bos> <eos>");
  for (const auto& t : tokens)
    if (index_.count(t) == 0) {
      index_.emplace(t, static_cast<int>(tokens_.size()));
      tokens_.push_back(t);
    } else {
      throw std::invalid_argument("Vocabulary: duplicate token '" + t + "'");
    }
}

int Vocabulary::add(const std::string& token) {
  if (token.empty() || token.find_first_of(" \t\n") != std::string::npos)
    throw std::invalid_argument("Vocabulary: token '" + token + "' is empty or contains whitespace");
  auto [it, inserted] = index_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw std::out_of_range("Vocabulary: unknown token '" + token + "'");
  return it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& ws) const {
  std::vector<int> ids;
  ids.reserve(ws.size());
  for (const auto& w : ws) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad) continue;
    out.push_back(token(id));
  }
  return out;
}

std::vector<std::string> CorpusConfig::default_templates() {
  return {"the mediastinum is unremarkable .", "no pneumothorax is seen ."};
}

std::vector<std::string> CorpusConfig::default_abnormality_sentences() {
  return {
      "mild cardiomegaly is present .",
      "small left pleural effusion .",
      "right lower lobe opacity .",
      "calcified granuloma in left apex .",
      "degenerative changes of thoracic spine .",
      "mild pulmonary vascular congestion .",
      "right upper lobe nodule noted .",
      "tortuous and calcified aorta .",
      "healed right rib fracture .",
      "bibasilar atelectasis is noted .",
      "central venous catheter in place .",
      "hyperinflated lungs suggest emphysema .",
      "elevated right hemidiaphragm .",
      "patchy airspace disease at bases .",
      "interstitial markings are prominent .",
      "sternotomy wires are intact .",
      "small hiatal hernia is suspected .",
      "surgical clips overlie upper abdomen .",
      "moderate scoliosis of lumbar spine .",
      "linear scarring at left base .",
  };
}

void CorpusConfig::validate() const {
  if (n_pairs < 4) throw std::invalid_argument("corpus: n_pairs must be at least 4");
  if (n_abnormality_tags < 2) throw std::invalid_argument("corpus: need at least 2 abnormality tags");
  if (templates.empty()) throw std::invalid_argument("corpus: no template sentences");
  if (n_abnormality_tags > abnormality_sentences.size())
    throw std::invalid_argument("corpus: vocabulary too small for " + std::to_string(n_abnormality_tags) +
                                " abnormality tags (" + std::to_string(abnormality_sentences.size()) + " sentences available)");
  if (max_tags_per_report < 1 || max_tags_per_report > n_abnormality_tags)
    throw std::invalid_argument("corpus: max_tags_per_report must be in [1, n_abnormality_tags]");
  if (d_img < 1) throw std::invalid_argument("corpus: d_img must be positive");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("corpus: noise_sigma must be non-negative");
  for (const auto& s : templates)
    if (words(s).empty()) throw std::invalid_argument("corpus: empty template sentence");
  for (std::size_t i = 0; i < n_abnormality_tags; ++i)
    if (words(abnormality_sentences[i]).empty()) throw std::invalid_argument("corpus: empty abnormality sentence");
}

std::uint64_t CorpusConfig::hash() const {
  std::ostringstream os;
  os << "n_pairs=" << n_pairs << "\nn_abnormality_tags=" << n_abnormality_tags
     << "\nmax_tags_per_report=" << max_tags_per_report << "\nd_img=" << d_img
     << "\nnoise_sigma=" << util::format_double(noise_sigma) << "\nseed=" << seed << '\n';
  for (const auto& s : templates) os << "template=" << s << '\n';
  for (const auto& s : abnormality_sentences) os << "abnormality=" << s << '\n';
  return util::fnv1a64(os.str());
}

std::size_t Corpus::longest_report() const {
  std::size_t n = 0;
  for (const auto& s : samples) n = std::max(n, s.report_tokens.size());
  return n;
}

const PairedSample& Corpus::by_id(int id) const {
  for (const auto& s : samples)
    if (s.id == id) return s;
  throw std::out_of_range("corpus: no sample with id " + std::to_string(id));
}

Vocabulary build_vocabulary(const CorpusConfig& cfg) {
  cfg.validate();
  Vocabulary v;
  for (const auto& s : cfg.templates)
    for (const auto& w : words(s)) v.add(w);
  for (std::size_t t = 0; t < cfg.n_abnormality_tags; ++t)
    for (const auto& w : words(cfg.abnormality_sentences[t])) v.add(w);
  return v;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  Corpus corpus;
  corpus.vocab = build_vocabulary(cfg);
  corpus.config_hash = cfg.hash();
  corpus.seed = cfg.seed;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> signature(cfg.n_abnormality_tags, std::vector<double>(cfg.d_img));
  for (auto& s : signature) {
    double norm = 0.0;
    for (double& v : s) {
      v = gauss(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : s) v /= norm;
  }

  std::vector<int> pool(cfg.n_abnormality_tags);
  for (std::size_t i = 0; i < cfg.n_pairs; ++i) {
    PairedSample s;
    s.id = static_cast<int>(i);
    const auto count = std::uniform_int_distribution<std::size_t>(1, cfg.max_tags_per_report)(rng);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t k = 0; k < count; ++k) {
      const auto j = std::uniform_int_distribution<std::size_t>(k, pool.size() - 1)(rng);
      std::swap(pool[k], pool[j]);
      s.abnormality_tags.push_back(pool[k]);
    }
    std::sort(s.abnormality_tags.begin(), s.abnormality_tags.end());

    const auto head = words(cfg.templates.front());
    s.report_tokens.insert(s.report_tokens.end(), head.begin(), head.end());
    for (int t : s.abnormality_tags) {
      const auto w = words(cfg.abnormality_sentences[static_cast<std::size_t>(t)]);
      s.report_tokens.insert(s.report_tokens.end(), w.begin(), w.end());
    }
    for (std::size_t k = 1; k < cfg.templates.size(); ++k) {
      const auto w = words(cfg.templates[k]);
      s.report_tokens.insert(s.report_tokens.end(), w.begin(), w.end());
    }

    s.image_features.assign(cfg.d_img, 0.0);
    for (int t : s.abnormality_tags)
      for (std::size_t c = 0; c < cfg.d_img; ++c) s.image_features[c] += signature[static_cast<std::size_t>(t)][c];
    for (double& v : s.image_features) v += cfg.noise_sigma * gauss(rng);
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

geometry::EmbeddingSet embed_reports_prior(const std::vector<PairedSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("embed_reports_prior: empty corpus");
  std::vector<std::map<std::string, double>> tf(samples.size());
  std::map<std::string, std::size_t> df;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& w = samples[i].report_tokens;
    if (w.empty()) throw std::invalid_argument("embed_reports_prior: empty report for id " + std::to_string(samples[i].id));
    for (std::size_t k = 0; k < w.size(); ++k) {
      tf[i][w[k]] += 1.0;
      if (k + 1 < w.size()) tf[i][w[k] + ' ' + w[k + 1]] += 1.0;
    }
    for (const auto& [term, _] : tf[i]) ++df[term];
  }

  std::map<std::string, std::size_t> column;
  std::vector<double> idf;
  const double n = static_cast<double>(samples.size());
  for (const auto& [term, count] : df) {
    column.emplace(term, idf.size());
    idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }

  geometry::EmbeddingSet set;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<double> v(idf.size(), 0.0);
    double norm = 0.0;
    for (const auto& [term, count] : tf[i]) {
      const std::size_t c = column.at(term);
      v[c] = count * idf[c];
      norm += v[c] * v[c];
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    set.vectors.push_back(std::move(v));
    set.ids.push_back(samples[i].id);
  }
  return set;
}

void write_corpus(std::ostream& os, const Corpus& corpus) {
  os << "# ithn-corpus v1\n";
  os << "# config_hash=" << util::hex64(corpus.config_hash) << " seed=" << corpus.seed << '\n';
  os << "# vocab " << util::join(corpus.vocab.tokens(), " ") << '\n';
  for (const auto& s : corpus.samples) {
    std::vector<std::string> tags, feats;
    for (int t : s.abnormality_tags) tags.push_back(std::to_string(t));
    for (double v : s.image_features) feats.push_back(util::format_double(v));
    os << s.id << '\t' << util::join(tags, ",") << '\t' << util::join(feats, " ") << '\t'
       << util::join(s.report_tokens, " ") << '\n';
  }
}

Corpus read_corpus(std::istream& is) {
  Corpus corpus;
  std::string line;
  if (!std::getline(is, line) || line != "# ithn-corpus v1") throw std::runtime_error("read_corpus: missing '# ithn-corpus v1' header");
  bool have_vocab = false;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# vocab ", 0) == 0) {
        corpus.vocab = Vocabulary(util::split(line.substr(8), ' '));
        have_vocab = true;
      } else if (line.rfind("# config_hash=", 0) == 0) {
        for (const auto& kv : util::split(line.substr(2), ' ')) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) continue;
          const auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
          if (key == "config_hash") corpus.config_hash = util::parse_hex64(val);
          if (key == "seed") corpus.seed = std::stoull(val);
        }
      }
      continue;
    }
    const auto fields = util::split(line, '\t', false);
    if (fields.size() != 4) throw std::runtime_error("read_corpus: line " + std::to_string(lineno) + " has " +
                                                     std::to_string(fields.size()) + " fields, expected 4");
    PairedSample s;
    s.id = util::parse_int(fields[0]);
    for (const auto& t : util::split(fields[1], ',')) s.abnormality_tags.push_back(util::parse_int(t));
    for (const auto& v : util::split(fields[2], ' ')) s.image_features.push_back(util::parse_double(v));
    s.report_tokens = util::split(fields[3], ' ');
    corpus.samples.push_back(std::move(s));
  }
  if (!have_vocab) throw std::runtime_error("read_corpus: missing vocabulary header");
  for (const auto& s : corpus.samples)
    for (const auto& w : s.report_tokens)
      if (!corpus.vocab.contains(w)) throw std::runtime_error("read_corpus: token '" + w + "' not in vocabulary");
  return corpus;
}

}  // namespace ithn::corpus
