#include "ithn/model.hpp"

#include <algorithm>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "ithn/corpus.hpp"

namespace ithn::model {

using namespace ithn::ad;

ModelParameters::ModelParameters(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.d_img == 0 || cfg.d == 0 || cfg.hidden == 0 || cfg.vocab < 3 || cfg.t_max < 1)
    throw std::invalid_argument("ModelConfig: every dimension must be positive and vocab must hold the special tokens");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(-cfg.init_scale, cfg.init_scale);
  auto make = [&](std::string name, std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (double& v : t.data()) v = u(rng);
    groups_.emplace_back(std::move(name), leaf(std::move(t), true));
  };
  const std::size_t d = cfg.d;
  make("enc_w1", cfg.d_img, cfg.hidden);
  make("enc_b1", 1, cfg.hidden);
  make("enc_w2", cfg.hidden, d);
  make("enc_b2", 1, d);
  make("tok_emb", cfg.vocab, d);
  make("pos_emb", cfg.t_max + 1, d);  // +1 for the image prefix
  make("attn_q", d, d);
  make("attn_k", d, d);
  make("attn_v", d, d);
  make("attn_o", d, d);
  make("ffn_w1", d, cfg.hidden);
  make("ffn_b1", 1, cfg.hidden);
  make("ffn_w2", cfg.hidden, d);
  make("ffn_b2", 1, d);
  make("out_w", d, cfg.vocab);
  make("out_b", 1, cfg.vocab);
}

const Var& ModelParameters::get(const std::string& name) const {
  for (const auto& [n, v] : groups_)
    if (n == name) return v;
  throw std::out_of_range("ModelParameters: no group '" + name + "'");
}

ModelParameters ModelParameters::with_group(const std::string& name, Var replacement) const {
  ModelParameters copy = *this;
  for (auto& [n, v] : copy.groups_)
    if (n == name) {
      if (replacement.shape() != v.shape()) throw ShapeError("with_group " + name, v.shape(), replacement.shape());
      v = std::move(replacement);
      return copy;
    }
  throw std::out_of_range("ModelParameters: no group '" + name + "'");
}

std::size_t ModelParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : groups_) n += v.value().size();
  return n;
}

ModelParameters ModelParameters::clone() const {
  ModelParameters copy = *this;
  for (auto& [_, v] : copy.groups_) v = leaf(v.value(), true);
  return copy;
}

Var encode(const Var& images, const ModelParameters& p) {
  if (images.value().rank() != 2 || images.value().cols() != p.config().d_img)
    throw ShapeError("encode", "expected n x " + std::to_string(p.config().d_img) + " images, got " + shape_str(images.shape()));
  Var h = tanh(add_bias(matmul(images, p.get("enc_w1")), p.get("enc_b1")));
  return l2_normalize_rows(add_bias(matmul(h, p.get("enc_w2")), p.get("enc_b2")));
}

std::vector<double> encode(std::span<const double> image, const ModelParameters& p) {
  auto z = encode(constant(Tensor::row(image)), p).value();
  return {z.data().begin(), z.data().end()};
}

DecoderGraph decode(const Var& z, std::span<const int> tokens, const ModelParameters& p) {
  const auto& cfg = p.config();
  if (z.shape() != Shape{1, cfg.d}) throw ShapeError("decode", Shape{1, cfg.d}, z.shape());
  if (tokens.empty()) throw std::invalid_argument("decode: empty token sequence");
  if (tokens.size() > cfg.t_max)
    throw std::invalid_argument("decode: sequence of " + std::to_string(tokens.size()) + " tokens exceeds t_max " +
                                std::to_string(cfg.t_max));
  const std::size_t n = tokens.size();
  std::vector<int> positions(n + 1);
  std::iota(positions.begin(), positions.end(), 0);

  const std::vector<Var> rows{z, embedding_lookup(p.get("tok_emb"), tokens)};
  Var x = add(concat_rows(rows), embedding_lookup(p.get("pos_emb"), positions));

  Var q = matmul(x, p.get("attn_q"));
  Var k = matmul(x, p.get("attn_k"));
  Var v = matmul(x, p.get("attn_v"));
  Var attn = matmul(matmul(causal_attention_weights(q, k), v), p.get("attn_o"));
  Var h = add(x, attn);
  Var ffn = add_bias(matmul(tanh(add_bias(matmul(h, p.get("ffn_w1")), p.get("ffn_b1"))), p.get("ffn_w2")), p.get("ffn_b2"));
  Var last = slice_rows(add(h, ffn), 1, n + 1);

  DecoderGraph out;
  out.logits = add_bias(matmul(last, p.get("out_w")), p.get("out_b"));
  out.pooled = l2_normalize_rows(mean_rows(last));
  return out;
}

DecoderOutput decode(std::span<const double> z, std::span<const int> tokens, const ModelParameters& p) {
  auto g = decode(constant(Tensor::row(z)), tokens, p);
  const auto& pooled = g.pooled.value();
  return {g.logits.value(), {pooled.data().begin(), pooled.data().end()}};
}

std::vector<int> generate(std::span<const double> z, const ModelParameters& p, std::size_t max_len) {
  if (max_len > p.config().t_max)
    throw std::invalid_argument("generate: max_len " + std::to_string(max_len) + " exceeds t_max " +
                                std::to_string(p.config().t_max));
  std::vector<int> seq{corpus::Vocabulary::kBos};
  const Var zv = constant(Tensor::row(z));
  while (seq.size() - 1 < max_len) {
    const auto logits = decode(zv, seq, p).logits.value();
    auto last = logits.row_span(logits.rows() - 1);
    const int next = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    if (next == corpus::Vocabulary::kEos) break;
    seq.push_back(next);
  }
  return {seq.begin() + 1, seq.end()};
}

namespace {

constexpr char kMagic[8] = {'I', 'T', 'H', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(std::ostream& os, const ModelParameters& params, const CheckpointMeta& meta) {
  const auto& c = params.config();
  os.write(kMagic, sizeof kMagic);
  put(os, kVersion);
  put(os, meta.config_hash);
  put(os, meta.corpus_hash);
  put(os, meta.seed);
  for (std::uint64_t dim : {c.d_img, c.d, c.hidden, c.vocab, c.t_max}) put(os, dim);
  put(os, static_cast<std::uint64_t>(params.parameter_count()));
  for (const auto& [_, v] : params.groups())
    for (double x : v.value().data()) put(os, x);
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

std::pair<ModelParameters, CheckpointMeta> load_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("checkpoint: bad magic bytes");
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  CheckpointMeta meta;
  meta.config_hash = get<std::uint64_t>(is);
  meta.corpus_hash = get<std::uint64_t>(is);
  meta.seed = get<std::uint64_t>(is);
  ModelConfig cfg;
  cfg.d_img = get<std::uint64_t>(is);
  cfg.d = get<std::uint64_t>(is);
  cfg.hidden = get<std::uint64_t>(is);
  cfg.vocab = get<std::uint64_t>(is);
  cfg.t_max = get<std::uint64_t>(is);
  cfg.seed = meta.seed;
  ModelParameters params(cfg);
  const auto count = get<std::uint64_t>(is);
  if (count != params.parameter_count())
    throw std::runtime_error("checkpoint: parameter count " + std::to_string(count) + " does not match dimensions");
  for (const auto& [_, v] : params.groups()) {
    Var leaf_var = v;
    for (double& x : leaf_var.mutable_value().data()) x = get<double>(is);
  }
  return {std::move(params), meta};
}

}  // namespace ithn::model
