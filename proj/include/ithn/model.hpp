#pragma once

// Desk-scale Siamese model. One parameter store backs both branches: a
// two-layer MLP image encoder and a single-block causal self-attention
// decoder that reads the image feature as a prefix position.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ithn/autodiff.hpp"

namespace ithn::model {

using ad::Var;

struct ModelConfig {
  std::size_t d_img = 16;
  std::size_t d = 32;
  std::size_t hidden = 64;
  std::size_t vocab = 80;
  std::size_t t_max = 24;  // longest decoder input, BOS included
  double init_scale = 0.08;
  std::uint64_t seed = 1;

  bool operator==(const ModelConfig&) const = default;
};

class ModelParameters {
 public:
  explicit ModelParameters(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  // Stable order; used by checkpoints and optimizers.
  const std::vector<std::pair<std::string, Var>>& groups() const { return groups_; }
  const Var& get(const std::string& name) const;
  // Shallow copy with one group swapped for another node (gradient checks).
  ModelParameters with_group(const std::string& name, Var replacement) const;
  std::size_t parameter_count() const;
  // Deep copy: fresh leaves holding the same values.
  ModelParameters clone() const;

 private:
  ModelConfig cfg_;
  std::vector<std::pair<std::string, Var>> groups_;
};

// images: n x d_img -> n x d, rows l2-normalized.
Var encode(const Var& images, const ModelParameters& params);
std::vector<double> encode(std::span<const double> image, const ModelParameters& params);

struct DecoderGraph {
  Var logits;  // tokens.size() x V; row t predicts tokens[t + 1]
  Var pooled;  // 1 x d, l2-normalized mean of the token rows of the last hidden layer
};

// z: 1 x d; tokens start with BOS and hold at most t_max ids.
DecoderGraph decode(const Var& z, std::span<const int> tokens, const ModelParameters& params);

struct DecoderOutput {
  Tensor logits;
  std::vector<double> pooled_feature;
};
DecoderOutput decode(std::span<const double> z, std::span<const int> tokens, const ModelParameters& params);

// Greedy argmax from BOS until EOS or max_len tokens; BOS and EOS are not returned.
std::vector<int> generate(std::span<const double> z, const ModelParameters& params, std::size_t max_len);

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t corpus_hash = 0;
  std::uint64_t seed = 0;
};

// Binary layout: "ITHNCKPT", u32 version, u64 config hash, u64 corpus hash,
// u64 seed, u64 x 5 dims (d_img, d, hidden, vocab, t_max), u64 count, then
// every group's values row-major as little-endian doubles.
void save_checkpoint(std::ostream& os, const ModelParameters& params, const CheckpointMeta& meta);
std::pair<ModelParameters, CheckpointMeta> load_checkpoint(std::istream& is);

}  // namespace ithn::model
