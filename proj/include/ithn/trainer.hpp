#pragma once

// Alternating min-max training of the toy model. Each step first builds
// the synthesized negatives from the current forward features (the max
// step), then takes a gradient step on the total objective with those
// negatives held fixed (the min step).

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ithn/corpus.hpp"
#include "ithn/geometry.hpp"
#include "ithn/losses.hpp"
#include "ithn/metrics.hpp"
#include "ithn/model.hpp"

namespace ithn::trainer {

enum class Strategy { Plain, Static, Mochi, Ithn };
std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

enum class OptimizerKind { Sgd, Adam };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
  Strategy strategy = Strategy::Ithn;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double learning_rate = 1.0;
  double lr_decay = 0.1;
  std::size_t lr_patience = 3;
  losses::LossWeights weights;
  geometry::ScheduleConfig schedule;
  geometry::TripletConfig triplet;  // diagnostics only
  double tau = losses::kDefaultTau;
  losses::LossForm loss_form = losses::LossForm::PerSample;
  std::size_t k = 5;  // neighbour pool size
  bool stop_grad_negatives = true;
  bool clamp_projection = true;
  double val_fraction = 0.1;
  std::size_t d = 32;
  std::size_t hidden = 64;
  std::size_t t_max = 24;
  double init_scale = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
  // Canonical key=value pairs, every field, fixed order.
  std::vector<std::pair<std::string, std::string>> key_values() const;
  // Returns false for an unknown key; throws on a malformed value.
  bool set(const std::string& key, const std::string& value);
  // Hash of key_values() without the seed.
  std::uint64_t hash() const;
};

struct Split {
  std::vector<std::size_t> train;  // indices into corpus.samples
  std::vector<std::size_t> val;
};

// Seeded shuffle; the first floor(fraction * n) shuffled indices are held out.
Split split_corpus(std::size_t n, double val_fraction, std::uint64_t seed);

// Teacher-forcing inputs and targets for one report.
struct EncodedReport {
  std::vector<int> input;   // BOS w1 .. wL
  std::vector<int> target;  // w1 .. wL EOS
};
EncodedReport encode_report(const corpus::Vocabulary& vocab, const std::vector<std::string>& tokens);

// Everything the step function needs, prepared once per run.
struct TrainData {
  const corpus::Corpus* corpus = nullptr;
  Split split;
  std::vector<EncodedReport> reports;        // parallel to corpus->samples
  geometry::HardNegativeIndex index;         // mined over the training split, keyed by sample id
  std::vector<std::size_t> partner;          // sample index -> partner sample index
  std::vector<std::vector<std::size_t>> pool;

  static TrainData prepare(const corpus::Corpus& corpus, const TrainConfig& cfg);
};

struct StepGraph {
  ad::Var l_f;
  losses::LossBreakdown breakdown;
  Tensor Z, U, U_neg, U_syn;  // forward values (negative parts empty for plain)
  std::size_t degenerate_segments = 0;
};

// Builds the objective for one batch. lambda drives the synthesis; passing
// u_syn_override skips synthesis and uses the given rows (held fixed).
StepGraph build_step(const model::ModelParameters& params, const TrainData& data, std::span<const std::size_t> batch,
                     double lambda, const TrainConfig& cfg, std::mt19937_64& rng, const Tensor* u_syn_override = nullptr);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, const model::ModelParameters& params);
  void step(model::ModelParameters& params, const ad::GradientMap& grads, double lr);

 private:
  OptimizerKind kind_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lambda = 0.0;
  double learning_rate = 0.0;
  std::size_t steps = 0;
  losses::LossBreakdown mean;
  double val_bleu4 = 0.0;
  std::size_t degenerate_segments = 0;
};

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  losses::LossBreakdown loss;
  double lambda = 0.0;
  double learning_rate = 0.0;
};

struct RunReport {
  std::string strategy;
  std::uint64_t config_hash = 0;
  std::uint64_t corpus_hash = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;
  std::string eval_split;  // "val", or "train" when the held-out split is empty
  std::vector<EpochLog> epochs;
  metrics::MetricSet metrics;
  std::vector<std::string> notes;
  double wall_clock_seconds = 0.0;  // written to a separate timing file
};

// Everything except wall clock, as canonical JSON text.
std::string report_json(const RunReport& report);
void write_step_csv(std::ostream& os, const std::vector<StepLog>& steps);

struct TrainResult {
  RunReport report;
  model::ModelParameters params;
  std::vector<StepLog> steps;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, model::ModelParameters last_good, RunReport partial)
      : std::runtime_error(what), last_good(std::move(last_good)), partial(std::move(partial)) {}
  model::ModelParameters last_good;  // parameters after the last completed epoch
  RunReport partial;
};

// Content hash of the serialized corpus; stored in checkpoints.
std::uint64_t corpus_content_hash(const corpus::Corpus& corpus);

model::ModelConfig model_config(const TrainConfig& cfg, const corpus::Corpus& corpus);

TrainResult train(const TrainConfig& cfg, const corpus::Corpus& corpus);

struct Evaluation {
  metrics::MetricSet metrics;
  std::vector<metrics::Tokens> generated;
  std::vector<std::string> notes;
};

// The samples final metrics are computed on: the held-out split, or the
// training split when nothing is held out.
std::vector<std::size_t> evaluation_indices(const TrainConfig& cfg, std::size_t n_samples);

// Greedy generation and retrieval on the given samples.
Evaluation evaluate(const model::ModelParameters& params, const corpus::Corpus& corpus,
                    std::span<const std::size_t> indices);

// ---- ablation ---------------------------------------------------------------

struct AblationVariant {
  std::string label;
  TrainConfig cfg;
};

std::vector<AblationVariant> strategy_variants(const TrainConfig& base, const std::vector<Strategy>& strategies);
std::vector<AblationVariant> alpha_variants(const TrainConfig& base, const std::vector<double>& alphas);

struct AblationRow {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<metrics::MetricSet> runs;  // successful runs only
  std::vector<std::string> failures;     // "seed N: reason"
  metrics::MetricSet mean, sd;
};

std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& variants, const std::vector<std::uint64_t>& seeds,
                                      const corpus::Corpus& corpus);

// Tab-separated: label, seed count, then mean and sd for every metric.
void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace ithn::trainer
