#pragma once

// Training objectives: image dissimilarity (L_CS), the three-matrix
// similarity with negated synthetic diagonal, the CLIP-form contrastive
// term and its symmetric loss (L_CP), token cross-entropy (L_CE), and the
// weighted total L_F = L_CE + beta * L_CP + gamma * L_CS.

#include <span>
#include <string>
#include <vector>

#include "ithn/autodiff.hpp"
#include "ithn/gradcheck.hpp"

namespace ithn::losses {

using ad::Var;

// Per-sample mean of -log(e^{S_ii/tau} / sum_{k != i} e^{S_ik/tau}) is the
// default. Literal is -log sum_i (ratio_i), the sum taken inside the log.
enum class LossForm { PerSample, Literal };

std::string to_string(LossForm form);
LossForm parse_loss_form(const std::string& s);

struct FeatureBatch {
  Tensor Z;      // image features
  Tensor U;      // paired report features
  Tensor Z_neg;  // hard-negative image features
  Tensor U_neg;  // hard-negative report features
  Tensor U_syn;  // synthesized harder negatives

  std::size_t batch_size() const { return Z.rows(); }
  void validate() const;
};

// Largest distance from a row of U_syn to the segment between the matching
// rows of U_neg and U.
double segment_residual(const FeatureBatch& batch);

struct SimilarityBundle {
  Tensor S1, S2, S3, S3_prime, S;
  double tau = 0.1;
};

struct SimilarityGraph {
  Var S1, S2, S3, S3_prime, S;
};

struct LossWeights {
  double beta = 0.1;
  double gamma = 0.2;
};

struct LossBreakdown {
  double l_ce = 0.0;
  double l_cp = 0.0;
  double l_cs = 0.0;
  double l_f = 0.0;
};

inline constexpr double kDefaultTau = 0.1;

// ---- graph forms (differentiable) -----------------------------------------

// Mean over rows of cos(z_i, z_neg_i).
Var cs_loss(const Var& Z, const Var& Z_neg);
SimilarityGraph build_similarity(const Var& Z, const Var& U, const Var& Z_neg, const Var& U_neg, const Var& U_syn);
Var clip_term(const Var& S, double tau, LossForm form = LossForm::PerSample);
// (clip_term(S) + clip_term(S^T)) / 2
Var clip_loss(const Var& S, double tau, LossForm form = LossForm::PerSample);
// logits are (positions x V) or (B x T x V); targets are flattened in the same order.
Var ce_loss(const Var& logits, std::span<const int> targets, int pad_id);
Var final_loss(const Var& l_ce, const Var& l_cp, const Var& l_cs, const LossWeights& w);

// ---- value forms -----------------------------------------------------------

double cs_loss(std::span<const double> z, std::span<const double> z_neg);
SimilarityBundle build_similarity_bundle(const FeatureBatch& batch, double tau = kDefaultTau);
double clip_term(const Tensor& S, double tau, LossForm form = LossForm::PerSample);
double clip_loss(const SimilarityBundle& bundle, LossForm form = LossForm::PerSample);
double ce_loss(const Tensor& logits, std::span<const int> targets, int pad_id);
LossBreakdown final_loss(double l_ce, double l_cp, double l_cs, const LossWeights& w);

// Gradient checks of the composed objectives with respect to every feature
// row (and the logits for L_CE / L_F).
std::vector<ad::GradientCase> loss_gradient_cases();

}  // namespace ithn::losses
