#include "ithn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ithn/geometry.hpp"

namespace ithn::losses {

using namespace ithn::ad;

std::string to_string(LossForm form) { return form == LossForm::PerSample ? "per-sample" : "literal"; }

LossForm parse_loss_form(const std::string& s) {
  if (s == "per-sample") return LossForm::PerSample;
  if (s == "literal") return LossForm::Literal;
  throw std::invalid_argument("unknown loss form '" + s + "' (expected per-sample or literal)");
}

void FeatureBatch::validate() const {
  const Tensor* parts[] = {&Z, &U, &Z_neg, &U_neg, &U_syn};
  const char* names[] = {"Z", "U", "Z_neg", "U_neg", "U_syn"};
  for (int i = 0; i < 5; ++i) {
    if (parts[i]->rank() != 2) throw std::invalid_argument(std::string("FeatureBatch: ") + names[i] + " is not a matrix");
    if (parts[i]->shape() != Z.shape())
      throw std::invalid_argument(std::string("FeatureBatch: ") + names[i] + " has shape " + shape_str(parts[i]->shape()) +
                                  ", expected " + shape_str(Z.shape()));
    if (!parts[i]->all_finite()) throw std::invalid_argument(std::string("FeatureBatch: ") + names[i] + " is not finite");
  }
}

double segment_residual(const FeatureBatch& batch) {
  double worst = 0.0;
  for (std::size_t r = 0; r < batch.batch_size(); ++r) {
    auto syn = batch.U_syn.row_span(r);
    auto u = batch.U.row_span(r);
    auto un = batch.U_neg.row_span(r);
    const auto p = geometry::project_to_segment(syn, u, un, true);
    double d = 0.0;
    for (std::size_t c = 0; c < syn.size(); ++c) d += (syn[c] - p.point[c]) * (syn[c] - p.point[c]);
    worst = std::max(worst, std::sqrt(d));
  }
  return worst;
}

namespace {

void require_nonzero_rows(const Tensor& t, const char* name, const char* matrix) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double s = 0.0;
    for (double v : t.row_span(r)) s += v * v;
    if (s == 0.0)
      throw std::domain_error(std::string("similarity: row ") + std::to_string(r) + " of " + name + " has zero norm (" +
                              matrix + ")");
  }
}

Tensor diagonal_sign_mask(std::size_t n) {
  Tensor m({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = -1.0;
  return m;
}

}  // namespace

Var cs_loss(const Var& Z, const Var& Z_neg) {
  if (Z.shape() != Z_neg.shape()) throw ShapeError("cs_loss", Z.shape(), Z_neg.shape());
  return mean(diagonal(cosine_matrix(Z, Z_neg)));
}

SimilarityGraph build_similarity(const Var& Z, const Var& U, const Var& Z_neg, const Var& U_neg, const Var& U_syn) {
  for (const Var* v : {&U, &Z_neg, &U_neg, &U_syn})
    if (v->shape() != Z.shape()) throw ShapeError("build_similarity", Z.shape(), v->shape());
  require_nonzero_rows(Z.value(), "Z", "S1");
  require_nonzero_rows(U.value(), "U", "S1");
  require_nonzero_rows(Z_neg.value(), "Z_neg", "S2");
  require_nonzero_rows(U_neg.value(), "U_neg", "S2");
  require_nonzero_rows(U_syn.value(), "U_syn", "S3");

  SimilarityGraph g;
  g.S1 = cosine_matrix(Z, U);
  g.S2 = cosine_matrix(Z_neg, U_neg);
  g.S3 = cosine_matrix(Z, U_syn);
  g.S3_prime = multiply(g.S3, constant(diagonal_sign_mask(Z.value().rows())));
  g.S = scale(add(add(g.S1, g.S2), g.S3_prime), 1.0 / 3.0);
  return g;
}

Var clip_term(const Var& S, double tau, LossForm form) {
  if (!(tau > 0.0)) throw std::invalid_argument("clip_term: tau must be positive");
  const auto& s = S.value();
  if (s.rank() != 2 || s.rows() != s.cols()) throw ShapeError("clip_term", "expected a square matrix, got " + shape_str(S.shape()));
  if (s.rows() < 2) throw std::invalid_argument("clip_term: batch of " + std::to_string(s.rows()) + " has no negatives");
  Var logits = scale(S, 1.0 / tau);
  // log of the per-row ratio e^{S_ii/tau} / sum_{k != i} e^{S_ik/tau}
  Var log_ratio = sub(diagonal(logits), row_logsumexp(logits, true));
  if (form == LossForm::PerSample) return scale(mean(log_ratio), -1.0);
  return scale(row_logsumexp(transpose(log_ratio), false), -1.0);
}

Var clip_loss(const Var& S, double tau, LossForm form) {
  return scale(add(clip_term(S, tau, form), clip_term(transpose(S), tau, form)), 0.5);
}

Var ce_loss(const Var& logits, std::span<const int> targets, int pad_id) {
  if (logits.value().rank() == 3) {
    const auto& sh = logits.shape();
    return cross_entropy(reshape(logits, {sh[0] * sh[1], sh[2]}), targets, pad_id);
  }
  return cross_entropy(logits, targets, pad_id);
}

Var final_loss(const Var& l_ce, const Var& l_cp, const Var& l_cs, const LossWeights& w) {
  if (w.beta < 0.0 || w.gamma < 0.0) throw std::invalid_argument("final_loss: negative loss weight");
  return add(add(l_ce, scale(l_cp, w.beta)), scale(l_cs, w.gamma));
}

double cs_loss(std::span<const double> z, std::span<const double> z_neg) { return geometry::cosine_similarity(z, z_neg); }

SimilarityBundle build_similarity_bundle(const FeatureBatch& batch, double tau) {
  batch.validate();
  if (!(tau > 0.0)) throw std::invalid_argument("build_similarity_bundle: tau must be positive");
  auto g = build_similarity(constant(batch.Z), constant(batch.U), constant(batch.Z_neg), constant(batch.U_neg),
                            constant(batch.U_syn));
  return {g.S1.value(), g.S2.value(), g.S3.value(), g.S3_prime.value(), g.S.value(), tau};
}

double clip_term(const Tensor& S, double tau, LossForm form) { return clip_term(constant(S), tau, form).value().item(); }

double clip_loss(const SimilarityBundle& bundle, LossForm form) {
  return clip_loss(constant(bundle.S), bundle.tau, form).value().item();
}

double ce_loss(const Tensor& logits, std::span<const int> targets, int pad_id) {
  return ce_loss(constant(logits), targets, pad_id).value().item();
}

LossBreakdown final_loss(double l_ce, double l_cp, double l_cs, const LossWeights& w) {
  if (w.beta < 0.0 || w.gamma < 0.0) throw std::invalid_argument("final_loss: negative loss weight");
  return {l_ce, l_cp, l_cs, l_ce + w.beta * l_cp + w.gamma * l_cs};
}

std::vector<GradientCase> loss_gradient_cases() {
  constexpr std::size_t B = 3, d = 5, T = 2;
  auto features = [](std::mt19937_64& rng) { return random_tensor(rng, {5 * B, d}, -1.0, 1.0); };
  auto block = [](const Var& x, std::size_t k) { return slice_rows(x, k * B, (k + 1) * B); };
  static const std::vector<int> targets{0, 3, 4, -1, 2, 1};

  std::vector<GradientCase> cases;
  cases.push_back({"L_CS", [block](const Var& x) { return cs_loss(block(x, 0), block(x, 2)); }, features});
  cases.push_back({"L_CP",
                   [block](const Var& x) {
                     auto g = build_similarity(block(x, 0), block(x, 1), block(x, 2), block(x, 3), block(x, 4));
                     return clip_loss(g.S, 0.5);
                   },
                   features});
  cases.push_back({"L_CP (literal)",
                   [block](const Var& x) {
                     auto g = build_similarity(block(x, 0), block(x, 1), block(x, 2), block(x, 3), block(x, 4));
                     return clip_loss(g.S, 0.5, LossForm::Literal);
                   },
                   features});
  cases.push_back({"L_CE", [](const Var& x) { return ce_loss(reshape(x, {B, T, d}), targets, -1); },
                   [](std::mt19937_64& rng) { return random_tensor(rng, {B * T, d}, -2.0, 2.0); }});
  cases.push_back({"L_F",
                   [block](const Var& x) {
                     auto g = build_similarity(block(x, 0), block(x, 1), block(x, 2), block(x, 3), block(x, 4));
                     auto ce = ce_loss(slice_rows(x, 5 * B, 5 * B + B * T), targets, -1);
                     return final_loss(ce, clip_loss(g.S, 0.5), cs_loss(block(x, 0), block(x, 2)), LossWeights{});
                   },
                   [](std::mt19937_64& rng) { return random_tensor(rng, {5 * B + B * T, d}, -1.0, 1.0); }});
  return cases;
}

}  // namespace ithn::losses
