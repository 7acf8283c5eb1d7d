#include "ithn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ithn::ad {

double gradient_check(const ScalarFunction& f, const Tensor& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("gradient_check: step must be positive");
  Var x = leaf(point, true);
  Var root = f(x);
  if (root.value().size() != 1) throw ShapeError("gradient_check", "function is not scalar-valued: " + shape_str(root.shape()));
  if (!root.value().all_finite()) throw std::domain_error("gradient_check: non-finite function value");
  backward(root);
  // A function that ignores x leaves the leaf gradient unset.
  const Tensor analytic = x.grad().size() == point.size() ? x.grad() : Tensor::zeros_like(point);
  if (!analytic.all_finite()) throw std::domain_error("gradient_check: non-finite analytic gradient");

  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double base = point[i];
    x.mutable_value()[i] = base + step;
    const double fp = forward(root).item();
    x.mutable_value()[i] = base - step;
    const double fm = forward(root).item();
    x.mutable_value()[i] = base;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::domain_error("gradient_check: non-finite value at coordinate " + std::to_string(i));
    const double numeric = (fp - fm) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  forward(root);
  return worst;
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

Var weighted_sum(const Var& v) {
  std::mt19937_64 rng(0x5eed0000ULL + v.value().size());
  return sum(multiply(v, constant(random_tensor(rng, v.shape(), -1.0, 1.0))));
}

namespace {

Tensor fixed(std::uint64_t key, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(key);
  return random_tensor(rng, std::move(shape), lo, hi);
}

auto uniform(Shape shape, double lo = -1.0, double hi = 1.0) {
  return [shape, lo, hi](std::mt19937_64& rng) { return random_tensor(rng, shape, lo, hi); };
}

// Keeps samples at least 1e-3 away from the clamp kinks at +-1.
Tensor away_from_kinks(std::mt19937_64& rng) {
  Tensor t = random_tensor(rng, {3, 4}, -2.0, 2.0);
  for (double& v : t.data())
    if (std::abs(std::abs(v) - 1.0) < 1e-3) v += 0.01;
  return t;
}

}  // namespace

std::vector<GradientCase> primitive_gradient_cases() {
  std::vector<GradientCase> cases;
  auto add_case = [&](std::string name, ScalarFunction fn, std::function<Tensor(std::mt19937_64&)> sample) {
    cases.push_back({std::move(name), std::move(fn), std::move(sample)});
  };

  add_case("matmul", [](const Var& x) { return weighted_sum(matmul(x, x)); }, uniform({3, 3}));
  add_case("add", [](const Var& x) { return weighted_sum(add(x, constant(fixed(1, {3, 4})))); }, uniform({3, 4}));
  add_case("sub", [](const Var& x) { return weighted_sum(sub(constant(fixed(2, {3, 4})), x)); }, uniform({3, 4}));
  add_case("multiply", [](const Var& x) { return weighted_sum(multiply(x, x)); }, uniform({3, 4}));
  add_case(
      "divide", [](const Var& x) { return weighted_sum(divide(x, add_scalar(scale(x, 0.5), 2.0))); },
      uniform({3, 4}, 0.5, 2.0));
  add_case(
      "add_bias", [](const Var& x) { return weighted_sum(add_bias(matmul(constant(fixed(3, {3, 1})), x), x)); },
      uniform({1, 4}));
  add_case(
      "mul_rows", [](const Var& x) { return weighted_sum(mul_rows(x, row_dot(constant(fixed(4, {3, 4})), x))); },
      uniform({3, 4}));
  add_case("scale", [](const Var& x) { return weighted_sum(scale(x, -2.5)); }, uniform({3, 4}));
  add_case("add_scalar", [](const Var& x) { return weighted_sum(multiply(add_scalar(x, 0.7), x)); }, uniform({3, 4}));
  add_case("exp", [](const Var& x) { return weighted_sum(exp(x)); }, uniform({3, 4}));
  add_case("log", [](const Var& x) { return weighted_sum(log(x)); }, uniform({3, 4}, 0.2, 3.0));
  add_case("tanh", [](const Var& x) { return weighted_sum(tanh(x)); }, uniform({3, 4}, -2.0, 2.0));
  add_case("clamp", [](const Var& x) { return weighted_sum(multiply(clamp(x, -1.0, 1.0), x)); }, away_from_kinks);
  add_case("softmax_rows", [](const Var& x) { return weighted_sum(softmax_rows(x)); }, uniform({3, 5}, -3.0, 3.0));
  add_case("log_softmax_rows", [](const Var& x) { return weighted_sum(log_softmax_rows(x)); }, uniform({3, 5}, -3.0, 3.0));
  add_case("l2_normalize_rows", [](const Var& x) { return weighted_sum(l2_normalize_rows(x)); }, uniform({3, 4}));
  add_case(
      "cosine_matrix",
      [](const Var& x) { return weighted_sum(cosine_matrix(x, add(x, constant(fixed(5, {4, 3}))))); },
      uniform({4, 3}));
  add_case("row_dot", [](const Var& x) { return weighted_sum(row_dot(x, tanh(x))); }, uniform({3, 4}));
  add_case("sum", [](const Var& x) { return multiply(sum(x), sum(x)); }, uniform({3, 4}));
  add_case("mean", [](const Var& x) { return multiply(mean(x), sum(x)); }, uniform({3, 4}));
  add_case("mean_rows", [](const Var& x) { return weighted_sum(mean_rows(x)); }, uniform({3, 4}));
  add_case("transpose", [](const Var& x) { return weighted_sum(matmul(transpose(x), x)); }, uniform({3, 4}));
  add_case("diagonal", [](const Var& x) { return weighted_sum(multiply(diagonal(x), diagonal(x))); }, uniform({4, 4}));
  add_case(
      "row_logsumexp",
      [](const Var& x) { return add(weighted_sum(row_logsumexp(x, false)), weighted_sum(row_logsumexp(x, true))); },
      uniform({4, 4}, -3.0, 3.0));
  add_case(
      "concat_rows",
      [](const Var& x) {
        std::vector<Var> parts{x, constant(fixed(6, {2, 4})), multiply(x, x)};
        return weighted_sum(concat_rows(parts));
      },
      uniform({3, 4}));
  add_case("slice_rows", [](const Var& x) { return weighted_sum(multiply(slice_rows(x, 1, 3), slice_rows(x, 2, 4))); },
           uniform({5, 3}));
  add_case("reshape", [](const Var& x) { return weighted_sum(multiply(reshape(x, {2, 6}), reshape(x, {2, 6}))); },
           uniform({3, 4}));
  add_case(
      "embedding_lookup",
      [](const Var& x) {
        const std::vector<int> ids{1, 3, 1, 0, 4};
        return weighted_sum(multiply(embedding_lookup(x, ids), embedding_lookup(x, ids)));
      },
      uniform({5, 3}));
  add_case(
      "causal_attention_weights",
      [](const Var& x) { return weighted_sum(causal_attention_weights(x, matmul(x, constant(fixed(7, {4, 4}))))); },
      uniform({5, 4}, -2.0, 2.0));
  add_case(
      "cross_entropy",
      [](const Var& x) {
        const std::vector<int> targets{2, 0, -1, 4};
        return cross_entropy(x, targets, -1);
      },
      uniform({4, 5}, -3.0, 3.0));
  return cases;
}

std::vector<GradientCaseResult> run_gradient_cases(const std::vector<GradientCase>& cases, int points,
                                                   std::uint64_t seed, double step) {
  std::vector<GradientCaseResult> out;
  std::mt19937_64 rng(seed);
  for (const auto& c : cases) {
    GradientCaseResult r{c.name, 0.0, 0};
    for (int p = 0; p < points; ++p) {
      r.max_error = std::max(r.max_error, gradient_check(c.fn, c.sample(rng), step));
      ++r.points;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ithn::ad
