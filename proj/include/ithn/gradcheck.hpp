#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ithn/autodiff.hpp"

namespace ithn::ad {

// Builds a scalar graph from the leaf it is handed.
using ScalarFunction = std::function<Var(const Var& x)>;

// max_i |analytic_i - central_i| / max(1, |analytic_i|), with central
// differences of half-width `step` obtained by re-running forward() on the
// graph with one leaf coordinate perturbed.
double gradient_check(const ScalarFunction& f, const Tensor& point, double step = 1e-5);

struct GradientCase {
  std::string name;
  ScalarFunction fn;
  std::function<Tensor(std::mt19937_64&)> sample;
};

struct GradientCaseResult {
  std::string name;
  double max_error = 0.0;
  int points = 0;
};

// One case per registered primitive, each reduced to a scalar by a fixed
// pseudo-random weighting of its output.
std::vector<GradientCase> primitive_gradient_cases();

std::vector<GradientCaseResult> run_gradient_cases(const std::vector<GradientCase>& cases, int points,
                                                   std::uint64_t seed, double step = 1e-5);

// Deterministic weighted sum sum_ij w_ij v_ij with w drawn from a generator
// keyed by the size of v.
Var weighted_sum(const Var& v);

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi);

}  // namespace ithn::ad
