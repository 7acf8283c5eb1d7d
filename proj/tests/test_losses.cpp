#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "ithn/geometry.hpp"
#include "ithn/losses.hpp"

using namespace ithn;
using namespace ithn::losses;

namespace {

Tensor randn(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t({r, c});
  for (double& v : t.data()) v = n(rng);
  return t;
}

double oracle_cos(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.cols(); ++k) {
    dot += static_cast<long double>(a(i, k)) * b(j, k);
    na += static_cast<long double>(a(i, k)) * a(i, k);
    nb += static_cast<long double>(b(j, k)) * b(j, k);
  }
  return static_cast<double>(dot / std::sqrt(na * nb));
}

// Double-loop evaluation of the per-row ratio term, denominator skipping k == i.
double oracle_clip_term(const Tensor& S, double tau, bool literal) {
  const std::size_t B = S.rows();
  long double total = 0, ratio_sum = 0;
  for (std::size_t i = 0; i < B; ++i) {
    long double den = 0;
    for (std::size_t k = 0; k < B; ++k)
      if (k != i) den += std::exp(static_cast<long double>(S(i, k)) / tau);
    const long double ratio = std::exp(static_cast<long double>(S(i, i)) / tau) / den;
    total += -std::log(ratio);
    ratio_sum += ratio;
  }
  return literal ? static_cast<double>(-std::log(ratio_sum)) : static_cast<double>(total / B);
}

Tensor transposed(const Tensor& t) {
  Tensor out({t.cols(), t.rows()});
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out(c, r) = t(r, c);
  return out;
}

FeatureBatch random_batch(std::mt19937_64& rng, std::size_t B, std::size_t d) {
  return {randn(rng, B, d), randn(rng, B, d), randn(rng, B, d), randn(rng, B, d), randn(rng, B, d)};
}

}  // namespace

TEST_CASE("cs_loss") {
  const std::vector<double> z{0.3, -1.2, 2.0};
  CHECK(cs_loss(z, z) == doctest::Approx(1.0));
  CHECK(cs_loss(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cs_loss(std::vector<double>{1, 0}, std::vector<double>{-1, 0}) == -1.0);
  CHECK_THROWS(cs_loss(std::vector<double>{0, 0}, std::vector<double>{1, 0}));

  auto Z = ad::constant(Tensor::matrix({{1, 0}, {0, 2}}));
  auto Zn = ad::constant(Tensor::matrix({{1, 0}, {0, -1}}));
  CHECK(cs_loss(Z, Zn).value().item() == doctest::Approx(0.0));
}

TEST_CASE("similarity bundle with a single repeated unit vector") {
  Tensor e = Tensor::matrix({{0.6, 0.8}});
  auto b = build_similarity_bundle({e, e, e, e, e}, 0.1);
  CHECK(b.S1(0, 0) == doctest::Approx(1.0));
  CHECK(b.S2(0, 0) == doctest::Approx(1.0));
  CHECK(b.S3_prime(0, 0) == doctest::Approx(-1.0));
  CHECK(b.S(0, 0) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("orthogonal image and report rows give a zero S1") {
  Tensor Z = Tensor::matrix({{1, 0, 0, 0}, {0, 1, 0, 0}});
  Tensor U = Tensor::matrix({{0, 0, 1, 0}, {0, 0, 0, 1}});
  auto b = build_similarity_bundle({Z, U, Z, Z, Z}, 0.1);
  for (double v : b.S1.data()) CHECK(v == 0.0);
}

TEST_CASE("similarity bundle matches a per-entry scalar oracle") {
  std::mt19937_64 rng(42);
  for (std::size_t B : {2, 4, 8}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto fb = random_batch(rng, B, 8);
      auto b = build_similarity_bundle(fb, 0.1);
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < B; ++j) {
          const double s1 = oracle_cos(fb.Z, i, fb.U, j);
          const double s2 = oracle_cos(fb.Z_neg, i, fb.U_neg, j);
          const double s3 = oracle_cos(fb.Z, i, fb.U_syn, j);
          const double s3p = i == j ? -s3 : s3;
          CHECK(std::abs(b.S1(i, j) - s1) < 1e-12);
          CHECK(std::abs(b.S3(i, j) - s3) < 1e-12);
          CHECK(b.S3_prime(i, j) == (i == j ? -b.S3(i, j) : b.S3(i, j)));
          CHECK(std::abs(b.S(i, j) - (s1 + s2 + s3p) / 3.0) < 1e-12);
          CHECK(std::abs(b.S(i, j)) <= 1.0);
        }
    }
  }
}

TEST_CASE("zero-norm rows are reported with row and matrix") {
  Tensor Z = Tensor::matrix({{1, 0}, {0, 1}});
  Tensor bad = Tensor::matrix({{1, 0}, {0, 0}});
  try {
    build_similarity_bundle({Z, Z, Z, Z, bad}, 0.1);
    FAIL("expected domain_error");
  } catch (const std::domain_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("row 1") != std::string::npos);
    CHECK(msg.find("U_syn") != std::string::npos);
    CHECK(msg.find("S3") != std::string::npos);
  }
  CHECK_THROWS_AS(build_similarity_bundle({Z, Z, Z, Z, Tensor({3, 2}, 1.0)}, 0.1), std::invalid_argument);
}

TEST_CASE("clip term spot values") {
  CHECK(clip_term(Tensor::matrix({{0.4, 0.4}, {0.4, 0.4}}), 0.1) == doctest::Approx(0.0));
  CHECK(clip_term(Tensor::matrix({{1, 0}, {0, 1}}), 1.0) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(oracle_clip_term(Tensor::matrix({{1, 0}, {0, 1}}), 1.0, false) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(clip_term(Tensor::matrix({{1}}), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(clip_term(Tensor::matrix({{1, 0}, {0, 1}}), 0.0), std::invalid_argument);
}

TEST_CASE("clip term is invariant to joint rescaling of S and tau") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor S = randn(rng, 5, 5);
    for (double c : {0.1, 3.0, 17.0}) {
      Tensor Sc = S;
      for (double& v : Sc.data()) v *= c;
      CHECK(clip_term(Sc, 0.3 * c) == doctest::Approx(clip_term(S, 0.3)).epsilon(1e-12));
      CHECK(clip_term(Sc, 0.3 * c, LossForm::Literal) ==
            doctest::Approx(clip_term(S, 0.3, LossForm::Literal)).epsilon(1e-12));
    }
  }
}

TEST_CASE("clip loss") {
  Tensor sym = Tensor::matrix({{1, 0.2, -0.3}, {0.2, 0.5, 0.1}, {-0.3, 0.1, 0.9}});
  SimilarityBundle b;
  b.S = sym;
  b.tau = 0.1;
  CHECK(clip_loss(b) == doctest::Approx(clip_term(sym, 0.1)).epsilon(1e-14));

  b.S = Tensor::matrix({{1, 0}, {0, 1}});
  b.tau = 1.0;
  CHECK(clip_loss(b) == doctest::Approx(-1.0));

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto bundle = build_similarity_bundle(random_batch(rng, 4, 6), 0.1);
    const double expect = 0.5 * (oracle_clip_term(bundle.S, 0.1, false) + oracle_clip_term(transposed(bundle.S), 0.1, false));
    CHECK(std::abs(clip_loss(bundle) - expect) < 1e-12);
    const double literal =
        0.5 * (oracle_clip_term(bundle.S, 0.1, true) + oracle_clip_term(transposed(bundle.S), 0.1, true));
    CHECK(std::abs(clip_loss(bundle, LossForm::Literal) - literal) < 1e-12);
  }
}

TEST_CASE("clip term can be negative under the off-diagonal denominator") {
  CHECK(clip_term(Tensor::matrix({{1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}}), 0.1) < 0.0);
}

TEST_CASE("clip term monotonicity in diagonal and off-diagonal entries") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor S = randn(rng, 4, 4);
    const double base = clip_term(S, 0.2);
    const std::size_t i = trial % 4, j = (trial + 1) % 4;
    Tensor up = S;
    up(i, i) += 0.1 + std::abs(u(rng));
    CHECK(clip_term(up, 0.2) < base);
    Tensor off = S;
    off(i, j) += 0.1 + std::abs(u(rng));
    CHECK(clip_term(off, 0.2) > base);
  }
}

TEST_CASE("cross entropy") {
  const std::size_t V = 7;
  Tensor saturated({2, V}, 0.0);
  saturated(0, 3) = 20.0;
  saturated(1, 5) = 20.0;
  const std::vector<int> t{3, 5};
  CHECK(ce_loss(saturated, t, -1) < 1e-6);

  Tensor zeros({3, V}, 0.0);
  const std::vector<int> t3{0, 6, 2};
  CHECK(ce_loss(zeros, t3, -1) == doctest::Approx(std::log(7.0)).epsilon(1e-14));

  const std::vector<int> one{2};
  CHECK(ce_loss(Tensor::matrix({{1, 2, 3}}), one, -1) == doctest::Approx(0.40761).epsilon(1e-5));

  // B x T x V with a padded position
  Tensor logits({2, 2, 3}, std::vector<double>{1, 2, 3, 9, 9, 9, 0, 0, 0, 5, 1, 1});
  const std::vector<int> padded{2, 0, 1, 0};
  const std::vector<int> all_pad{0, 0, 0, 0};
  const double expected = (0.407605964444 + std::log(3.0)) / 2.0;
  CHECK(ce_loss(logits, padded, 0) == doctest::Approx(expected).epsilon(1e-11));
  CHECK_THROWS_AS(ce_loss(logits, all_pad, 0), std::invalid_argument);
}

TEST_CASE("final loss") {
  auto zero = final_loss(1.25, 4.0, 9.0, {0.0, 0.0});
  CHECK(zero.l_f == 1.25);
  LossWeights defaults;
  CHECK(defaults.beta == 0.1);
  CHECK(defaults.gamma == 0.2);
  auto f = final_loss(1.0, 2.0, 3.0, defaults);
  CHECK(f.l_f == doctest::Approx(1.8).epsilon(1e-15));
  CHECK(std::abs(f.l_f - (f.l_ce + 0.1 * f.l_cp + 0.2 * f.l_cs)) < 1e-12);
  CHECK_THROWS(final_loss(1, 1, 1, {-0.1, 0.2}));
}

TEST_CASE("loss forms parse") {
  CHECK(parse_loss_form("literal") == LossForm::Literal);
  CHECK(to_string(parse_loss_form("per-sample")) == "per-sample");
  CHECK_THROWS(parse_loss_form("sum-inside-log"));
}

TEST_CASE("composed losses pass gradient_check at 100 random points") {
  auto results = ad::run_gradient_cases(loss_gradient_cases(), 100, 77, 1e-5);
  CHECK(results.size() == 5);
  for (const auto& r : results) {
    INFO(r.name << " max error " << r.max_error);
    CHECK(r.max_error < 1e-4);
  }
}

TEST_CASE("synthesized rows sit on their segment and get closer to z as lambda grows") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    auto fb = random_batch(rng, 4, 6);
    for (std::size_t r = 0; r < 4; ++r) {
      auto syn = geometry::synthesize_hard_negative(fb.Z.row_span(r), fb.U.row_span(r), fb.U_neg.row_span(r), 0.7);
      std::copy(syn.begin(), syn.end(), fb.U_syn.row_span(r).begin());
    }
    CHECK(segment_residual(fb) < 1e-9);
  }
}

TEST_CASE("cosine to z can fall while the synthesized point approaches z") {
  // The synthesized point moves toward the Euclidean foot of z on the chord,
  // which can lie past the direction of maximal cosine.
  const std::vector<double> z{0.0, 0.0, 1.0};
  const std::vector<double> un{1.0, 0.0, 0.0};
  const std::vector<double> u{0.0, 0.8, -0.6};
  auto dist = [&](const std::vector<double>& x) {
    double s = 0;
    for (int i = 0; i < 3; ++i) s += (z[i] - x[i]) * (z[i] - x[i]);
    return std::sqrt(s);
  };
  auto lo = geometry::synthesize_hard_negative(z, u, un, 0.5);
  auto hi = geometry::synthesize_hard_negative(z, u, un, 1.0);
  CHECK(dist(hi) < dist(lo));
  CHECK(geometry::cosine_similarity(z, hi) < geometry::cosine_similarity(z, lo));
}
