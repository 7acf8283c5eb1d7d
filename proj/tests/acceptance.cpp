// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. Oracles here are written independently of the library.

#include <algorithm>
#include <cmath>
#include <ctime>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ithn/geometry.hpp"
#include "ithn/gradcheck.hpp"
#include "ithn/losses.hpp"
#include "ithn/trainer.hpp"
#include "metric_oracles.hpp"

using namespace ithn;

namespace {

int failures = 0;

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << "  " << title << "  (" << detail << ")\n"
            << std::flush;
  failures += !ok;
}

// Runs one criterion; an escaped exception counts as a failure.
void criterion(int id, const std::string& title, const std::function<bool(std::ostringstream&)>& body) {
  std::ostringstream detail;
  detail << std::setprecision(6);
  const double start = cpu_seconds();
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail << "exception: " << e.what();
  }
  detail << "; " << std::setprecision(3) << cpu_seconds() - start << " s cpu";
  report(id, title, ok, detail.str());
}

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  for (double& x : v) x = n(rng);
  return v;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double scalar_cos(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    ab += a(i, c) * b(j, c);
    aa += a(i, c) * a(i, c);
    bb += b(j, c) * b(j, c);
  }
  return ab / std::sqrt(aa * bb);
}

// ---- criteria ---------------------------------------------------------------

bool gradients(std::ostringstream& out) {
  const double start = cpu_seconds();
  auto cases = ad::primitive_gradient_cases();
  for (auto& c : losses::loss_gradient_cases()) cases.push_back(std::move(c));
  const auto results = ad::run_gradient_cases(cases, 100, 99);
  const double secs = cpu_seconds() - start;
  double worst = 0;
  std::string worst_name;
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.points == 100 && r.max_error < 1e-4;
    if (r.max_error >= worst) worst = r.max_error, worst_name = r.name;
  }
  bool has_losses = true;
  for (const char* name : {"L_CS", "L_CP", "L_CE", "L_F"}) {
    bool found = false;
    for (const auto& r : results) found = found || r.name.rfind(name, 0) == 0;
    has_losses = has_losses && found;
  }
  out << results.size() << " cases, worst " << worst << " (" << worst_name << ")";
  if (!has_losses) out << ", missing a composed loss";
  return ok && has_losses && secs < 60.0;
}

bool geometry_suite(std::ostringstream& out) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double idem = 0, colin = 0;
  std::size_t increases = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 2 + trial % 15;
    const auto z = random_vec(rng, d), u = random_vec(rng, d), un = random_vec(rng, d);
    for (bool clamp : {true, false}) {
      const auto p = geometry::project_to_segment(z, u, un, clamp);
      const auto again = geometry::project_to_segment(p.point, u, un, clamp);
      idem = std::max(idem, dist(p.point, again.point));
      // p - un must be parallel to u - un: residual of p against un + t (u - un).
      std::vector<double> line(d);
      double num = 0, den = 0;
      for (std::size_t i = 0; i < d; ++i) num += (p.point[i] - un[i]) * (u[i] - un[i]), den += (u[i] - un[i]) * (u[i] - un[i]);
      for (std::size_t i = 0; i < d; ++i) line[i] = un[i] + num / den * (u[i] - un[i]);
      colin = std::max(colin, dist(p.point, line));
    }
    double prev = INFINITY;
    // Increasing lambdas with random gaps, ending at 1.
    std::vector<double> lambdas{0.0, 1.0};
    for (int i = 0; i < 18; ++i) lambdas.push_back(unit(rng));
    std::sort(lambdas.begin(), lambdas.end());
    for (double l : lambdas) {
      const double dz = dist(geometry::synthesize_hard_negative(z, u, un, l), z);
      if (dz > prev + 1e-12) ++increases;
      prev = dz;
    }
  }
  double sched = 0;
  geometry::ScheduleConfig sc{0.01};
  for (int e = 0; e <= 100; ++e)
    sched = std::max(sched, std::abs(geometry::lambda_schedule(sc, e) - (1.0 - std::exp(-0.01 * e))));
  out << "idempotence " << idem << ", collinearity " << colin << ", distance increases " << increases
      << ", schedule " << sched;
  return idem < 1e-9 && colin < 1e-9 && increases == 0 && sched <= 1e-12;
}

bool similarity_bundle(std::ostringstream& out) {
  std::mt19937_64 rng(11);
  double worst = 0;
  for (std::size_t b : {2u, 4u, 8u}) {
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t d = 3 + trial;
      auto m = [&] {
        Tensor t({b, d});
        for (double& x : t.data()) x = std::normal_distribution<double>(0, 1)(rng);
        return t;
      };
      losses::FeatureBatch fb{m(), m(), m(), m(), m()};
      const auto got = losses::build_similarity_bundle(fb);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j) {
          const double s1 = scalar_cos(fb.Z, i, fb.U, j);
          const double s2 = scalar_cos(fb.Z_neg, i, fb.U_neg, j);
          const double s3 = scalar_cos(fb.Z, i, fb.U_syn, j);
          const double s3p = i == j ? -s3 : s3;
          const double s = (s1 + s2 + s3p) / 3.0;
          for (auto [g, e] : {std::pair{got.S1(i, j), s1}, {got.S2(i, j), s2}, {got.S3(i, j), s3},
                              {got.S3_prime(i, j), s3p}, {got.S(i, j), s}})
            worst = std::max(worst, std::abs(g - e));
        }
    }
  }
  out << "max entry error " << worst;
  return worst < 1e-12;
}

bool clip_spot_values(std::ostringstream& out) {
  Tensor id({2, 2});
  id(0, 0) = id(1, 1) = 1.0;
  const double spot = losses::clip_term(id, 1.0);
  // With the off-diagonal denominator an all-equal B x B matrix scores
  // log(B - 1), so the zero value is the B = 2 case.
  Tensor flat({2, 2}), flat4({4, 4});
  for (double& x : flat.data()) x = 0.37;
  for (double& x : flat4.data()) x = 0.37;
  const double zero = losses::clip_term(flat, 0.5);
  const double log3 = losses::clip_term(flat4, 0.5);

  std::mt19937_64 rng(5);
  double inv = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor s({5, 5}), scaled({5, 5});
    const double c = 0.25 + trial * 0.3, tau = 0.05 + 0.1 * trial;
    for (std::size_t i = 0; i < s.size(); ++i) {
      s.data()[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
      scaled.data()[i] = c * s.data()[i];
    }
    for (auto form : {losses::LossForm::PerSample, losses::LossForm::Literal})
      inv = std::max(inv, std::abs(losses::clip_term(s, tau, form) - losses::clip_term(scaled, c * tau, form)));
  }
  out << "spot " << spot << ", all-equal " << zero << " (B=4: " << log3 << "), rescaling " << inv;
  return spot == -1.0 && std::abs(zero) < 1e-15 && std::abs(log3 - std::log(3.0)) < 1e-12 && inv < 1e-12;
}

bool metric_oracles(std::ostringstream& out) {
  using namespace oracle;
  std::mt19937_64 rng(31);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = random_corpus(rng);
    for (int n = 1; n <= 4; ++n) worst = std::max(worst, std::abs(metrics::bleu(c, n) - oracle_bleu(c, n)));
    worst = std::max(worst, std::abs(metrics::rouge_l(c) - oracle_rouge(c)));
    worst = std::max(worst, std::abs(metrics::cider(c) - oracle_cider(c)));
    worst = std::max(worst, std::abs(metrics::diversity(c.candidates) - oracle_diversity(c.candidates)));
    Tensor s({6, 6});
    for (double& x : s.data()) x = trial % 2 ? std::uniform_int_distribution<int>(0, 3)(rng)
                                             : std::uniform_real_distribution<double>(-1, 1)(rng);
    for (std::size_t k = 1; k <= 6; ++k) worst = std::max(worst, std::abs(metrics::recall_at_k(s, k) - oracle_recall(s, k)));
  }
  const auto cc = metrics::clipped_ngram_counts(single("the the the the the the the", "the cat is on the mat"), 1);
  const bool clipped = cc.matched == 2 && cc.total == 7;
  const double div = metrics::diversity({words("a a a a a")});
  out << "max oracle error " << worst << ", clipped " << cc.matched << "/" << cc.total << ", diversity " << div;
  return worst < 1e-9 && clipped && std::abs(div - 1.0 / 24.0) < 1e-15;
}

bool memorization(std::ostringstream& out) {
  const double start = cpu_seconds();
  corpus::CorpusConfig cc;
  cc.n_pairs = 5;
  cc.seed = 3;
  const auto c = corpus::generate_corpus(cc);
  trainer::TrainConfig cfg;
  cfg.strategy = trainer::Strategy::Plain;
  cfg.epochs = 200;
  cfg.batch_size = 5;
  const auto r = trainer::train(cfg, c);
  double best_ce = INFINITY;
  std::size_t reached = 0;
  for (const auto& e : r.report.epochs)
    if (e.mean.l_ce < best_ce && (best_ce = e.mean.l_ce) < 0.05 && reached == 0) reached = e.epoch;
  std::size_t verbatim = 0;
  for (const auto& s : c.samples)
    verbatim += c.vocab.decode(model::generate(model::encode(s.image_features, r.params), r.params, cfg.t_max)) ==
                s.report_tokens;
  const double secs = cpu_seconds() - start;
  out << "L_CE < 0.05 at epoch " << reached << ", final " << r.report.epochs.back().mean.l_ce << ", verbatim "
      << verbatim << "/5";
  return reached > 0 && verbatim == 5 && secs < 120.0;
}

bool ablation(std::ostringstream& out) {
  const double start = cpu_seconds();
  const auto c = corpus::generate_corpus(corpus::CorpusConfig{});
  using trainer::Strategy;
  const auto variants = trainer::strategy_variants(
      trainer::TrainConfig{}, {Strategy::Plain, Strategy::Static, Strategy::Mochi, Strategy::Ithn});
  const auto rows = trainer::run_ablation(variants, {1, 2, 3}, c);
  const double secs = cpu_seconds() - start;
  const auto& plain = rows[0].mean;
  const auto& stat = rows[1].mean;
  const auto& mochi = rows[2].mean;
  const auto& ithn = rows[3].mean;
  bool complete = true;
  for (const auto& r : rows) complete = complete && r.failures.empty();
  for (const auto& r : rows)
    std::cout << "      " << std::left << std::setw(7) << r.label << " recall@1 " << r.mean.recall_at_1
              << "  diversity " << r.mean.diversity << "  bleu4 " << r.mean.bleu4 << "  runs " << r.runs.size()
              << "/3\n";
  const bool recall = ithn.recall_at_1 >= stat.recall_at_1 && stat.recall_at_1 >= plain.recall_at_1;
  const bool div = ithn.diversity >= stat.diversity && stat.diversity >= plain.diversity;
  out << "vocab " << c.vocab.size() << "; recall@1 ithn/static/plain " << ithn.recall_at_1 << "/" << stat.recall_at_1
      << "/" << plain.recall_at_1 << ", diversity " << ithn.diversity << "/" << stat.diversity << "/"
      << plain.diversity << "; mochi (not gated) recall@1 " << mochi.recall_at_1 << ", diversity " << mochi.diversity;
  return complete && recall && div && secs < 900.0;
}

bool determinism(std::ostringstream& out) {
  corpus::CorpusConfig cc;
  const auto c1 = corpus::generate_corpus(cc), c2 = corpus::generate_corpus(cc);
  trainer::TrainConfig cfg;
  cfg.seed = 17;
  const auto a = trainer::train(cfg, c1), b = trainer::train(cfg, c2);
  std::ostringstream ka, kb;
  model::save_checkpoint(ka, a.params, {});
  model::save_checkpoint(kb, b.params, {});
  const bool report_same = trainer::report_json(a.report) == trainer::report_json(b.report);
  const bool params_same = ka.str() == kb.str();
  out << "report " << (report_same ? "identical" : "differs") << ", parameters "
      << (params_same ? "identical" : "differ");
  return report_same && params_same;
}

}  // namespace

int main() {
  std::cout << std::setprecision(6);
  criterion(1, "gradient suite", gradients);
  criterion(2, "geometry suite", geometry_suite);
  criterion(3, "similarity bundle", similarity_bundle);
  criterion(4, "contrastive term spot values", clip_spot_values);
  criterion(5, "metric oracle equivalence", metric_oracles);
  criterion(6, "memorization", memorization);
  criterion(7, "directional ablation", ablation);
  criterion(8, "determinism", determinism);
  std::cout << (failures ? std::to_string(failures) + " criterion(s) failed\n" : "all criteria passed\n");
  return failures ? 1 : 0;
}
