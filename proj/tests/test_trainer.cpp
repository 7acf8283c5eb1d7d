#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "ithn/gradcheck.hpp"
#include "ithn/trainer.hpp"

using namespace ithn;
using namespace ithn::trainer;

namespace {

corpus::Corpus small_corpus(std::size_t n, std::uint64_t seed = 1) {
  corpus::CorpusConfig cc;
  cc.n_pairs = n;
  cc.seed = seed;
  return corpus::generate_corpus(cc);
}

TrainConfig quick(Strategy s) {
  TrainConfig t;
  t.strategy = s;
  t.epochs = 3;
  t.batch_size = 8;
  t.d = 8;
  t.hidden = 12;
  return t;
}

double l_f_value(const model::ModelParameters& p, const TrainData& data, std::span<const std::size_t> batch,
                 const TrainConfig& cfg, const Tensor* u_syn) {
  std::mt19937_64 rng(0);
  return build_step(p, data, batch, 0.0, cfg, rng, u_syn).breakdown.l_f;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("validation split is seeded and sized by floor") {
  auto a = split_corpus(200, 0.1, 4);
  CHECK(a.val.size() == 20);
  CHECK(a.train.size() == 180);
  auto b = split_corpus(200, 0.1, 4);
  CHECK(a.val == b.val);
  CHECK(split_corpus(200, 0.1, 5).val != a.val);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  all.insert(a.val.begin(), a.val.end());
  CHECK(all.size() == 200);
  CHECK(split_corpus(5, 0.1, 1).val.empty());
}

TEST_CASE("config keys round trip") {
  TrainConfig a;
  a.strategy = Strategy::Mochi;
  a.schedule.alpha = 0.001;
  a.loss_form = losses::LossForm::Literal;
  a.stop_grad_negatives = false;
  TrainConfig b;
  for (const auto& [k, v] : a.key_values()) CHECK(b.set(k, v));
  CHECK(b.key_values() == a.key_values());
  CHECK(b.hash() == a.hash());
  b.seed = 99;
  CHECK(b.hash() == a.hash());  // seed travels separately
  b.set("gamma", "0");
  CHECK(b.hash() != a.hash());
  CHECK_FALSE(b.set("gamme", "0"));
  CHECK_THROWS(b.set("epochs", "many"));
  CHECK_THROWS(b.set("strategy", "hardest"));
  CHECK_THROWS(b.set("stop_grad_negatives", "maybe"));
  TrainConfig bad;
  bad.batch_size = 1;
  CHECK_THROWS_WITH(bad.validate(), doctest::Contains("batch_size"));
}

TEST_CASE("mined partners come from the training split") {
  auto c = small_corpus(60);
  auto cfg = quick(Strategy::Ithn);
  auto data = TrainData::prepare(c, cfg);
  std::set<std::size_t> train(data.split.train.begin(), data.split.train.end());
  for (std::size_t i : data.split.train) {
    CHECK(data.partner[i] != i);
    CHECK(train.count(data.partner[i]) == 1);
    CHECK(data.pool[i].size() == cfg.k);
    CHECK(data.pool[i].front() == data.partner[i]);
  }
}

TEST_CASE("lambda passthrough and monotonicity") {
  auto c = small_corpus(40);
  auto cfg = quick(Strategy::Ithn);
  cfg.epochs = 6;
  cfg.schedule.alpha = 0.3;
  auto r = train(cfg, c).report;
  REQUIRE(r.epochs.size() == 6);
  for (std::size_t e = 0; e < 6; ++e) {
    const double expected = 1.0 - std::exp(-0.3 * static_cast<double>(e + 1));
    CHECK(std::abs(r.epochs[e].lambda - expected) < 1e-12);
    CHECK(r.epochs[e].epoch == e + 1);
    if (e > 0) CHECK(r.epochs[e].lambda > r.epochs[e - 1].lambda);
  }
  cfg.strategy = Strategy::Static;
  for (const auto& e : train(cfg, c).report.epochs) CHECK(e.lambda == 0.0);
}

TEST_CASE("identical config and seed give byte-identical reports") {
  auto c = small_corpus(40);
  for (Strategy s : {Strategy::Plain, Strategy::Mochi, Strategy::Ithn}) {
    auto cfg = quick(s);
    auto a = train(cfg, c), b = train(cfg, c);
    CHECK(report_json(a.report) == report_json(b.report));
    std::ostringstream ca, cb;
    write_step_csv(ca, a.steps);
    write_step_csv(cb, b.steps);
    CHECK(ca.str() == cb.str());
    cfg.seed = 2;
    CHECK(report_json(train(cfg, c).report) != report_json(a.report));
  }
}

TEST_CASE("report carries identity and no wall clock") {
  auto c = small_corpus(40);
  auto cfg = quick(Strategy::Ithn);
  auto r = train(cfg, c).report;
  const auto json = report_json(r);
  CHECK(json.find("wall") == std::string::npos);
  CHECK(json.find("\"config_hash\"") != std::string::npos);
  CHECK(json.find("\"seed\"") != std::string::npos);
  CHECK(r.config_hash == cfg.hash());
  CHECK(r.corpus_hash == corpus_content_hash(c));
  CHECK(r.epochs.size() == cfg.epochs);
  CHECK(r.eval_split == "val");
}

TEST_CASE("a lone leftover sample joins the previous batch") {
  auto c = small_corpus(18);  // 17 training samples after a floor(1.8) = 1 hold-out
  auto cfg = quick(Strategy::Ithn);
  cfg.batch_size = 16;
  cfg.epochs = 1;
  auto r = train(cfg, c);
  CHECK(r.report.epochs[0].steps == 1);
  cfg.batch_size = 8;
  CHECK(train(cfg, c).report.epochs[0].steps == 2);
}

TEST_CASE("plain strategy has no negative branch") {
  auto c = small_corpus(30);
  auto cfg = quick(Strategy::Plain);
  auto data = TrainData::prepare(c, cfg);
  model::ModelParameters p(model_config(cfg, c));
  std::mt19937_64 rng(1);
  std::vector<std::size_t> batch(data.split.train.begin(), data.split.train.begin() + 6);
  auto sg = build_step(p, data, batch, 0.5, cfg, rng);
  CHECK(sg.breakdown.l_cs == 0.0);
  CHECK(sg.U_syn.size() == 0);
  CHECK(sg.breakdown.l_f == doctest::Approx(sg.breakdown.l_ce + cfg.weights.beta * sg.breakdown.l_cp).epsilon(1e-14));
}

TEST_CASE("max step uses the current forward features") {
  auto c = small_corpus(30);
  auto cfg = quick(Strategy::Ithn);
  auto data = TrainData::prepare(c, cfg);
  model::ModelParameters p(model_config(cfg, c));
  std::mt19937_64 rng(1);
  std::vector<std::size_t> batch(data.split.train.begin(), data.split.train.begin() + 6);
  auto sg = build_step(p, data, batch, 0.4, cfg, rng);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto expect = geometry::synthesize_hard_negative(sg.Z.row_span(i), sg.U.row_span(i), sg.U_neg.row_span(i), 0.4);
    for (std::size_t j = 0; j < expect.size(); ++j) CHECK(sg.U_syn(i, j) == expect[j]);
  }
  // Synthesized rows lie on the partner-to-anchor segment.
  losses::FeatureBatch fb{sg.Z, sg.U, sg.Z, sg.U_neg, sg.U_syn};
  CHECK(losses::segment_residual(fb) < 1e-9);

  cfg.strategy = Strategy::Static;
  auto st = build_step(p, data, batch, 0.4, cfg, rng);
  CHECK(st.U_syn == st.U_neg);
}

TEST_CASE("max-step effect: larger lambda moves negatives closer and raises the triplet objective") {
  auto c = small_corpus(60);
  auto cfg = quick(Strategy::Ithn);
  auto data = TrainData::prepare(c, cfg);
  model::ModelParameters p(model_config(cfg, c));
  std::mt19937_64 rng(1);
  std::vector<std::size_t> batch(data.split.train.begin(), data.split.train.begin() + 16);
  auto sg = build_step(p, data, batch, 0.0, cfg, rng);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double prev_dist = std::numeric_limits<double>::infinity(), prev_loss = -1;
    for (int step = 0; step <= 20; ++step) {
      const double lambda = step / 20.0;
      const auto syn = geometry::synthesize_hard_negative(sg.Z.row_span(i), sg.U.row_span(i), sg.U_neg.row_span(i), lambda);
      const double dist = distance(syn, sg.Z.row_span(i));
      const double loss = geometry::triplet_loss_and_grad(sg.Z.row_span(i), sg.U.row_span(i), syn, cfg.triplet).loss;
      CHECK(dist <= prev_dist + 1e-12);
      CHECK(loss >= prev_loss - 1e-12);
      prev_dist = dist;
      prev_loss = loss;
    }
  }
}

TEST_CASE("min-step effect: a small gradient step does not raise the objective") {
  auto c = small_corpus(60);
  std::mt19937_64 pick(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto cfg = quick(trial % 3 == 0 ? Strategy::Plain : (trial % 3 == 1 ? Strategy::Static : Strategy::Ithn));
    cfg.seed = static_cast<std::uint64_t>(trial + 1);
    auto data = TrainData::prepare(c, cfg);
    model::ModelParameters p(model_config(cfg, c));
    std::vector<std::size_t> batch = data.split.train;
    std::shuffle(batch.begin(), batch.end(), pick);
    batch.resize(8);

    std::mt19937_64 rng(3);
    auto sg = build_step(p, data, batch, 0.3, cfg, rng);
    const Tensor held = sg.U_syn;
    const Tensor* fixed = cfg.strategy == Strategy::Plain ? nullptr : &held;
    const double before = l_f_value(p, data, batch, cfg, fixed);
    CHECK(before == doctest::Approx(sg.breakdown.l_f).epsilon(1e-12));
    const auto grads = ad::backward(sg.l_f);

    // Backtracking from lr = 1e-4.
    bool decreased = false;
    double lr = 1e-4;
    for (int halving = 0; halving < 10 && !decreased; ++halving, lr /= 2) {
      auto q = p.clone();
      Optimizer opt(OptimizerKind::Sgd, q);
      ad::GradientMap remapped;
      for (std::size_t g = 0; g < p.groups().size(); ++g)
        remapped[q.groups()[g].second.node()] = grads.at(p.groups()[g].second.node());
      opt.step(q, remapped, lr);
      decreased = l_f_value(q, data, batch, cfg, fixed) <= before + 1e-9;
    }
    INFO("trial " << trial);
    CHECK(decreased);
  }
}

TEST_CASE("unstopped negatives pass a finite-difference check") {
  auto c = small_corpus(30);
  auto cfg = quick(Strategy::Ithn);
  cfg.d = 4;
  cfg.hidden = 5;
  cfg.stop_grad_negatives = false;
  auto data = TrainData::prepare(c, cfg);
  model::ModelParameters p(model_config(cfg, c));
  std::vector<std::size_t> batch(data.split.train.begin(), data.split.train.begin() + 3);
  for (const char* group : {"enc_w2", "attn_v", "ffn_b2"}) {
    auto f = [&](const ad::Var& x) {
      std::mt19937_64 rng(1);
      return build_step(p.with_group(group, x), data, batch, 0.6, cfg, rng).l_f;
    };
    const double err = ad::gradient_check(f, p.get(group).value());
    INFO(group << " " << err);
    CHECK(err < 1e-4);
  }
  // With the stop-gradient default the synthesized rows are constants.
  cfg.stop_grad_negatives = true;
  std::mt19937_64 rng(1);
  auto stopped = build_step(p, data, batch, 0.6, cfg, rng);
  std::mt19937_64 rng2(1);
  cfg.stop_grad_negatives = false;
  auto live = build_step(p, data, batch, 0.6, cfg, rng2);
  CHECK(stopped.breakdown.l_f == doctest::Approx(live.breakdown.l_f).epsilon(1e-12));
  const auto gs = ad::backward(stopped.l_f), gl = ad::backward(live.l_f);
  CHECK(gs.at(p.get("enc_w2").node()) != gl.at(p.get("enc_w2").node()));
}

TEST_CASE("mochi mixes toward the anchor feature") {
  auto c = small_corpus(40);
  auto cfg = quick(Strategy::Mochi);
  auto data = TrainData::prepare(c, cfg);
  model::ModelParameters p(model_config(cfg, c));
  std::mt19937_64 rng(1);
  std::vector<std::size_t> batch(data.split.train.begin(), data.split.train.begin() + 5);
  auto at0 = build_step(p, data, batch, 0.0, cfg, rng);
  std::mt19937_64 rng_b(1);
  auto at1 = build_step(p, data, batch, 1.0, cfg, rng_b);
  REQUIRE(at1.U_syn.shape() == at1.U.shape());
  for (std::size_t i = 0; i < at1.U.size(); ++i) CHECK(at1.U_syn[i] == doctest::Approx(at1.U[i]).epsilon(1e-14));
  // At lambda = 0 each row is a pool neighbour's feature: unit norm and not the anchor's.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double n = 0;
    for (double v : at0.U_syn.row_span(i)) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("divergence aborts with the last good parameters") {
  auto c = small_corpus(40);
  auto cfg = quick(Strategy::Ithn);
  cfg.learning_rate = 1e9;
  cfg.epochs = 5;
  bool threw = false;
  try {
    train(cfg, c);
  } catch (const TrainingDiverged& e) {
    threw = true;
    for (const auto& [_, v] : e.last_good.groups()) CHECK(v.value().all_finite());
    CHECK(e.partial.epochs.size() >= 1);
  }
  CHECK(threw);
}

TEST_CASE("memorization of a five-pair corpus") {
  auto c = small_corpus(5, 3);
  TrainConfig cfg;
  cfg.strategy = Strategy::Plain;
  cfg.epochs = 200;
  cfg.batch_size = 5;
  auto r = train(cfg, c);
  CHECK(r.report.eval_split == "train");
  const double final_ce = r.report.epochs.back().mean.l_ce;
  MESSAGE("final L_CE " << final_ce);
  CHECK(final_ce < 0.05);
  for (const auto& s : c.samples) {
    const auto z = model::encode(s.image_features, r.params);
    CHECK(c.vocab.decode(model::generate(z, r.params, cfg.t_max)) == s.report_tokens);
  }
}

TEST_CASE("ablation table cardinality and failure marking") {
  auto c = small_corpus(30);
  auto base = quick(Strategy::Plain);
  base.epochs = 1;
  auto variants = strategy_variants(base, {Strategy::Plain, Strategy::Ithn});
  auto broken = base;
  broken.batch_size = 1000;
  variants.push_back({"oversized", broken});
  auto rows = run_ablation(variants, {1, 2}, c);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].label == "plain");
  CHECK(rows[0].runs.size() == 2);
  CHECK(rows[1].runs.size() == 2);
  CHECK(rows[2].runs.empty());
  CHECK(rows[2].failures.size() == 2);
  std::ostringstream os;
  write_ablation_table(os, rows);
  const auto text = os.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(text.find("oversized\t0/2") != std::string::npos);
  CHECK_THROWS(run_ablation({variants[0]}, {1}, c));

  auto alphas = alpha_variants(base, {0.1, 0.01, 0.001});
  REQUIRE(alphas.size() == 3);
  CHECK(alphas[1].label == "alpha=0.01");
  CHECK(alphas[2].cfg.schedule.alpha == 0.001);
}
