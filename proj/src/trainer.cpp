#include "ithn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "ithn/util.hpp"

namespace ithn::trainer {

using namespace ithn::ad;
using corpus::Vocabulary;

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Plain: return "plain";
    case Strategy::Static: return "static";
    case Strategy::Mochi: return "mochi";
    case Strategy::Ithn: return "ithn";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  for (Strategy x : {Strategy::Plain, Strategy::Static, Strategy::Mochi, Strategy::Ithn})
    if (to_string(x) == s) return x;
  throw std::invalid_argument("unknown strategy '" + s + "' (expected plain, static, mochi or ithn)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd or adam)");
}

// ---- config -------------------------------------------------------------------

namespace {

std::size_t parse_count(const std::string& key, const std::string& v) {
  const int n = util::parse_int(v);
  if (n < 0) throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 2) fail("batch_size must be >= 2 (the contrastive term needs off-diagonal negatives)");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (!(lr_decay > 0 && lr_decay <= 1)) fail("lr_decay must lie in (0, 1]");
  if (lr_patience < 1) fail("lr_patience must be >= 1");
  if (!(tau > 0)) fail("tau must be positive");
  if (!(schedule.alpha >= 0)) fail("alpha must be >= 0");
  if (!(weights.beta >= 0) || !(weights.gamma >= 0)) fail("beta and gamma must be >= 0");
  if (!(val_fraction >= 0 && val_fraction < 1)) fail("val_fraction must lie in [0, 1)");
  if (k < 1) fail("k must be >= 1");
  if (d < 1 || hidden < 1) fail("d and hidden must be >= 1");
  if (t_max < 2) fail("t_max must be >= 2");
  if (!(init_scale > 0)) fail("init_scale must be positive");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::key_values() const {
  using util::format_double;
  return {
      {"strategy", to_string(strategy)},
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"optimizer", to_string(optimizer)},
      {"learning_rate", format_double(learning_rate)},
      {"lr_decay", format_double(lr_decay)},
      {"lr_patience", std::to_string(lr_patience)},
      {"alpha", format_double(schedule.alpha)},
      {"beta", format_double(weights.beta)},
      {"gamma", format_double(weights.gamma)},
      {"tau", format_double(tau)},
      {"margin", format_double(triplet.margin)},
      {"loss_form", losses::to_string(loss_form)},
      {"k", std::to_string(k)},
      {"stop_grad_negatives", bool_str(stop_grad_negatives)},
      {"clamp_projection", bool_str(clamp_projection)},
      {"val_fraction", format_double(val_fraction)},
      {"d", std::to_string(d)},
      {"hidden", std::to_string(hidden)},
      {"t_max", std::to_string(t_max)},
      {"init_scale", format_double(init_scale)},
      {"seed", std::to_string(seed)},
  };
}

bool TrainConfig::set(const std::string& key, const std::string& v) {
  using util::parse_double;
  if (key == "strategy") strategy = parse_strategy(v);
  else if (key == "epochs") epochs = parse_count(key, v);
  else if (key == "batch_size") batch_size = parse_count(key, v);
  else if (key == "optimizer") optimizer = parse_optimizer(v);
  else if (key == "learning_rate") learning_rate = parse_double(v);
  else if (key == "lr_decay") lr_decay = parse_double(v);
  else if (key == "lr_patience") lr_patience = parse_count(key, v);
  else if (key == "alpha") schedule.alpha = parse_double(v);
  else if (key == "beta") weights.beta = parse_double(v);
  else if (key == "gamma") weights.gamma = parse_double(v);
  else if (key == "tau") tau = parse_double(v);
  else if (key == "margin") triplet.margin = parse_double(v);
  else if (key == "loss_form") loss_form = losses::parse_loss_form(v);
  else if (key == "k") k = parse_count(key, v);
  else if (key == "stop_grad_negatives") stop_grad_negatives = parse_bool(key, v);
  else if (key == "clamp_projection") clamp_projection = parse_bool(key, v);
  else if (key == "val_fraction") val_fraction = parse_double(v);
  else if (key == "d") d = parse_count(key, v);
  else if (key == "hidden") hidden = parse_count(key, v);
  else if (key == "t_max") t_max = parse_count(key, v);
  else if (key == "init_scale") init_scale = parse_double(v);
  else if (key == "seed") seed = std::stoull(v);
  else return false;
  return true;
}

std::uint64_t TrainConfig::hash() const {
  std::string s;
  for (const auto& [k2, v] : key_values())
    if (k2 != "seed") s += k2 + "=" + v + "\n";
  return util::fnv1a64(s);
}

// ---- data -------------------------------------------------------------------

Split split_corpus(std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
  Split s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

EncodedReport encode_report(const Vocabulary& vocab, const std::vector<std::string>& tokens) {
  EncodedReport r;
  const auto ids = vocab.encode(tokens);
  r.input.push_back(Vocabulary::kBos);
  r.input.insert(r.input.end(), ids.begin(), ids.end());
  r.target = ids;
  r.target.push_back(Vocabulary::kEos);
  return r;
}

TrainData TrainData::prepare(const corpus::Corpus& corpus, const TrainConfig& cfg) {
  TrainData data;
  data.corpus = &corpus;
  const std::size_t n = corpus.samples.size();
  for (const auto& s : corpus.samples) {
    data.reports.push_back(encode_report(corpus.vocab, s.report_tokens));
    if (data.reports.back().input.size() > cfg.t_max)
      throw std::invalid_argument("report " + std::to_string(s.id) + " needs " +
                                  std::to_string(data.reports.back().input.size()) + " decoder positions, t_max is " +
                                  std::to_string(cfg.t_max));
  }
  data.split = split_corpus(n, cfg.val_fraction, cfg.seed);
  const auto& train = data.split.train;
  if (train.size() < cfg.batch_size)
    throw std::invalid_argument("training split holds " + std::to_string(train.size()) +
                                " samples, fewer than one batch of " + std::to_string(cfg.batch_size));

  std::vector<corpus::PairedSample> train_samples;
  for (std::size_t i : train) train_samples.push_back(corpus.samples[i]);
  // The pool cannot be larger than the other training samples.
  const std::size_t k = std::min(cfg.k, train.size() - 1);
  data.index = geometry::mine_prior_negatives(corpus::embed_reports_prior(train_samples), k);

  std::map<int, std::size_t> by_id;
  for (std::size_t i = 0; i < n; ++i) by_id[corpus.samples[i].id] = i;
  data.partner.assign(n, n);
  data.pool.assign(n, {});
  for (std::size_t i : train) {
    const int id = corpus.samples[i].id;
    data.partner[i] = by_id.at(data.index.partner.at(id));
    for (int j : data.index.neighbor_pool.at(id)) data.pool[i].push_back(by_id.at(j));
  }
  return data;
}

// ---- step -------------------------------------------------------------------

namespace {

Tensor rows_of(const std::vector<std::vector<double>>& rows) {
  Tensor t({rows.size(), rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), t.row_span(i).begin());
  return t;
}

Tensor image_batch(const corpus::Corpus& c, std::span<const std::size_t> idx) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i : idx) rows.push_back(c.samples[i].image_features);
  return rows_of(rows);
}

std::vector<double> row_vec(const Tensor& t, std::size_t r) {
  auto s = t.row_span(r);
  return {s.begin(), s.end()};
}

// (1 - lambda) * un + lambda * (un + t (u - un)), t the clamped projection
// coefficient of z, kept in the graph so gradients reach z, u and un.
Var synthesize_row_graph(const Var& z, const Var& u, const Var& un, double lambda, bool clamp_t) {
  Var dir = sub(u, un);
  Var t = divide(row_dot(sub(z, un), dir), row_dot(dir, dir));
  if (clamp_t) t = ad::clamp(t, 0.0, 1.0);
  return add(un, scale(mul_rows(dir, t), lambda));
}

}  // namespace

StepGraph build_step(const model::ModelParameters& params, const TrainData& data, std::span<const std::size_t> batch,
                     double lambda, const TrainConfig& cfg, std::mt19937_64& rng, const Tensor* u_syn_override) {
  const auto& corpus = *data.corpus;
  const std::size_t B = batch.size();
  if (B < 2) throw std::invalid_argument("build_step: batch of " + std::to_string(B) + " (need at least 2)");

  StepGraph out;
  Var Z = model::encode(constant(image_batch(corpus, batch)), params);
  std::vector<Var> logits, U;
  std::vector<int> targets;
  for (std::size_t i = 0; i < B; ++i) {
    const auto& rep = data.reports[batch[i]];
    auto g = model::decode(slice_rows(Z, i, i + 1), rep.input, params);
    logits.push_back(g.logits);
    U.push_back(g.pooled);
    targets.insert(targets.end(), rep.target.begin(), rep.target.end());
  }
  Var u = concat_rows(U);
  Var l_ce = losses::ce_loss(concat_rows(logits), targets, Vocabulary::kPad);
  out.Z = Z.value();
  out.U = u.value();

  if (cfg.strategy == Strategy::Plain) {
    // No negative branch: S = S1 and no image dissimilarity term.
    Var l_cp = losses::clip_loss(cosine_matrix(Z, u), cfg.tau, cfg.loss_form);
    out.l_f = add(l_ce, scale(l_cp, cfg.weights.beta));
    out.breakdown = {l_ce.value().item(), l_cp.value().item(), 0.0, out.l_f.value().item()};
    return out;
  }

  std::vector<std::size_t> neg(B);
  for (std::size_t i = 0; i < B; ++i) {
    neg[i] = data.partner.at(batch[i]);
    if (neg[i] >= corpus.samples.size()) throw std::invalid_argument("build_step: sample without a mined partner");
  }
  Var Zn = model::encode(constant(image_batch(corpus, neg)), params);
  std::vector<Var> Un;
  for (std::size_t i = 0; i < B; ++i)
    Un.push_back(model::decode(slice_rows(Zn, i, i + 1), data.reports[neg[i]].input, params).pooled);
  Var un = concat_rows(Un);
  out.U_neg = un.value();

  // Max step: negatives from the current forward values.
  Var u_syn;
  if (u_syn_override) {
    if (u_syn_override->shape() != un.shape()) throw ShapeError("build_step override", un.shape(), u_syn_override->shape());
    u_syn = constant(*u_syn_override);
  } else if (cfg.strategy == Strategy::Static) {
    u_syn = cfg.stop_grad_negatives ? constant(un.value()) : un;
  } else if (cfg.strategy == Strategy::Mochi) {
    std::vector<Var> rows;
    for (std::size_t i = 0; i < B; ++i) {
      const auto& pool = data.pool.at(batch[i]);
      const std::size_t j = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      const auto zj = model::encode(corpus.samples[j].image_features, params);
      const auto uj = model::decode(zj, data.reports[j].input, params).pooled_feature;
      Var ui = slice_rows(u, i, i + 1);
      if (cfg.stop_grad_negatives) rows.push_back(constant(Tensor::row(geometry::mochi_synthesize(row_vec(out.U, i), uj, lambda))));
      else rows.push_back(add(scale(constant(Tensor::row(uj)), 1.0 - lambda), scale(ui, lambda)));
    }
    u_syn = concat_rows(rows);
  } else {
    std::vector<Var> rows;
    for (std::size_t i = 0; i < B; ++i) {
      const auto zi = row_vec(out.Z, i), ui = row_vec(out.U, i), uni = row_vec(out.U_neg, i);
      bool degenerate = false;
      geometry::Vec syn;
      try {
        syn = geometry::synthesize_hard_negative(zi, ui, uni, lambda, cfg.clamp_projection);
      } catch (const geometry::DegenerateSegmentError&) {
        // u and its partner coincide: no segment to move along.
        degenerate = true;
        syn = uni;
        ++out.degenerate_segments;
      }
      if (cfg.stop_grad_negatives) rows.push_back(constant(Tensor::row(syn)));
      else if (degenerate) rows.push_back(slice_rows(un, i, i + 1));
      else
        rows.push_back(synthesize_row_graph(slice_rows(Z, i, i + 1), slice_rows(u, i, i + 1), slice_rows(un, i, i + 1),
                                            lambda, cfg.clamp_projection));
    }
    u_syn = concat_rows(rows);
  }
  out.U_syn = u_syn.value();

  // Min step objective.
  auto sim = losses::build_similarity(Z, u, Zn, un, u_syn);
  Var l_cp = losses::clip_loss(sim.S, cfg.tau, cfg.loss_form);
  Var l_cs = losses::cs_loss(Z, Zn);
  out.l_f = losses::final_loss(l_ce, l_cp, l_cs, cfg.weights);
  out.breakdown = {l_ce.value().item(), l_cp.value().item(), l_cs.value().item(), out.l_f.value().item()};
  return out;
}

// ---- optimizer --------------------------------------------------------------

Optimizer::Optimizer(OptimizerKind kind, const model::ModelParameters& params) : kind_(kind) {
  if (kind_ == OptimizerKind::Adam)
    for (const auto& [_, v] : params.groups()) {
      m_.push_back(Tensor::zeros_like(v.value()));
      v_.push_back(Tensor::zeros_like(v.value()));
    }
}

void Optimizer::step(model::ModelParameters& params, const GradientMap& grads, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  std::size_t g = 0;
  for (const auto& [_, var] : params.groups()) {
    auto it = grads.find(var.node());
    if (it != grads.end()) {
      Var p = var;
      auto w = p.mutable_value().data();
      const auto& gr = it->second.data();
      if (kind_ == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gr[i];
      } else {
        auto m = m_[g].data();
        auto v = v_[g].data();
        const double c1 = 1 - std::pow(b1, static_cast<double>(t_)), c2 = 1 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = b1 * m[i] + (1 - b1) * gr[i];
          v[i] = b2 * v[i] + (1 - b2) * gr[i] * gr[i];
          w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
      }
    }
    ++g;
  }
}

// ---- evaluation -------------------------------------------------------------

std::vector<std::size_t> evaluation_indices(const TrainConfig& cfg, std::size_t n_samples) {
  auto split = split_corpus(n_samples, cfg.val_fraction, cfg.seed);
  return split.val.empty() ? split.train : split.val;
}

Evaluation evaluate(const model::ModelParameters& params, const corpus::Corpus& corpus,
                    std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("evaluate: no samples");
  Evaluation ev;
  metrics::TextCorpus text;
  std::vector<std::vector<double>> zs, us;
  for (std::size_t i : indices) {
    const auto& s = corpus.samples[i];
    const auto z = model::encode(s.image_features, params);
    const auto ids = model::generate(z, params, params.config().t_max);
    std::vector<int> kept;
    for (int t : ids)
      if (t != Vocabulary::kPad) kept.push_back(t);
    ev.generated.push_back(corpus.vocab.decode(kept));
    text.candidates.push_back(ev.generated.back());
    text.references.push_back({s.report_tokens});
    zs.push_back(z);
    us.push_back(model::decode(z, encode_report(corpus.vocab, s.report_tokens).input, params).pooled_feature);
  }
  auto& m = ev.metrics;
  m.bleu1 = metrics::bleu(text, 1);
  m.bleu2 = metrics::bleu(text, 2);
  m.bleu3 = metrics::bleu(text, 3);
  m.bleu4 = metrics::bleu(text, 4);
  m.rouge_l = metrics::rouge_l(text);
  try {
    m.cider = metrics::cider(text);
  } catch (const std::invalid_argument& e) {
    m.cider = 0.0;
    ev.notes.push_back(std::string("cider undefined on this split: ") + e.what());
  }
  m.diversity = metrics::diversity(ev.generated);
  const std::size_t n = indices.size();
  if (n >= 2) {
    const Tensor S = cosine_matrix(constant(rows_of(zs)), constant(rows_of(us))).value();
    m.recall_at_1 = metrics::recall_at_k(S, 1);
    m.recall_at_5 = metrics::recall_at_k(S, std::min<std::size_t>(5, n));
  } else {
    m.recall_at_1 = m.recall_at_5 = 1.0;
  }
  return ev;
}

// ---- training ---------------------------------------------------------------

std::uint64_t corpus_content_hash(const corpus::Corpus& corpus) {
  std::ostringstream os;
  corpus::write_corpus(os, corpus);
  return util::fnv1a64(os.str());
}

model::ModelConfig model_config(const TrainConfig& cfg, const corpus::Corpus& corpus) {
  model::ModelConfig m;
  m.d_img = corpus.samples.empty() ? 0 : corpus.samples.front().image_features.size();
  m.d = cfg.d;
  m.hidden = cfg.hidden;
  m.vocab = corpus.vocab.size();
  m.t_max = cfg.t_max;
  m.init_scale = cfg.init_scale;
  m.seed = cfg.seed;
  return m;
}

namespace {

bool finite_params(const model::ModelParameters& p) {
  for (const auto& [_, v] : p.groups())
    if (!v.value().all_finite()) return false;
  return true;
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t b) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += b)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + b)));
  // A lone leftover sample has no in-batch negatives; fold it into the previous batch.
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const corpus::Corpus& corpus) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const TrainData data = TrainData::prepare(corpus, cfg);

  TrainResult result{RunReport{}, model::ModelParameters(model_config(cfg, corpus)), {}};
  auto& report = result.report;
  auto& params = result.params;
  report.strategy = to_string(cfg.strategy);
  report.config_hash = cfg.hash();
  report.corpus_hash = corpus_content_hash(corpus);
  report.seed = cfg.seed;
  report.config = cfg.key_values();
  report.config.emplace_back("corpus_config_hash", util::hex64(corpus.config_hash));
  report.config.emplace_back("corpus_seed", std::to_string(corpus.seed));
  report.config.emplace_back("cider_variant", "CIDEr-D sigma=6 clipped x10");
  report.config.emplace_back("diversity_ngrams", "2..4");
  report.eval_split = data.split.val.empty() ? "train" : "val";
  const auto eval_idx = evaluation_indices(cfg, corpus.samples.size());

  Optimizer opt(cfg.optimizer, params);
  std::seed_seq seq{cfg.seed, std::uint64_t{0x5eed}};
  std::mt19937_64 rng(seq);
  double lr = cfg.learning_rate;
  double best_bleu = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  model::ModelParameters last_good = params.clone();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const bool synthesizes = cfg.strategy == Strategy::Ithn || cfg.strategy == Strategy::Mochi;
    const double lambda = synthesizes ? geometry::lambda_schedule(cfg.schedule, static_cast<double>(epoch)) : 0.0;
    auto order = data.split.train;
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog log;
    log.epoch = epoch;
    log.lambda = lambda;
    log.learning_rate = lr;
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      StepGraph sg;
      try {
        sg = build_step(params, data, batch, lambda, cfg, rng);
      } catch (const std::domain_error& e) {
        // Features blown up to zero norm or similar numeric failure.
        report.epochs.push_back(log);
        throw TrainingDiverged(std::string("training diverged at epoch ") + std::to_string(epoch) + ": " + e.what(),
                               last_good, report);
      }
      if (!std::isfinite(sg.breakdown.l_f)) {
        report.epochs.push_back(log);
        throw TrainingDiverged("training diverged: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(log.steps + 1),
                               last_good, report);
      }
      opt.step(params, backward(sg.l_f), lr);
      ++log.steps;
      log.mean.l_ce += sg.breakdown.l_ce;
      log.mean.l_cp += sg.breakdown.l_cp;
      log.mean.l_cs += sg.breakdown.l_cs;
      log.mean.l_f += sg.breakdown.l_f;
      log.degenerate_segments += sg.degenerate_segments;
      result.steps.push_back({epoch, log.steps, sg.breakdown, lambda, lr});
    }
    if (!finite_params(params)) {
      report.epochs.push_back(log);
      throw TrainingDiverged("training diverged: non-finite parameters after epoch " + std::to_string(epoch), last_good,
                             report);
    }
    const double steps = static_cast<double>(log.steps);
    log.mean = {log.mean.l_ce / steps, log.mean.l_cp / steps, log.mean.l_cs / steps, log.mean.l_f / steps};

    // Learning-rate decay on validation BLEU-4 stagnation.
    if (!data.split.val.empty()) {
      log.val_bleu4 = evaluate(params, corpus, data.split.val).metrics.bleu4;
      if (log.val_bleu4 > best_bleu) {
        best_bleu = log.val_bleu4;
        stale = 0;
      } else if (++stale >= cfg.lr_patience) {
        lr *= cfg.lr_decay;
        stale = 0;
      }
    }
    report.epochs.push_back(log);
    last_good = params.clone();
  }

  auto ev = evaluate(params, corpus, eval_idx);
  report.metrics = ev.metrics;
  report.notes = ev.notes;
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---- reporting --------------------------------------------------------------

std::string report_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["strategy"] = r.strategy;
  j["config_hash"] = util::hex64(r.config_hash);
  j["corpus_hash"] = util::hex64(r.corpus_hash);
  j["seed"] = r.seed;
  auto& cfg = j["config"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.config) cfg[k] = v;
  j["eval_split"] = r.eval_split;
  auto& epochs = j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"lambda", e.lambda},
                      {"learning_rate", e.learning_rate},
                      {"steps", e.steps},
                      {"l_ce", e.mean.l_ce},
                      {"l_cp", e.mean.l_cp},
                      {"l_cs", e.mean.l_cs},
                      {"l_f", e.mean.l_f},
                      {"val_bleu4", e.val_bleu4},
                      {"degenerate_segments", e.degenerate_segments}});
  auto& m = j["metrics"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metrics::named(r.metrics)) m[k] = v;
  j["notes"] = r.notes;
  return j.dump(2) + "\n";
}

void write_step_csv(std::ostream& os, const std::vector<StepLog>& steps) {
  using util::format_double;
  os << "epoch,step,l_ce,l_cp,l_cs,l_f,lambda,learning_rate\n";
  for (const auto& s : steps)
    os << s.epoch << ',' << s.step << ',' << format_double(s.loss.l_ce) << ',' << format_double(s.loss.l_cp) << ','
       << format_double(s.loss.l_cs) << ',' << format_double(s.loss.l_f) << ',' << format_double(s.lambda) << ','
       << format_double(s.learning_rate) << '\n';
}

// ---- ablation ---------------------------------------------------------------

std::vector<AblationVariant> strategy_variants(const TrainConfig& base, const std::vector<Strategy>& strategies) {
  std::vector<AblationVariant> out;
  for (Strategy s : strategies) {
    auto cfg = base;
    cfg.strategy = s;
    out.push_back({to_string(s), cfg});
  }
  return out;
}

std::vector<AblationVariant> alpha_variants(const TrainConfig& base, const std::vector<double>& alphas) {
  std::vector<AblationVariant> out;
  for (double a : alphas) {
    auto cfg = base;
    cfg.schedule.alpha = a;
    out.push_back({"alpha=" + util::format_double(a), cfg});
  }
  return out;
}

namespace {

using MetricField = double metrics::MetricSet::*;
constexpr MetricField kFields[] = {
    &metrics::MetricSet::bleu1,   &metrics::MetricSet::bleu2,     &metrics::MetricSet::bleu3,
    &metrics::MetricSet::bleu4,   &metrics::MetricSet::rouge_l,   &metrics::MetricSet::cider,
    &metrics::MetricSet::diversity, &metrics::MetricSet::recall_at_1, &metrics::MetricSet::recall_at_5,
};

}  // namespace

std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& variants, const std::vector<std::uint64_t>& seeds,
                                      const corpus::Corpus& corpus) {
  if (variants.size() < 2) throw std::invalid_argument("run_ablation: need at least two variants");
  if (seeds.empty()) throw std::invalid_argument("run_ablation: need at least one seed");
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row;
    row.label = v.label;
    row.seeds = seeds;
    for (auto seed : seeds) {
      auto cfg = v.cfg;
      cfg.seed = seed;
      try {
        row.runs.push_back(train(cfg, corpus).report.metrics);
      } catch (const std::exception& e) {
        row.failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
      }
    }
    const double n = static_cast<double>(row.runs.size());
    for (MetricField f : kFields) {
      if (row.runs.empty()) break;
      double mu = 0;
      for (const auto& r : row.runs) mu += r.*f;
      mu /= n;
      double var = 0;
      for (const auto& r : row.runs) var += (r.*f - mu) * (r.*f - mu);
      row.mean.*f = mu;
      row.sd.*f = row.runs.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant\truns";
  for (const auto& [k, _] : metrics::named({})) os << '\t' << k << "_mean\t" << k << "_sd";
  os << "\tfailures\n";
  for (const auto& r : rows) {
    os << r.label << '\t' << r.runs.size() << '/' << r.seeds.size();
    const auto mean = metrics::named(r.mean), sd = metrics::named(r.sd);
    for (std::size_t i = 0; i < mean.size(); ++i)
      os << '\t' << (r.runs.empty() ? "nan" : util::format_double(mean[i].second)) << '\t'
         << (r.runs.empty() ? "nan" : util::format_double(sd[i].second));
    os << '\t' << (r.failures.empty() ? "-" : util::join(r.failures, "; ")) << '\n';
  }
}

}  // namespace ithn::trainer
