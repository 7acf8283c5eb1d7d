// Command-line front end: data generation, mining, training, evaluation,
// ablation and gradient checking. Exit codes: 0 ok, 1 usage or config
// error, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ithn/config.hpp"
#include "ithn/gradcheck.hpp"
#include "ithn/losses.hpp"
#include "ithn/util.hpp"

namespace fs = std::filesystem;
using namespace ithn;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

// Errors the user can fix by changing arguments or inputs.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::string config_path;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy, loss_form, stop_grad;
  std::optional<double> alpha, beta, gamma, tau;
  std::optional<std::size_t> epochs;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key=value config file (defaults when omitted)");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "run seed");
  app->add_option("--strategy", c.strategy, "plain | static | mochi | ithn");
  app->add_option("--alpha", c.alpha, "lambda schedule rate");
  app->add_option("--beta", c.beta, "weight of the contrastive term");
  app->add_option("--gamma", c.gamma, "weight of the negative-separation term");
  app->add_option("--tau", c.tau, "temperature");
  app->add_option("--epochs", c.epochs, "training epochs");
  app->add_option("--loss-form", c.loss_form, "per-sample | literal");
  app->add_option("--stop-grad-negatives", c.stop_grad, "true | false");
}

// Config file, then command-line overrides. The seed override goes to the
// corpus when generating data and to training otherwise.
config::Settings load(const Common& c, bool seed_is_corpus) {
  config::Settings s;
  if (!c.config_path.empty()) s = config::load_settings(c.config_path);
  auto set = [&](const char* key, const std::string& v) { config::apply(s, key, v); };
  if (c.seed) set(seed_is_corpus ? "corpus.seed" : "seed", std::to_string(*c.seed));
  if (c.strategy) set("strategy", *c.strategy);
  if (c.alpha) set("alpha", util::format_double(*c.alpha));
  if (c.beta) set("beta", util::format_double(*c.beta));
  if (c.gamma) set("gamma", util::format_double(*c.gamma));
  if (c.tau) set("tau", util::format_double(*c.tau));
  if (c.epochs) set("epochs", std::to_string(*c.epochs));
  if (c.loss_form) set("loss_form", *c.loss_form);
  if (c.stop_grad) set("stop_grad_negatives", *c.stop_grad);
  try {
    s.corpus.validate();
    s.train.validate();
  } catch (const std::invalid_argument& e) {
    throw config::ConfigError(e.what());
  }
  return s;
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  fs::create_directories(p);
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

corpus::Corpus read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open corpus file '" + path + "'");
  try {
    return corpus::read_corpus(in);
  } catch (const std::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
}

corpus::Corpus corpus_for(const std::string& path, const config::Settings& s) {
  return path.empty() ? corpus::generate_corpus(s.corpus) : read_corpus_file(path);
}

nlohmann::ordered_json metrics_json(const metrics::MetricSet& m) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metrics::named(m)) j[k] = v;
  return j;
}

void write_text(const fs::path& p, const std::string& text) { open_out(p) << text; }

// ---- subcommands ------------------------------------------------------------

int cmd_gen_data(const Common& c) {
  const auto s = load(c, true);
  const auto corpus = corpus::generate_corpus(s.corpus);
  auto os = open_out(out_dir(c) / "corpus.txt");
  corpus::write_corpus(os, corpus);
  std::cout << "wrote " << corpus.samples.size() << " pairs to " << (fs::path(c.out) / "corpus.txt").string() << '\n';
  return kOk;
}

int cmd_mine(const Common& c, const std::string& corpus_path) {
  const auto s = load(c, false);
  const auto corpus = corpus_for(corpus_path, s);
  const auto data = trainer::TrainData::prepare(corpus, s.train);
  auto os = open_out(out_dir(c) / "negatives.tsv");
  geometry::write_index(os, data.index,
                        {"corpus_hash " + util::hex64(trainer::corpus_content_hash(corpus)),
                         "config_hash " + util::hex64(s.train.hash()), "seed " + std::to_string(s.train.seed)});
  std::cout << "mined " << data.index.partner.size() << " training samples\n";
  return kOk;
}

void write_checkpoint(const fs::path& p, const model::ModelParameters& params, const trainer::RunReport& r) {
  auto os = open_out(p);
  model::save_checkpoint(os, params, {r.config_hash, r.corpus_hash, r.seed});
}

int cmd_train(const Common& c, const std::string& corpus_path) {
  const auto s = load(c, false);
  const auto corpus = corpus_for(corpus_path, s);
  const auto dir = out_dir(c);
  try {
    auto result = trainer::train(s.train, corpus);
    write_checkpoint(dir / "checkpoint.bin", result.params, result.report);
    write_text(dir / "run_report.json", trainer::report_json(result.report));
    {
      auto os = open_out(dir / "train_log.csv");
      os << "# config_hash " << util::hex64(result.report.config_hash) << " seed " << result.report.seed << '\n';
      trainer::write_step_csv(os, result.steps);
    }
    nlohmann::ordered_json timing{{"wall_clock_seconds", result.report.wall_clock_seconds}};
    write_text(dir / "timing.json", timing.dump(2) + "\n");
    for (const auto& [k, v] : metrics::named(result.report.metrics)) std::cout << k << ' ' << v << '\n';
    return kOk;
  } catch (const trainer::TrainingDiverged& e) {
    write_checkpoint(dir / "checkpoint.bin", e.last_good, e.partial);
    write_text(dir / "run_report.json", trainer::report_json(e.partial));
    std::cerr << "training diverged: " << e.what() << "\nlast good parameters written to "
              << (dir / "checkpoint.bin").string() << '\n';
    return kRuntime;
  }
}

int cmd_eval(const Common& c, const std::string& corpus_path, const std::string& ckpt_path, bool force) {
  const auto s = load(c, false);
  const auto corpus = corpus_for(corpus_path, s);
  std::ifstream in(ckpt_path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint '" + ckpt_path + "'");
  auto [params, meta] = model::load_checkpoint(in);

  auto cfg = s.train;
  cfg.seed = meta.seed;  // the split depends on the training seed
  const auto corpus_hash = trainer::corpus_content_hash(corpus);
  if (!force) {
    if (meta.corpus_hash != corpus_hash)
      throw UsageError("checkpoint was trained on corpus " + util::hex64(meta.corpus_hash) + ", this corpus is " +
                       util::hex64(corpus_hash) + " (use --force to evaluate anyway)");
    if (meta.config_hash != cfg.hash())
      throw UsageError("checkpoint was trained with config " + util::hex64(meta.config_hash) + ", this config is " +
                       util::hex64(cfg.hash()) + " (use --force to evaluate anyway)");
  }
  const auto idx = trainer::evaluation_indices(cfg, corpus.samples.size());
  for (auto i : idx)
    if (corpus.samples[i].image_features.size() != params.config().d_img)
      throw UsageError("corpus image dimension does not match the checkpoint");
  const auto ev = trainer::evaluate(params, corpus, idx);

  nlohmann::ordered_json j;
  j["checkpoint"] = ckpt_path;
  j["config_hash"] = util::hex64(meta.config_hash);
  j["corpus_hash"] = util::hex64(corpus_hash);
  j["seed"] = meta.seed;
  j["forced"] = force;
  j["samples"] = idx.size();
  j["metrics"] = metrics_json(ev.metrics);
  j["notes"] = ev.notes;
  write_text(out_dir(c) / "eval.json", j.dump(2) + "\n");
  for (const auto& [k, v] : metrics::named(ev.metrics)) std::cout << k << ' ' << v << '\n';
  return kOk;
}

int cmd_ablate(const Common& c, const std::string& corpus_path, const std::vector<double>& alphas,
               const std::vector<std::uint64_t>& seeds) {
  const auto s = load(c, false);
  const auto corpus = corpus_for(corpus_path, s);
  std::vector<trainer::AblationVariant> variants;
  if (alphas.empty()) {
    using trainer::Strategy;
    variants = trainer::strategy_variants(s.train, {Strategy::Plain, Strategy::Static, Strategy::Mochi, Strategy::Ithn});
    auto no_sep = s.train;
    no_sep.strategy = Strategy::Ithn;
    no_sep.weights.gamma = 0.0;
    variants.push_back({"ithn gamma=0", no_sep});
  } else {
    auto base = s.train;
    base.strategy = trainer::Strategy::Ithn;
    variants = trainer::alpha_variants(base, alphas);
  }
  const auto rows = trainer::run_ablation(variants, seeds, corpus);
  const auto dir = out_dir(c);
  {
    auto os = open_out(dir / "ablation.tsv");
    trainer::write_ablation_table(os, rows);
  }
  nlohmann::ordered_json j;
  j["corpus_hash"] = util::hex64(trainer::corpus_content_hash(corpus));
  j["seeds"] = seeds;
  auto& out = j["variants"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const auto& m : r.runs) runs.push_back(metrics_json(m));
    out.push_back({{"label", r.label},
                   {"mean", metrics_json(r.mean)},
                   {"sd", metrics_json(r.sd)},
                   {"runs", runs},
                   {"failures", r.failures}});
  }
  write_text(dir / "ablation.json", j.dump(2) + "\n");
  trainer::write_ablation_table(std::cout, rows);
  return kOk;
}

int cmd_gradcheck(int points, std::uint64_t seed) {
  constexpr double kTolerance = 1e-4;
  auto cases = ad::primitive_gradient_cases();
  for (auto& lc : losses::loss_gradient_cases()) cases.push_back(std::move(lc));
  const auto start = std::chrono::steady_clock::now();
  const auto results = ad::run_gradient_cases(cases, points, seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  int failed = 0;
  for (const auto& r : results) {
    const bool ok = r.max_error < kTolerance;
    failed += !ok;
    std::cout << (ok ? "ok   " : "FAIL ") << r.name << "  max_rel_err " << r.max_error << "  points " << r.points
              << '\n';
  }
  std::cout << results.size() - failed << '/' << results.size() << " cases within " << kTolerance << " in " << secs
            << " s\n";
  return failed ? kRuntime : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"increasingly hard negatives: toy report generation"};
  app.require_subcommand(1);

  Common common;
  std::string corpus_path, ckpt_path;
  bool force = false;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int points = 100;
  std::uint64_t gc_seed = 2024;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired corpus");
  add_common(gen, common);
  auto* mine = app.add_subcommand("mine", "mine prior hard negatives over the training split");
  add_common(mine, common);
  mine->add_option("--corpus", corpus_path, "corpus file (generated from the config when omitted)");
  auto* tr = app.add_subcommand("train", "train one model");
  add_common(tr, common);
  tr->add_option("--corpus", corpus_path, "corpus file (generated from the config when omitted)");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, common);
  ev->add_option("--corpus", corpus_path, "corpus file (generated from the config when omitted)");
  ev->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  ev->add_flag("--force", force, "evaluate even if the checkpoint hashes do not match");
  auto* ab = app.add_subcommand("ablate", "compare strategies (or alpha values) over several seeds");
  add_common(ab, common);
  ab->add_option("--corpus", corpus_path, "corpus file (generated from the config when omitted)");
  ab->add_option("--alphas", alphas, "sweep the schedule rate for ithn instead of comparing strategies")->delimiter(',');
  ab->add_option("--seeds", seeds, "run seeds")->delimiter(',');
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every primitive and loss");
  gc->add_option("--points", points, "random points per case")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed, "sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(common);
    if (*mine) return cmd_mine(common, corpus_path);
    if (*tr) return cmd_train(common, corpus_path);
    if (*ev) return cmd_eval(common, corpus_path, ckpt_path, force);
    if (*ab) return cmd_ablate(common, corpus_path, alphas, seeds);
    if (*gc) return cmd_gradcheck(points, gc_seed);
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
