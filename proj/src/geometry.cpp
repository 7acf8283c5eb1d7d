#include "ithn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace ithn::geometry {

namespace {

void require_same_dim(const char* op, std::size_t a, std::size_t b) {
  if (a != b)
    throw std::invalid_argument(std::string(op) + ": dimension mismatch " + std::to_string(a) + " vs " + std::to_string(b));
}

void require_unit_interval(const char* op, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument(std::string(op) + ": lambda " + std::to_string(lambda) + " outside [0,1]");
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

void EmbeddingSet::validate() const {
  if (vectors.size() != ids.size())
    throw std::invalid_argument("EmbeddingSet: " + std::to_string(vectors.size()) + " vectors but " +
                                std::to_string(ids.size()) + " ids");
  std::set<int> seen;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != dim()) throw std::invalid_argument("EmbeddingSet: ragged vector at index " + std::to_string(i));
    for (double v : vectors[i])
      if (!std::isfinite(v)) throw std::invalid_argument("EmbeddingSet: non-finite entry in id " + std::to_string(ids[i]));
    if (!seen.insert(ids[i]).second) throw std::invalid_argument("EmbeddingSet: duplicate id " + std::to_string(ids[i]));
  }
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require_same_dim("cosine_similarity", a.size(), b.size());
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine_similarity: zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

HardNegativeIndex mine_prior_negatives(const EmbeddingSet& prior, std::size_t k) {
  prior.validate();
  const std::size_t n = prior.size();
  if (n < 2) throw std::invalid_argument("mine_prior_negatives: need at least 2 samples, got " + std::to_string(n));
  if (k < 1 || k + 1 > n)
    throw std::invalid_argument("mine_prior_negatives: pool size " + std::to_string(k) + " needs at least " +
                                std::to_string(k + 1) + " samples, got " + std::to_string(n));

  // Unit rows make the cosine argmax a dot-product argmax.
  std::vector<Vec> unit(prior.vectors);
  for (auto& v : unit) {
    const double norm = std::sqrt(dot(v, v));
    if (norm == 0.0) throw std::domain_error("mine_prior_negatives: zero embedding");
    for (double& x : v) x /= norm;
  }

  HardNegativeIndex index;
  std::vector<std::size_t> order(n);
  std::vector<double> sim(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) sim[j] = dot(unit[i], unit[j]);
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    std::erase(order, i);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (sim[a] != sim[b]) return sim[a] > sim[b];
                        return prior.ids[a] < prior.ids[b];
                      });
    const int id = prior.ids[i];
    auto& pool = index.neighbor_pool[id];
    for (std::size_t r = 0; r < k; ++r) pool.push_back(prior.ids[order[r]]);
    index.partner[id] = pool.front();
  }
  return index;
}

double lambda_schedule(const ScheduleConfig& cfg, double epoch) {
  if (!(cfg.alpha > 0.0)) throw std::invalid_argument("lambda_schedule: alpha must be positive");
  if (epoch < 0.0) throw std::invalid_argument("lambda_schedule: negative epoch");
  return -std::expm1(-cfg.alpha * epoch);
}

Vec mochi_synthesize(std::span<const double> u, std::span<const double> u_neg_sampled, double lambda) {
  require_same_dim("mochi_synthesize", u.size(), u_neg_sampled.size());
  require_unit_interval("mochi_synthesize", lambda);
  Vec out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = (1.0 - lambda) * u_neg_sampled[i] + lambda * u[i];
  return out;
}

SegmentProjection project_to_segment(std::span<const double> z, std::span<const double> u,
                                     std::span<const double> u_neg, bool clamp) {
  require_same_dim("project_to_segment", z.size(), u.size());
  require_same_dim("project_to_segment", u.size(), u_neg.size());
  Vec dir(u.size());
  double len2 = 0.0, along = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dir[i] = u[i] - u_neg[i];
    len2 += dir[i] * dir[i];
    along += (z[i] - u_neg[i]) * dir[i];
  }
  if (std::sqrt(len2) < 1e-12) throw DegenerateSegmentError("project_to_segment: u and u_neg coincide");
  double t = along / len2;
  if (clamp) t = std::clamp(t, 0.0, 1.0);
  SegmentProjection p{Vec(u.size()), t};
  for (std::size_t i = 0; i < u.size(); ++i) p.point[i] = u_neg[i] + t * dir[i];
  return p;
}

Vec synthesize_hard_negative(std::span<const double> z, std::span<const double> u,
                             std::span<const double> u_neg_prior, double lambda, bool clamp) {
  require_unit_interval("synthesize_hard_negative", lambda);
  const auto p = project_to_segment(z, u, u_neg_prior, clamp);
  Vec out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = (1.0 - lambda) * u_neg_prior[i] + lambda * p.point[i];
  return out;
}

TripletResult triplet_loss_and_grad(std::span<const double> z, std::span<const double> u,
                                    std::span<const double> negative, const TripletConfig& cfg) {
  require_same_dim("triplet_loss_and_grad", z.size(), u.size());
  require_same_dim("triplet_loss_and_grad", z.size(), negative.size());
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    pos += (z[i] - u[i]) * (z[i] - u[i]);
    neg += (z[i] - negative[i]) * (z[i] - negative[i]);
  }
  TripletResult r;
  r.grad.assign(z.size(), 0.0);
  const double slack = pos - neg + cfg.margin;
  if (slack > 0.0) {
    r.loss = slack;
    r.active = true;
    for (std::size_t i = 0; i < z.size(); ++i) r.grad[i] = 2.0 * (z[i] - negative[i]);
  }
  return r;
}

void write_index(std::ostream& os, const HardNegativeIndex& index, const std::vector<std::string>& header) {
  for (const auto& h : header) os << "# " << h << '\n';
  for (const auto& [id, partner] : index.partner) {
    os << id << '\t' << partner << '\t';
    const auto it = index.neighbor_pool.find(id);
    if (it != index.neighbor_pool.end())
      for (std::size_t i = 0; i < it->second.size(); ++i) os << (i ? "," : "") << it->second[i];
    os << '\n';
  }
}

HardNegativeIndex read_index(std::istream& is) {
  HardNegativeIndex index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id_s, partner_s, pool_s;
    if (!std::getline(ls, id_s, '\t') || !std::getline(ls, partner_s, '\t'))
      throw std::runtime_error("read_index: malformed line " + std::to_string(lineno));
    std::getline(ls, pool_s);
    const int id = std::stoi(id_s);
    index.partner[id] = std::stoi(partner_s);
    auto& pool = index.neighbor_pool[id];
    std::istringstream ps(pool_s);
    std::string tok;
    while (std::getline(ps, tok, ','))
      if (!tok.empty()) pool.push_back(std::stoi(tok));
  }
  return index;
}

}  // namespace ithn::geometry
