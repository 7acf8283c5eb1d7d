#pragma once

// Embedding-space geometry: prior hard-negative mining, the hardness
// schedule, MoCHi-style mixing, segment projection, synthesis of harder
// negatives, and the triplet objective whose gradient drives the synthesis.

#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ithn::geometry {

using Vec = std::vector<double>;

class DegenerateSegmentError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct EmbeddingSet {
  std::vector<Vec> vectors;
  std::vector<int> ids;

  std::size_t size() const { return vectors.size(); }
  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
  // Throws on mismatched lengths, ragged dimensions, duplicate ids or non-finite entries.
  void validate() const;
};

struct HardNegativeIndex {
  std::map<int, int> partner;
  // Sorted by descending cosine, ties by ascending id; exactly k entries.
  std::map<int, std::vector<int>> neighbor_pool;
};

struct ScheduleConfig {
  double alpha = 0.01;
};

struct TripletConfig {
  double margin = 0.2;
};

struct SegmentProjection {
  Vec point;
  double t = 0.0;  // position along u_neg -> u, after clamping when enabled
};

struct TripletResult {
  double loss = 0.0;
  Vec grad;  // d loss / d negative
  bool active = false;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// partner[i] = argmax_{j != i} cos(r_i, r_j); ties go to the lowest id.
HardNegativeIndex mine_prior_negatives(const EmbeddingSet& prior, std::size_t k);

// lambda = 1 - exp(-alpha * epoch).
double lambda_schedule(const ScheduleConfig& cfg, double epoch);

// (1 - lambda) * u_neg_sampled + lambda * u.
Vec mochi_synthesize(std::span<const double> u, std::span<const double> u_neg_sampled, double lambda);

// Nearest point to z on the segment [u_neg, u] (on the full line when
// clamp is false).
SegmentProjection project_to_segment(std::span<const double> z, std::span<const double> u,
                                     std::span<const double> u_neg, bool clamp = true);

// (1 - lambda) * u_neg_prior + lambda * p, p the projection of z.
Vec synthesize_hard_negative(std::span<const double> z, std::span<const double> u,
                             std::span<const double> u_neg_prior, double lambda, bool clamp = true);

// max(|z - u|^2 - |z - neg|^2 + m0, 0) and its gradient with respect to neg.
TripletResult triplet_loss_and_grad(std::span<const double> z, std::span<const double> u,
                                    std::span<const double> negative, const TripletConfig& cfg);

// Text form: '#' comment lines, then one `id<TAB>partner<TAB>pool` line per
// anchor with the pool as comma-separated ids.
void write_index(std::ostream& os, const HardNegativeIndex& index, const std::vector<std::string>& header = {});
HardNegativeIndex read_index(std::istream& is);

}  // namespace ithn::geometry
