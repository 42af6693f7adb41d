#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowscope/diffmath.hpp"
#include "flowscope/graphbuild.hpp"
#include "flowscope/model.hpp"
#include "flowscope/rng.hpp"

namespace flowscope {

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int negative_ratio = 5;
  std::uint64_t seed = 0;
  double min_dist = 0.1;
  double spread = 1.0;
  bool resample_pairs = true;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

// ---- kernel fit --------------------------------------------------------------

struct KernelFit {
  double a = 0.0;
  double b = 0.0;
  double sse = 0.0;
  int iterations = 0;
};

/// Least-squares fit of (1 + a d^(2b))^-1 to samples (d, y) by
/// Levenberg-Marquardt from (a, b) = (1, 1).
KernelFit fit_kernel_curve(std::span<const double> d, std::span<const double> y,
                           int max_iterations = 500);
/// Target curve 1 for d <= min_dist, exp(-(d - min_dist) / spread) beyond, on
/// 300 evenly spaced points over [0, 3 spread].
KernelFit fit_kernel_ab(double min_dist, double spread);

// ---- pair sampling -------------------------------------------------------------

/// Positives for one domain: distinct endpoint pairs of edges (nodes) or edge
/// pairs sharing an endpoint (edges). Each unordered pair once, i < j.
std::vector<TopoPair> positive_pairs(const GraphSnapshot& snapshot, PairDomain domain);

/// Keeps the positive set and draws fresh uniform negatives on demand.
class PairSampler {
 public:
  PairSampler(const GraphSnapshot& snapshot, PairDomain domain, int negative_ratio);

  PairDomain domain() const { return domain_; }
  const std::vector<TopoPair>& positives() const { return positives_; }
  std::size_t available_negatives() const;
  /// Positives followed by min(ratio * |P|, available) distinct negatives.
  std::vector<TopoPair> sample(Rng& rng) const;

 private:
  bool adjacent(std::size_t i, std::size_t j) const;

  PairDomain domain_;
  std::size_t count_ = 0;  // entities in the domain
  int ratio_ = 5;
  std::vector<TopoPair> positives_;
  std::vector<std::uint64_t> positive_keys_;  // sorted i * count + j
  std::vector<std::uint64_t> negative_keys_;  // enumerated when small enough
  bool enumerated_ = false;
};

std::vector<TopoPair> sample_pairs(const GraphSnapshot& snapshot, PairDomain domain,
                                   int negative_ratio, Rng& rng);

// ---- optimizer -------------------------------------------------------------------

class Adam {
 public:
  Adam(double learning_rate, double beta1, double beta2, double eps)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<diff::Matrix* const> params, std::span<const diff::Matrix* const> grads);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<diff::Matrix> m_;
  std::vector<diff::Matrix> v_;
};

// ---- training ---------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double task = 0.0;
  double topo_node = 0.0;
  double topo_edge = 0.0;
  double total = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  /// Row k holds the losses after k updates, so there are epochs + 1 rows.
  std::vector<EpochRecord> history;
};

/// Fits standardization on `snapshot`, fits the kernel (a, b), initializes and
/// trains full-batch. For the classifier variant an empty class list is filled
/// with the sorted distinct training labels.
TrainResult train(const GraphSnapshot& snapshot, ModelConfig model, const TrainConfig& config);

void write_history_csv(std::span<const EpochRecord> history, const std::filesystem::path& path);

// ---- inference -------------------------------------------------------------------

struct Embedding {
  diff::Matrix h;
  diff::Matrix z;
  diff::Matrix u;
  diff::Matrix w;
  diff::Matrix probs;  // classifier
  diff::Matrix x_hat;  // autoencoder
  diff::Matrix e_hat;  // autoencoder
  std::vector<std::string> edge_pred;  // argmax class per edge (classifier)
  std::vector<std::string> node_pred;  // majority of incident edge predictions
};

Embedding embed(const GraphSnapshot& snapshot, const Checkpoint& checkpoint);

}  // namespace flowscope
