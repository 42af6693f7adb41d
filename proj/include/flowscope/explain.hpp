#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flowscope/diffmath.hpp"
#include "flowscope/featurize.hpp"
#include "flowscope/graphbuild.hpp"
#include "flowscope/model.hpp"
#include "flowscope/rng.hpp"

namespace flowscope {

/// Maps a batch of input rows (n x F) to outputs (n x d). Must be row-wise:
/// the output for a row may not depend on the other rows in the batch.
using BatchFn = std::function<diff::Matrix(const diff::Matrix& rows)>;

/// A set of input columns that is masked as one unit.
struct FeatureGroup {
  std::string name;
  std::vector<std::size_t> columns;
};

enum class Grouping { Atomic, PerBit };

std::string_view grouping_name(Grouping g);
Grouping parse_grouping(std::string_view text);

/// Atomic: every numeric feature alone, proto / src port / dst port one-hot
/// blocks as one group each. PerBit: one group per column.
std::vector<FeatureGroup> edge_feature_groups(const PortVocabulary& vocab, Grouping grouping);
std::vector<FeatureGroup> node_feature_groups();
/// One single-column group per name.
std::vector<FeatureGroup> singleton_groups(std::span<const std::string> names);

struct AttributionResult {
  std::string entity_id;
  std::string entity_type;            // "edge" or "node"
  std::vector<std::string> features;  // group names, one per phi column
  diff::Matrix phi;                   // d x G
  diff::Matrix std_error;             // d x G, zero for exact results
  std::vector<double> phi0;           // mean output over the background
  std::vector<double> fx;             // output at the explained input
  /// Standard error of sum_j phi_ij; zero for exact results.
  std::vector<double> total_std_error;
  std::size_t mc_samples = 0;  // 0 for exact enumeration

  std::size_t dims() const { return phi.rows(); }
};

/// Permutation-sampling Shapley estimate. Each sample draws one background
/// row and one group permutation and walks it, so every group's pair of
/// evaluations differs only in that group.
AttributionResult mc_shap(const BatchFn& f, std::span<const double> x,
                          const diff::Matrix& background, std::span<const FeatureGroup> groups,
                          std::size_t mc_samples, Rng& rng);

/// Exact value by enumerating all 2^G coalitions (G <= 20).
AttributionResult exact_shap(const BatchFn& f, std::span<const double> x,
                             const diff::Matrix& background,
                             std::span<const FeatureGroup> groups);

struct Additivity {
  std::vector<double> residual;   // |sum_j phi_ij - (f_i(x) - phi0_i)|
  std::vector<double> std_error;  // of sum_j phi_ij
};

Additivity additivity_check(const AttributionResult& result, const BatchFn& f,
                            std::span<const double> x);

struct DriverRow {
  std::string cls;
  std::size_t axis = 0;
  std::size_t rank = 0;  // 1-based
  std::string feature;
  double value = 0.0;  // mean phi over the class
  std::string glyph;   // → / ← on axis 0, ↑ / ↓ on axis 1
};

std::string direction_glyph(std::size_t axis, double value);

/// Per class, features ranked by |mean phi| on `axis` (ties by feature
/// order); the top `top_k` are returned. EmptyGroup when a class has no
/// results.
std::vector<DriverRow> global_importance(
    const std::map<std::string, std::vector<AttributionResult>>& by_class, std::size_t axis,
    std::size_t top_k = 4);

/// Up to `size` rows drawn without replacement, kept in source order.
diff::Matrix sample_background(const diff::Matrix& rows, std::size_t size, Rng& rng);

// ---- frozen-context model adapters -------------------------------------------

/// A forward pass over one snapshot whose node embeddings and per-layer
/// neighbor sums are kept fixed while one entity's features are perturbed.
/// Holds a reference to the checkpoint.
class FrozenGraph {
 public:
  FrozenGraph(const GraphSnapshot& snapshot, const Checkpoint& checkpoint);

  const GraphTensors& tensors() const { return g_; }
  /// Standardized edge rows -> edge coordinates W, endpoints of `edge` fixed.
  BatchFn edge_function(std::size_t edge) const;
  /// Standardized node rows -> node coordinates U, neighbor messages of
  /// `node` fixed at every layer.
  BatchFn node_function(std::size_t node) const;

 private:
  const Checkpoint* ckpt_;
  GraphTensors g_;
  diff::Matrix h_;
  std::vector<diff::Matrix> neighbor_sums_;
};

// ---- snapshot-level driver --------------------------------------------------

struct ExplainConfig {
  std::size_t mc_samples = 2000;
  std::size_t background = 100;
  Grouping grouping = Grouping::Atomic;
  std::size_t per_class = 10;  // explained entities per class and entity type
  std::size_t top_k = 4;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: hardware concurrency

  void validate() const;
};

struct ExplainRun {
  std::vector<AttributionResult> edges;
  std::vector<std::string> edge_classes;
  std::vector<AttributionResult> nodes;
  std::vector<std::string> node_classes;
  std::vector<Additivity> edge_additivity;
  std::vector<Additivity> node_additivity;
};

/// Explains up to `per_class` edges and nodes of each class in `target`
/// (evenly spaced over the class's entities); backgrounds come from `train`.
ExplainRun explain_snapshot(const GraphSnapshot& train, const GraphSnapshot& target,
                            const Checkpoint& checkpoint, const PortVocabulary& vocab,
                            const ExplainConfig& config);

/// entity_id,entity_type,axis,feature_name,phi,stderr (axis is 1-based)
std::string attributions_csv(std::span<const AttributionResult> results);
/// entity_id,entity_type,class,axis,phi0,fx,residual,residual_stderr
std::string base_values_csv(const ExplainRun& run);
/// class,axis,rank,feature,value,direction
std::string drivers_csv(std::span<const DriverRow> rows);

}  // namespace flowscope
