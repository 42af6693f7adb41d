#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowscope/diffmath.hpp"
#include "flowscope/featurize.hpp"
#include "flowscope/graphbuild.hpp"
#include "flowscope/rng.hpp"

namespace flowscope {

enum class Variant { Autoencoder, Classifier };
/// How the topology loss folds its per-pair terms: plain sum, or the mean
/// over pairs.
enum class Reduction { Sum, Mean };
/// Optional per-row normalization of every GIN layer output.
enum class GinNorm { None, Layer };

std::string_view variant_name(Variant v) noexcept;  // "gnn-ae" / "gnn-cls"
Variant parse_variant(std::string_view text);

struct ModelConfig {
  int gin_layers = 2;
  int hidden = 16;       // GIN width and hidden width of every head
  int edge_latent = 16;  // width of Z
  int low_dim = 2;
  int mlp_depth = 2;     // linear layers per MLP block, relu in between
  double kernel_a = 1.0;
  double kernel_b = 1.0;
  double lambda_task = 1.0;
  double lambda_topo = 1.0;
  double gamma_pos = 0.0;
  double gamma_neg = 4.0;
  Variant variant = Variant::Classifier;
  std::vector<std::string> classes;
  /// When false the edge MLP sees only the raw edge attributes (the
  /// projection-only baseline runs with this off and gin_layers = 0).
  bool fuse_node_context = true;
  Reduction topo_reduction = Reduction::Mean;
  GinNorm gin_norm = GinNorm::Layer;

  void validate() const;
  std::size_t node_dim() const {
    return gin_layers > 0 ? static_cast<std::size_t>(hidden) : kNodeFeatureCount;
  }
  std::size_t num_classes() const { return classes.size(); }

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct Dense {
  diff::Matrix weight;  // in x out
  diff::Matrix bias;    // 1 x out
};

struct Mlp {
  std::vector<Dense> layers;

  std::size_t in_dim() const { return layers.front().weight.rows(); }
  std::size_t out_dim() const { return layers.back().weight.cols(); }
};

struct ModelParams {
  std::vector<Mlp> gin;
  std::vector<diff::Matrix> gin_eps;  // 1x1 per layer
  Mlp edge;
  Mlp proj_node;
  Mlp proj_edge;
  Mlp dec_node;    // autoencoder only
  Mlp dec_edge;    // autoencoder only
  Mlp classifier;  // classifier only
  Standardizer node_scaler;
  Standardizer edge_scaler;

  /// Glorot-uniform weights, zero biases, epsilon 0.
  static ModelParams init(const ModelConfig& config, Rng& rng);

  /// Every learnable array with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, diff::Matrix*>> named();
  std::vector<std::pair<std::string, const diff::Matrix*>> named() const;
};

// ---- graph inputs -------------------------------------------------------

/// Standardized tensors for one snapshot.
struct GraphTensors {
  diff::Matrix x;
  diff::Matrix e;
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  std::size_t num_nodes = 0;
};

GraphTensors prepare(const GraphSnapshot& snapshot, const ModelParams& params);

// ---- forward pass on a tape -----------------------------------------------

struct BoundMlp {
  std::vector<std::pair<diff::Var, diff::Var>> layers;
};

struct BoundParams {
  std::vector<BoundMlp> gin;
  std::vector<diff::Var> gin_eps;
  BoundMlp edge, proj_node, proj_edge, dec_node, dec_edge, classifier;
  std::vector<diff::Var> leaves;  // same order as ModelParams::named()
};

/// Records the parameters on `tape`, as leaves when `trainable`, otherwise as
/// constants (inference records no backward closures).
BoundParams bind(diff::Tape& tape, const ModelParams& params, bool trainable);
/// Reuses existing variables, given in ModelParams::named() order, with the
/// shapes of `layout` (for instance leaves created by diff::grad_check).
BoundParams bind(const ModelParams& layout, std::span<const diff::Var> vars);

diff::Var apply_mlp(const BoundMlp& mlp, diff::Var x);

struct Encoded {
  diff::Var h;
  /// Per GIN layer, the neighbor sum fed into that layer.
  std::vector<diff::Var> neighbor_sums;
};

Encoded encode_nodes(const BoundParams& p, diff::Var x, std::span<const std::size_t> src,
                     std::span<const std::size_t> dst, std::size_t num_nodes,
                     GinNorm norm = GinNorm::None);
/// (x - row mean) / sqrt(row variance + 1e-5), no learned scale or shift.
diff::Var row_normalize(diff::Var x);
diff::Var fuse_edges(const BoundParams& p, const ModelConfig& config, diff::Var h, diff::Var e,
                     std::span<const std::size_t> src, std::span<const std::size_t> dst);
diff::Var project(const BoundMlp& head, diff::Var latent);

struct Forward {
  Encoded encoded;
  diff::Var z;
  diff::Var u;
  diff::Var w;
  diff::Var probs;  // classifier: M x C sigmoid outputs
  diff::Var x_hat;  // autoencoder
  diff::Var e_hat;  // autoencoder
};

Forward forward(diff::Tape& tape, const BoundParams& p, const ModelConfig& config,
                const GraphTensors& g);

// ---- losses ---------------------------------------------------------------

inline constexpr double kProbClamp = 1e-7;

enum class PairDomain { Node, Edge };

struct TopoPair {
  PairDomain domain = PairDomain::Node;
  std::size_t i = 0;
  std::size_t j = 0;
  double weight = 1.0;  // membership strength; 1 = connected, 0 = disconnected
};

double kernel_p(double distance, double a, double b);

/// Fuzzy cross-entropy sum over pairs: -w log p - (1 - w) log(1 - p), with
/// p = kernel_p(|c_i - c_j|) clamped to [1e-7, 1 - 1e-7].
diff::Var loss_topo(diff::Var coords, std::span<const TopoPair> pairs, double a, double b,
                    Reduction reduction = Reduction::Sum);
/// (1/N) sum |x - x_hat|^2 + (1/M) sum |e - e_hat|^2
diff::Var loss_mse(diff::Var x, diff::Var x_hat, diff::Var e, diff::Var e_hat);
/// Asymmetric multi-label loss over sigmoid outputs `probs` and one-hot targets.
diff::Var loss_asym(diff::Var probs, const diff::Matrix& targets, double gamma_pos,
                    double gamma_neg);
diff::Var total_loss(diff::Var task, diff::Var topo_node, diff::Var topo_edge, double lambda_task,
                     double lambda_topo);

struct LossTerms {
  diff::Var task;
  diff::Var topo_node;
  diff::Var topo_edge;
  diff::Var total;
};

/// One-hot class targets for the snapshot's edge labels (ConfigMismatch on a
/// label outside `config.classes`).
diff::Matrix class_targets(const GraphSnapshot& snapshot, const ModelConfig& config);

/// Full objective for one snapshot. Pair lists may be empty only when the
/// topology weight is zero.
LossTerms compute_losses(diff::Tape& tape, const Forward& fwd, const ModelConfig& config,
                         const GraphTensors& g, const diff::Matrix& targets,
                         std::span<const TopoPair> node_pairs,
                         std::span<const TopoPair> edge_pairs);

// ---- checkpoint -------------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

inline constexpr int kCheckpointFormat = 1;

nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& doc);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace flowscope
