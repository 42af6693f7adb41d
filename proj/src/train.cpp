#include "flowscope/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_set>

#include "flowscope/error.hpp"
#include "flowscope/io.hpp"

namespace flowscope {

using diff::Matrix;

// ---- config -----------------------------------------------------------------

void TrainConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(Errc::InvalidConfig, "train: " + msg); };
  if (epochs < 0) bad("epochs must be >= 0");
  if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) bad("betas in [0, 1)");
  if (!(adam_eps > 0.0)) bad("adam_eps must be > 0");
  if (negative_ratio < 1) bad("negative_ratio must be >= 1");
  if (!(min_dist > 0.0 && min_dist < spread)) bad("need 0 < min_dist < spread");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {
      {"epochs", epochs},         {"learning_rate", learning_rate},
      {"beta1", beta1},           {"beta2", beta2},
      {"adam_eps", adam_eps},     {"negative_ratio", negative_ratio},
      {"seed", seed},             {"min_dist", min_dist},
      {"spread", spread},         {"resample_pairs", resample_pairs},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"epochs",   "learning_rate",  "beta1",
                                              "beta2",    "adam_eps",       "negative_ratio",
                                              "seed",     "min_dist",       "spread",
                                              "resample_pairs"};
  if (!j.is_object()) fail(Errc::InvalidConfig, "train config must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) fail(Errc::InvalidConfig, "unknown train config key '" + key + "'");
  }
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.negative_ratio = j.value("negative_ratio", c.negative_ratio);
    c.seed = j.value("seed", c.seed);
    c.min_dist = j.value("min_dist", c.min_dist);
    c.spread = j.value("spread", c.spread);
    c.resample_pairs = j.value("resample_pairs", c.resample_pairs);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- kernel fit -----------------------------------------------------------------

namespace {

double curve_sse(std::span<const double> d, std::span<const double> y, double a, double b) {
  double sse = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double r = kernel_p(d[k], a, b) - y[k];
    sse += r * r;
  }
  return sse;
}

}  // namespace

KernelFit fit_kernel_curve(std::span<const double> d, std::span<const double> y,
                           int max_iterations) {
  if (d.size() != y.size() || d.size() < 2) {
    fail(Errc::InvalidArgument, "kernel fit needs at least two (d, y) samples");
  }
  KernelFit fit{1.0, 1.0, curve_sse(d, y, 1.0, 1.0), 0};
  double damping = 1e-3;
  for (int it = 1; it <= max_iterations; ++it) {
    fit.iterations = it;
    if (fit.sse < 1e-30) return fit;
    // Normal equations of the Gauss-Newton step.
    double jaa = 0.0, jab = 0.0, jbb = 0.0, ga = 0.0, gb = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      const double dk = d[k];
      const double s = dk > 0.0 ? std::pow(dk, 2.0 * fit.b) : 0.0;
      const double denom = 1.0 + fit.a * s;
      const double p = 1.0 / denom;
      const double r = p - y[k];
      const double da = -s * p * p;
      const double db = dk > 0.0 ? -fit.a * s * 2.0 * std::log(dk) * p * p : 0.0;
      jaa += da * da;
      jab += da * db;
      jbb += db * db;
      ga += da * r;
      gb += db * r;
    }
    bool accepted = false;
    while (!accepted) {
      const double m00 = jaa * (1.0 + damping), m11 = jbb * (1.0 + damping), m01 = jab;
      const double det = m00 * m11 - m01 * m01;
      if (!(std::abs(det) > 0.0) || damping > 1e16) {
        return fit;  // no further decrease is representable
      }
      const double step_a = -(m11 * ga - m01 * gb) / det;
      const double step_b = -(m00 * gb - m01 * ga) / det;
      const double na = fit.a + step_a, nb = fit.b + step_b;
      const double nsse = (na > 0.0 && nb > 0.0) ? curve_sse(d, y, na, nb)
                                                 : std::numeric_limits<double>::infinity();
      if (nsse < fit.sse) {
        const double improvement = (fit.sse - nsse) / fit.sse;
        fit.a = na;
        fit.b = nb;
        fit.sse = nsse;
        damping = std::max(damping / 10.0, 1e-12);
        accepted = true;
        if (improvement < 1e-9) return fit;
      } else {
        damping *= 10.0;
      }
    }
  }
  fail(Errc::NonConvergence, "kernel fit did not converge in " +
                                 std::to_string(max_iterations) + " iterations");
}

KernelFit fit_kernel_ab(double min_dist, double spread) {
  if (!(spread > 0.0) || !(min_dist > 0.0 && min_dist < spread)) {
    fail(Errc::InvalidConfig, "kernel fit needs 0 < min_dist < spread");
  }
  constexpr std::size_t kPoints = 300;
  std::vector<double> d(kPoints), y(kPoints);
  for (std::size_t k = 0; k < kPoints; ++k) {
    d[k] = 3.0 * spread * static_cast<double>(k) / static_cast<double>(kPoints - 1);
    y[k] = d[k] <= min_dist ? 1.0 : std::exp(-(d[k] - min_dist) / spread);
  }
  return fit_kernel_curve(d, y);
}

// ---- pairs ------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kEnumerateLimit = 4'000'000;

std::size_t domain_size(const GraphSnapshot& g, PairDomain domain) {
  return domain == PairDomain::Node ? g.num_nodes() : g.num_edges();
}

std::vector<std::uint64_t> positive_keys(const GraphSnapshot& g, PairDomain domain) {
  std::vector<std::uint64_t> keys;
  if (domain == PairDomain::Node) {
    const std::uint64_t n = g.num_nodes();
    for (std::size_t k = 0; k < g.num_edges(); ++k) {
      const std::uint64_t s = g.src[k], t = g.dst[k];
      if (s == t) continue;
      keys.push_back(std::min(s, t) * n + std::max(s, t));
    }
  } else {
    const std::uint64_t m = g.num_edges();
    std::vector<std::vector<std::uint64_t>> incident(g.num_nodes());
    for (std::size_t k = 0; k < g.num_edges(); ++k) {
      incident[g.src[k]].push_back(k);
      if (g.dst[k] != g.src[k]) incident[g.dst[k]].push_back(k);
    }
    for (const auto& list : incident) {
      for (std::size_t x = 0; x < list.size(); ++x) {
        for (std::size_t y = x + 1; y < list.size(); ++y) keys.push_back(list[x] * m + list[y]);
      }
    }
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

TopoPair pair_from_key(PairDomain domain, std::uint64_t key, std::uint64_t n, double weight) {
  return {domain, static_cast<std::size_t>(key / n), static_cast<std::size_t>(key % n), weight};
}

}  // namespace

std::vector<TopoPair> positive_pairs(const GraphSnapshot& g, PairDomain domain) {
  const std::uint64_t n = domain_size(g, domain);
  std::vector<TopoPair> out;
  for (std::uint64_t key : positive_keys(g, domain)) {
    out.push_back(pair_from_key(domain, key, n, 1.0));
  }
  return out;
}

PairSampler::PairSampler(const GraphSnapshot& g, PairDomain domain, int negative_ratio)
    : domain_(domain), count_(domain_size(g, domain)), ratio_(negative_ratio) {
  if (negative_ratio < 1) fail(Errc::InvalidConfig, "negative ratio must be >= 1");
  positive_keys_ = positive_keys(g, domain);
  if (positive_keys_.empty()) {
    fail(Errc::DegenerateGraph, std::string(domain == PairDomain::Node ? "node" : "edge") +
                                    " domain has no adjacent pair");
  }
  for (std::uint64_t key : positive_keys_) {
    positives_.push_back(pair_from_key(domain, key, count_, 1.0));
  }
  const std::uint64_t n = count_;
  const std::uint64_t total = n * (n - 1) / 2;
  if (total <= kEnumerateLimit) {
    enumerated_ = true;
    negative_keys_.reserve(total - positive_keys_.size());
    for (std::uint64_t i = 0; i < n; ++i) {
      for (std::uint64_t j = i + 1; j < n; ++j) {
        const std::uint64_t key = i * n + j;
        if (!std::binary_search(positive_keys_.begin(), positive_keys_.end(), key)) {
          negative_keys_.push_back(key);
        }
      }
    }
  }
}

std::size_t PairSampler::available_negatives() const {
  const std::uint64_t n = count_;
  return static_cast<std::size_t>(n * (n - 1) / 2 - positive_keys_.size());
}

bool PairSampler::adjacent(std::size_t i, std::size_t j) const {
  const std::uint64_t key = std::min<std::uint64_t>(i, j) * count_ + std::max<std::uint64_t>(i, j);
  return std::binary_search(positive_keys_.begin(), positive_keys_.end(), key);
}

std::vector<TopoPair> PairSampler::sample(Rng& rng) const {
  const std::size_t available = available_negatives();
  const std::size_t want =
      std::min<std::size_t>(static_cast<std::size_t>(ratio_) * positives_.size(), available);
  std::vector<TopoPair> out = positives_;
  out.reserve(positives_.size() + want);
  if (want == 0) return out;

  if (enumerated_) {
    if (want == available) {
      for (std::uint64_t key : negative_keys_) out.push_back(pair_from_key(domain_, key, count_, 0.0));
      return out;
    }
    // Floyd's algorithm: `want` distinct positions out of `available`.
    std::unordered_set<std::size_t> chosen;
    chosen.reserve(want * 2);
    for (std::size_t j = available - want; j < available; ++j) {
      const std::size_t t = rng.index(j + 1);
      const std::size_t pick = chosen.insert(t).second ? t : j;
      if (pick == j) chosen.insert(j);
      out.push_back(pair_from_key(domain_, negative_keys_[pick], count_, 0.0));
    }
    return out;
  }

  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(want * 2);
  while (chosen.size() < want) {
    const std::size_t i = rng.index(count_);
    const std::size_t j = rng.index(count_);
    if (i == j || adjacent(i, j)) continue;
    const std::uint64_t key = std::min<std::uint64_t>(i, j) * count_ + std::max<std::uint64_t>(i, j);
    if (chosen.insert(key).second) out.push_back(pair_from_key(domain_, key, count_, 0.0));
  }
  return out;
}

std::vector<TopoPair> sample_pairs(const GraphSnapshot& g, PairDomain domain, int negative_ratio,
                                   Rng& rng) {
  return PairSampler(g, domain, negative_ratio).sample(rng);
}

// ---- optimizer -----------------------------------------------------------------------

void Adam::step(std::span<Matrix* const> params, std::span<const Matrix* const> grads) {
  if (params.size() != grads.size()) fail(Errc::ShapeMismatch, "one gradient per parameter");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  if (m_.size() != params.size()) fail(Errc::ShapeMismatch, "parameter list changed size");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    if (!p.same_shape(g) || !p.same_shape(m_[i])) {
      fail(Errc::ShapeMismatch, "gradient shape differs from its parameter");
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
      const double mhat = m_[i][k] / c1;
      const double vhat = v_[i][k] / c2;
      p[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

// ---- training --------------------------------------------------------------------------

TrainResult train(const GraphSnapshot& snapshot, ModelConfig model, const TrainConfig& config) {
  config.validate();
  if (snapshot.num_edges() == 0) fail(Errc::EmptyInput, "training snapshot has no edges");
  if (model.variant == Variant::Classifier && model.classes.empty()) {
    std::set<std::string> labels(snapshot.edge_labels.begin(), snapshot.edge_labels.end());
    model.classes.assign(labels.begin(), labels.end());
  }
  const KernelFit kernel = fit_kernel_ab(config.min_dist, config.spread);
  model.kernel_a = kernel.a;
  model.kernel_b = kernel.b;
  model.validate();

  Rng init_rng(mix_seed(config.seed, 1));
  Rng pair_rng(mix_seed(config.seed, 2));
  TrainResult result;
  result.checkpoint.config = model;
  ModelParams& params = result.checkpoint.params;
  params = ModelParams::init(model, init_rng);
  params.node_scaler = Standardizer::fit(snapshot.x);
  params.edge_scaler = Standardizer::fit(snapshot.e);
  const GraphTensors g = prepare(snapshot, params);
  const Matrix targets =
      model.variant == Variant::Classifier ? class_targets(snapshot, model) : Matrix();

  const bool topo = model.lambda_topo > 0.0;
  std::optional<PairSampler> node_sampler, edge_sampler;
  if (topo) {
    node_sampler.emplace(snapshot, PairDomain::Node, config.negative_ratio);
    edge_sampler.emplace(snapshot, PairDomain::Edge, config.negative_ratio);
  }
  std::vector<TopoPair> node_pairs, edge_pairs;

  auto slots = params.named();
  std::vector<Matrix*> ptrs;
  for (auto& [_, m] : slots) ptrs.push_back(m);
  Adam adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps);

  for (int epoch = 0; epoch <= config.epochs; ++epoch) {
    if (topo && (epoch == 0 || config.resample_pairs)) {
      node_pairs = node_sampler->sample(pair_rng);
      edge_pairs = edge_sampler->sample(pair_rng);
    }
    diff::Tape tape;
    const BoundParams bound = bind(tape, params, true);
    const Forward fwd = forward(tape, bound, model, g);
    const LossTerms terms = compute_losses(tape, fwd, model, g, targets, node_pairs, edge_pairs);
    EpochRecord rec{epoch, terms.task.value()[0], terms.topo_node.value()[0],
                    terms.topo_edge.value()[0], terms.total.value()[0]};
    result.history.push_back(rec);
    if (!std::isfinite(rec.total) || !std::isfinite(rec.task) || !std::isfinite(rec.topo_node) ||
        !std::isfinite(rec.topo_edge)) {
      fail(Errc::NaNLoss, "non-finite loss at epoch " + std::to_string(epoch));
    }
    if (epoch == config.epochs) break;
    tape.backward(terms.total);
    std::vector<const Matrix*> grads;
    grads.reserve(bound.leaves.size());
    for (const auto& leaf : bound.leaves) grads.push_back(&leaf.grad());
    adam.step(ptrs, grads);
  }
  return result;
}

void write_history_csv(std::span<const EpochRecord> history, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "epoch,l_task,l_topo_node,l_topo_edge,l_total\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << io::format_double(r.task) << ',' << io::format_double(r.topo_node)
       << ',' << io::format_double(r.topo_edge) << ',' << io::format_double(r.total) << '\n';
  }
  io::write_text(path, os.str());
}

// ---- inference -----------------------------------------------------------------------

Embedding embed(const GraphSnapshot& snapshot, const Checkpoint& ckpt) {
  ckpt.config.validate();
  const GraphTensors g = prepare(snapshot, ckpt.params);
  diff::Tape tape;
  const BoundParams bound = bind(tape, ckpt.params, false);
  const Forward fwd = forward(tape, bound, ckpt.config, g);
  Embedding out;
  out.h = fwd.encoded.h.value();
  out.z = fwd.z.value();
  out.u = fwd.u.value();
  out.w = fwd.w.value();
  if (ckpt.config.variant == Variant::Classifier) {
    out.probs = fwd.probs.value();
    out.edge_pred.reserve(out.probs.rows());
    for (std::size_t k = 0; k < out.probs.rows(); ++k) {
      const auto row = out.probs.row(k);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      out.edge_pred.push_back(ckpt.config.classes[static_cast<std::size_t>(best)]);
    }
    out.node_pred = majority_labels(snapshot, out.edge_pred);
  } else {
    out.x_hat = fwd.x_hat.value();
    out.e_hat = fwd.e_hat.value();
  }
  return out;
}

}  // namespace flowscope
