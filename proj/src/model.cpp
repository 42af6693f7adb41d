#include "flowscope/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "flowscope/error.hpp"
#include "flowscope/io.hpp"

namespace flowscope {

using diff::Matrix;
using diff::Tape;
using diff::Var;

std::string_view variant_name(Variant v) noexcept {
  return v == Variant::Autoencoder ? "gnn-ae" : "gnn-cls";
}

Variant parse_variant(std::string_view text) {
  if (text == "gnn-ae" || text == "ae") return Variant::Autoencoder;
  if (text == "gnn-cls" || text == "cls") return Variant::Classifier;
  fail(Errc::InvalidConfig, "unknown model variant '" + std::string(text) + "'");
}

// ---- config -----------------------------------------------------------------

void ModelConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(Errc::InvalidConfig, "model: " + msg); };
  if (gin_layers < 0) bad("gin_layers must be >= 0");
  if (hidden <= 0 || edge_latent <= 0) bad("hidden and edge_latent must be > 0");
  if (low_dim != 2) bad("low_dim must be 2");
  if (mlp_depth < 1) bad("mlp_depth must be >= 1");
  if (!(kernel_a > 0.0) || !(kernel_b > 0.0)) bad("kernel_a and kernel_b must be > 0");
  if (!(lambda_task >= 0.0) || !(lambda_topo >= 0.0)) bad("loss weights must be >= 0");
  if (!(gamma_pos >= 0.0) || !(gamma_neg >= gamma_pos)) bad("need gamma_neg >= gamma_pos >= 0");
  if (variant == Variant::Classifier) {
    if (classes.empty()) bad("classifier variant needs at least one class");
    std::set<std::string> seen(classes.begin(), classes.end());
    if (seen.size() != classes.size()) bad("duplicate class names");
    if (seen.count("")) bad("empty class name");
  }
}

nlohmann::ordered_json ModelConfig::to_json() const {
  return {
      {"variant", variant_name(variant)},
      {"gin_layers", gin_layers},
      {"hidden", hidden},
      {"edge_latent", edge_latent},
      {"low_dim", low_dim},
      {"mlp_depth", mlp_depth},
      {"kernel_a", kernel_a},
      {"kernel_b", kernel_b},
      {"lambda_task", lambda_task},
      {"lambda_topo", lambda_topo},
      {"gamma_pos", gamma_pos},
      {"gamma_neg", gamma_neg},
      {"classes", classes},
      {"fuse_node_context", fuse_node_context},
      {"topo_reduction", topo_reduction == Reduction::Sum ? "sum" : "mean"},
      {"gin_norm", gin_norm == GinNorm::None ? "none" : "layer"},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "variant",    "gin_layers", "hidden",      "edge_latent", "low_dim",
      "mlp_depth",  "kernel_a",   "kernel_b",    "lambda_task", "lambda_topo",
      "gamma_pos",  "gamma_neg",  "classes",     "fuse_node_context", "topo_reduction", "gin_norm"};
  if (!j.is_object()) fail(Errc::InvalidConfig, "model config must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) fail(Errc::InvalidConfig, "unknown model config key '" + key + "'");
  }
  ModelConfig c;
  try {
    if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
    c.gin_layers = j.value("gin_layers", c.gin_layers);
    c.hidden = j.value("hidden", c.hidden);
    c.edge_latent = j.value("edge_latent", c.edge_latent);
    c.low_dim = j.value("low_dim", c.low_dim);
    c.mlp_depth = j.value("mlp_depth", c.mlp_depth);
    c.kernel_a = j.value("kernel_a", c.kernel_a);
    c.kernel_b = j.value("kernel_b", c.kernel_b);
    c.lambda_task = j.value("lambda_task", c.lambda_task);
    c.lambda_topo = j.value("lambda_topo", c.lambda_topo);
    c.gamma_pos = j.value("gamma_pos", c.gamma_pos);
    c.gamma_neg = j.value("gamma_neg", c.gamma_neg);
    c.classes = j.value("classes", c.classes);
    c.fuse_node_context = j.value("fuse_node_context", c.fuse_node_context);
    if (j.contains("topo_reduction")) {
      const auto r = j["topo_reduction"].get<std::string>();
      if (r != "sum" && r != "mean") fail(Errc::InvalidConfig, "topo_reduction must be sum or mean");
      c.topo_reduction = r == "sum" ? Reduction::Sum : Reduction::Mean;
    }
    if (j.contains("gin_norm")) {
      const auto n = j["gin_norm"].get<std::string>();
      if (n != "none" && n != "layer") fail(Errc::InvalidConfig, "gin_norm must be none or layer");
      c.gin_norm = n == "none" ? GinNorm::None : GinNorm::Layer;
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- parameters -------------------------------------------------------------

namespace {

Matrix glorot(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  for (double& v : w.values()) v = rng.uniform(-limit, limit);
  return w;
}

Mlp make_mlp(std::size_t in, std::size_t width, std::size_t out, int depth, Rng& rng) {
  Mlp mlp;
  std::size_t from = in;
  for (int l = 0; l < depth; ++l) {
    const std::size_t to = l + 1 == depth ? out : width;
    mlp.layers.push_back({glorot(from, to, rng), Matrix(1, to)});
    from = to;
  }
  return mlp;
}

template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
  auto mlp = [&](const std::string& prefix, auto& m) {
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
      fn(prefix + "." + std::to_string(k) + ".weight", m.layers[k].weight);
      fn(prefix + "." + std::to_string(k) + ".bias", m.layers[k].bias);
    }
  };
  for (std::size_t l = 0; l < p.gin.size(); ++l) {
    const std::string prefix = "gin." + std::to_string(l);
    fn(prefix + ".eps", p.gin_eps[l]);
    mlp(prefix + ".mlp", p.gin[l]);
  }
  mlp("edge", p.edge);
  mlp("proj_node", p.proj_node);
  mlp("proj_edge", p.proj_edge);
  mlp("dec_node", p.dec_node);
  mlp("dec_edge", p.dec_edge);
  mlp("classifier", p.classifier);
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams p;
  const auto hidden = static_cast<std::size_t>(config.hidden);
  const auto latent = static_cast<std::size_t>(config.edge_latent);
  const auto low = static_cast<std::size_t>(config.low_dim);
  const int depth = config.mlp_depth;

  std::size_t in = kNodeFeatureCount;
  for (int l = 0; l < config.gin_layers; ++l) {
    p.gin.push_back(make_mlp(in, hidden, hidden, depth, rng));
    p.gin_eps.push_back(Matrix::scalar(0.0));
    in = hidden;
  }
  const std::size_t node_dim = config.node_dim();
  const std::size_t edge_in = (config.fuse_node_context ? node_dim : 0) + kEdgeFeatureCount;
  p.edge = make_mlp(edge_in, latent, latent, depth, rng);
  p.proj_node = make_mlp(node_dim, hidden, low, depth, rng);
  p.proj_edge = make_mlp(latent, hidden, low, depth, rng);
  if (config.variant == Variant::Autoencoder) {
    p.dec_node = make_mlp(node_dim, hidden, kNodeFeatureCount, depth, rng);
    p.dec_edge = make_mlp(latent, hidden, kEdgeFeatureCount, depth, rng);
  } else {
    p.classifier = make_mlp(latent, hidden, config.num_classes(), depth, rng);
  }
  return p;
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::named() {
  std::vector<std::pair<std::string, Matrix*>> out;
  visit_params(*this, [&](std::string name, Matrix& m) { out.emplace_back(std::move(name), &m); });
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  visit_params(*this,
               [&](std::string name, const Matrix& m) { out.emplace_back(std::move(name), &m); });
  return out;
}

GraphTensors prepare(const GraphSnapshot& s, const ModelParams& params) {
  if (params.node_scaler.width() != kNodeFeatureCount ||
      params.edge_scaler.width() != kEdgeFeatureCount) {
    fail(Errc::ConfigMismatch, "model has no standardization statistics for 17/98 features");
  }
  if (s.x.cols() != kNodeFeatureCount || s.e.cols() != kEdgeFeatureCount ||
      s.x.rows() != s.num_nodes() || s.e.rows() != s.num_edges()) {
    fail(Errc::ShapeMismatch, "snapshot feature matrices do not match N x 17 / M x 98");
  }
  GraphTensors g;
  g.x = params.node_scaler.apply(s.x);
  g.e = params.edge_scaler.apply(s.e);
  g.src = s.src;
  g.dst = s.dst;
  g.num_nodes = s.num_nodes();
  return g;
}

// ---- forward ----------------------------------------------------------------

namespace {

template <typename Next>
BoundParams assemble(const ModelParams& params, Next next) {
  BoundParams b;
  auto mlp = [&](const Mlp& m) {
    BoundMlp out;
    for (const auto& layer : m.layers) {
      Var w = next(layer.weight);
      Var bias = next(layer.bias);
      out.layers.emplace_back(w, bias);
    }
    return out;
  };
  // Same order as visit_params.
  for (std::size_t l = 0; l < params.gin.size(); ++l) {
    b.gin_eps.push_back(next(params.gin_eps[l]));
    b.gin.push_back(mlp(params.gin[l]));
  }
  b.edge = mlp(params.edge);
  b.proj_node = mlp(params.proj_node);
  b.proj_edge = mlp(params.proj_edge);
  b.dec_node = mlp(params.dec_node);
  b.dec_edge = mlp(params.dec_edge);
  b.classifier = mlp(params.classifier);
  return b;
}

}  // namespace

BoundParams bind(Tape& tape, const ModelParams& params, bool trainable) {
  std::vector<Var> leaves;
  BoundParams b = assemble(params, [&](const Matrix& m) {
    leaves.push_back(trainable ? tape.leaf(m) : tape.constant(m));
    return leaves.back();
  });
  b.leaves = std::move(leaves);
  return b;
}

BoundParams bind(const ModelParams& layout, std::span<const Var> vars) {
  std::size_t k = 0;
  BoundParams b = assemble(layout, [&](const Matrix& m) {
    if (k >= vars.size() || !vars[k].value().same_shape(m)) {
      fail(Errc::ShapeMismatch, "bound variable " + std::to_string(k) + " does not match the layout");
    }
    return vars[k++];
  });
  if (k != vars.size()) fail(Errc::ShapeMismatch, "too many bound variables");
  b.leaves.assign(vars.begin(), vars.end());
  return b;
}

Var apply_mlp(const BoundMlp& mlp, Var x) {
  for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
    const auto& [w, bias] = mlp.layers[k];
    x = diff::add_row(diff::matmul(x, w), bias);
    if (k + 1 < mlp.layers.size()) x = diff::relu(x);
  }
  return x;
}

Var row_normalize(Var x) {
  Tape& tape = *x.tape();
  const std::size_t d = x.cols();
  Var avg = tape.constant(Matrix(d, 1, 1.0 / static_cast<double>(d)));
  Var spread = tape.constant(Matrix(1, d, 1.0));
  Var centered = diff::sub(x, diff::matmul(diff::matmul(x, avg), spread));
  Var var = diff::matmul(diff::mul(centered, centered), avg);
  Var inv = diff::pow(diff::add_scalar(var, 1e-5), -0.5);
  return diff::mul(centered, diff::matmul(inv, spread));
}

Encoded encode_nodes(const BoundParams& p, Var x, std::span<const std::size_t> src,
                     std::span<const std::size_t> dst, std::size_t num_nodes, GinNorm norm) {
  if (src.size() != dst.size()) fail(Errc::ShapeMismatch, "src/dst length mismatch");
  if (x.rows() != num_nodes) fail(Errc::ShapeMismatch, "node matrix rows != N");
  // Each edge hands its source to its target; the reverse direction skips
  // self-loops so a loop contributes the node once, like any other edge.
  std::vector<std::size_t> rev_from, rev_to;
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (src[k] == dst[k]) continue;
    rev_from.push_back(dst[k]);
    rev_to.push_back(src[k]);
  }
  Encoded out;
  Var h = x;
  for (std::size_t l = 0; l < p.gin.size(); ++l) {
    Var nb = diff::add(diff::scatter_add(diff::index_select(h, src), dst, num_nodes),
                       diff::scatter_add(diff::index_select(h, rev_from), rev_to, num_nodes));
    out.neighbor_sums.push_back(nb);
    Var self = diff::mul_scalar(h, diff::add_scalar(p.gin_eps[l], 1.0));
    h = apply_mlp(p.gin[l], diff::add(self, nb));
    if (norm == GinNorm::Layer) h = row_normalize(h);
  }
  out.h = h;
  return out;
}

Var fuse_edges(const BoundParams& p, const ModelConfig& config, Var h, Var e,
               std::span<const std::size_t> src, std::span<const std::size_t> dst) {
  if (src.size() != e.rows() || dst.size() != e.rows()) {
    fail(Errc::ShapeMismatch, "edge matrix rows != number of edges");
  }
  if (!config.fuse_node_context) return apply_mlp(p.edge, e);
  Var ctx = diff::add(diff::index_select(h, src), diff::index_select(h, dst));
  return apply_mlp(p.edge, diff::concat(ctx, e, 1));
}

Var project(const BoundMlp& head, Var latent) { return apply_mlp(head, latent); }

Forward forward(Tape& tape, const BoundParams& p, const ModelConfig& config,
                const GraphTensors& g) {
  Forward f;
  Var x = tape.constant(g.x);
  Var e = tape.constant(g.e);
  f.encoded = encode_nodes(p, x, g.src, g.dst, g.num_nodes, config.gin_norm);
  f.z = fuse_edges(p, config, f.encoded.h, e, g.src, g.dst);
  f.u = project(p.proj_node, f.encoded.h);
  f.w = project(p.proj_edge, f.z);
  if (config.variant == Variant::Classifier) {
    f.probs = diff::sigmoid(apply_mlp(p.classifier, f.z));
  } else {
    f.x_hat = apply_mlp(p.dec_node, f.encoded.h);
    f.e_hat = apply_mlp(p.dec_edge, f.z);
  }
  return f;
}

// ---- losses -----------------------------------------------------------------

double kernel_p(double distance, double a, double b) {
  return 1.0 / (1.0 + a * std::pow(distance, 2.0 * b));
}

namespace {

Var one_minus(Var x) { return diff::add_scalar(diff::scale(x, -1.0), 1.0); }

Var zero(Tape& tape) { return tape.constant(Matrix::scalar(0.0)); }

}  // namespace

Var loss_topo(Var coords, std::span<const TopoPair> pairs, double a, double b,
              Reduction reduction) {
  if (pairs.empty()) fail(Errc::EmptyPairSet, "topology loss needs at least one pair");
  std::vector<std::size_t> is, js;
  Matrix w(pairs.size(), 1);
  is.reserve(pairs.size());
  js.reserve(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& pr = pairs[k];
    if (pr.i == pr.j) fail(Errc::InvalidArgument, "topology pair with i == j");
    if (!(pr.weight >= 0.0 && pr.weight <= 1.0)) {
      fail(Errc::InvalidArgument, "topology pair weight outside [0, 1]");
    }
    is.push_back(pr.i);
    js.push_back(pr.j);
    w[k] = pr.weight;
  }
  Tape& tape = *coords.tape();
  Var d = diff::sub(diff::index_select(coords, is), diff::index_select(coords, js));
  Var p = diff::clamp(diff::umap_kernel(d, a, b), kProbClamp, 1.0 - kProbClamp);
  Var wv = tape.constant(w);
  Var attract = diff::sum(diff::mul(wv, diff::log(p)));
  Var repel = diff::sum(diff::mul(one_minus(wv), diff::log(one_minus(p))));
  const double factor =
      reduction == Reduction::Sum ? -1.0 : -1.0 / static_cast<double>(pairs.size());
  return diff::scale(diff::add(attract, repel), factor);
}

Var loss_mse(Var x, Var x_hat, Var e, Var e_hat) {
  auto term = [](Var a, Var b) {
    if (a.rows() == 0) {
      if (!a.value().same_shape(b.value())) fail(Errc::ShapeMismatch, "reconstruction shape");
      return a.tape()->constant(Matrix::scalar(0.0));
    }
    Var d = diff::sub(a, b);
    return diff::scale(diff::sum(diff::mul(d, d)), 1.0 / static_cast<double>(a.rows()));
  };
  return diff::add(term(x, x_hat), term(e, e_hat));
}

Var loss_asym(Var probs, const Matrix& targets, double gamma_pos, double gamma_neg) {
  if (!probs.value().same_shape(targets)) {
    fail(Errc::ShapeMismatch, "class probabilities and targets differ in shape");
  }
  Tape& tape = *probs.tape();
  if (probs.rows() == 0) return zero(tape);
  Var y = tape.constant(targets);
  Var p = diff::clamp(probs, kProbClamp, 1.0 - kProbClamp);
  Var q = one_minus(p);
  Var pos = diff::mul(y, diff::mul(diff::pow(q, gamma_pos), diff::log(p)));
  Var neg = diff::mul(one_minus(y), diff::mul(diff::pow(p, gamma_neg), diff::log(q)));
  return diff::scale(diff::sum(diff::add(pos, neg)), -1.0 / static_cast<double>(probs.rows()));
}

Var total_loss(Var task, Var topo_node, Var topo_edge, double lambda_task, double lambda_topo) {
  return diff::add(diff::scale(task, lambda_task),
                   diff::scale(diff::add(topo_node, topo_edge), lambda_topo));
}

Matrix class_targets(const GraphSnapshot& s, const ModelConfig& config) {
  Matrix y(s.num_edges(), config.num_classes());
  for (std::size_t k = 0; k < s.num_edges(); ++k) {
    const auto it = std::find(config.classes.begin(), config.classes.end(), s.edge_labels[k]);
    if (it == config.classes.end()) {
      fail(Errc::ConfigMismatch,
           "edge label '" + s.edge_labels[k] + "' is not one of the model's classes");
    }
    y(k, static_cast<std::size_t>(it - config.classes.begin())) = 1.0;
  }
  return y;
}

LossTerms compute_losses(Tape& tape, const Forward& fwd, const ModelConfig& config,
                         const GraphTensors& g, const Matrix& targets,
                         std::span<const TopoPair> node_pairs,
                         std::span<const TopoPair> edge_pairs) {
  LossTerms t;
  if (config.variant == Variant::Classifier) {
    t.task = loss_asym(fwd.probs, targets, config.gamma_pos, config.gamma_neg);
  } else {
    t.task = loss_mse(tape.constant(g.x), fwd.x_hat, tape.constant(g.e), fwd.e_hat);
  }
  auto topo = [&](Var coords, std::span<const TopoPair> pairs) {
    if (pairs.empty() && config.lambda_topo == 0.0) return zero(tape);
    return loss_topo(coords, pairs, config.kernel_a, config.kernel_b, config.topo_reduction);
  };
  t.topo_node = topo(fwd.u, node_pairs);
  t.topo_edge = topo(fwd.w, edge_pairs);
  t.total = total_loss(t.task, t.topo_node, t.topo_edge, config.lambda_task, config.lambda_topo);
  return t;
}

// ---- checkpoint ---------------------------------------------------------------

namespace {

nlohmann::ordered_json scaler_json(const Standardizer& s) {
  return {{"mean", s.mean}, {"scale", s.scale}};
}

Standardizer scaler_from(const nlohmann::json& j, std::size_t width, const char* what) {
  Standardizer s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  if (s.mean.size() != width || s.scale.size() != width) {
    fail(Errc::ConfigMismatch, std::string("checkpoint ") + what + " statistics have wrong width");
  }
  return s;
}

void require_finite(std::span<const double> values, const std::string& what) {
  for (double v : values) {
    if (!std::isfinite(v)) fail(Errc::NaNLoss, "non-finite value in " + what);
  }
}

}  // namespace

nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (const auto& [name, m] : ckpt.params.named()) {
    require_finite(m->values(), name);
    params[name] = {{"shape", {m->rows(), m->cols()}},
                    {"data", std::vector<double>(m->values().begin(), m->values().end())}};
  }
  return {
      {"format_version", kCheckpointFormat},
      {"config", ckpt.config.to_json()},
      {"standardization",
       {{"node", scaler_json(ckpt.params.node_scaler)},
        {"edge", scaler_json(ckpt.params.edge_scaler)}}},
      {"params", params},
  };
}

Checkpoint checkpoint_from_json(const nlohmann::json& doc) {
  Checkpoint ckpt;
  try {
    if (doc.at("format_version").get<int>() != kCheckpointFormat) {
      fail(Errc::ConfigMismatch, "unsupported checkpoint format_version");
    }
    ckpt.config = ModelConfig::from_json(doc.at("config"));
    Rng rng(0);  // shapes only; values are overwritten below
    ckpt.params = ModelParams::init(ckpt.config, rng);
    const auto& stats = doc.at("standardization");
    ckpt.params.node_scaler = scaler_from(stats.at("node"), kNodeFeatureCount, "node");
    ckpt.params.edge_scaler = scaler_from(stats.at("edge"), kEdgeFeatureCount, "edge");

    const auto& params = doc.at("params");
    auto slots = ckpt.params.named();
    if (params.size() != slots.size()) {
      fail(Errc::ConfigMismatch, "checkpoint holds " + std::to_string(params.size()) +
                                     " arrays, config implies " + std::to_string(slots.size()));
    }
    for (auto& [name, m] : slots) {
      if (!params.contains(name)) fail(Errc::ConfigMismatch, "checkpoint lacks '" + name + "'");
      const auto& entry = params.at(name);
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != m->rows() || shape[1] != m->cols()) {
        fail(Errc::ConfigMismatch, "checkpoint array '" + name + "' has the wrong shape");
      }
      auto data = entry.at("data").get<std::vector<double>>();
      if (data.size() != m->size()) {
        fail(Errc::ConfigMismatch, "checkpoint array '" + name + "' has the wrong length");
      }
      *m = Matrix(m->rows(), m->cols(), std::move(data));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ParseError, std::string("checkpoint: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_text(path, checkpoint_to_json(ckpt).dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ParseError, path.string() + ": " + e.what());
  }
  return checkpoint_from_json(doc);
}

}  // namespace flowscope
