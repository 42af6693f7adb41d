#include "flowscope/explain.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include "flowscope/error.hpp"
#include "flowscope/io.hpp"

namespace flowscope {

using diff::Matrix;
using diff::Var;
using io::format_double;

std::string_view grouping_name(Grouping g) {
  return g == Grouping::Atomic ? "atomic" : "per_bit";
}

Grouping parse_grouping(std::string_view text) {
  if (text == "atomic" || text == "group") return Grouping::Atomic;
  if (text == "per_bit" || text == "bit") return Grouping::PerBit;
  fail(Errc::InvalidConfig, "unknown grouping '" + std::string(text) + "'");
}

std::vector<FeatureGroup> singleton_groups(std::span<const std::string> names) {
  std::vector<FeatureGroup> out;
  out.reserve(names.size());
  for (std::size_t c = 0; c < names.size(); ++c) out.push_back({names[c], {c}});
  return out;
}

std::vector<FeatureGroup> edge_feature_groups(const PortVocabulary& vocab, Grouping grouping) {
  const std::vector<std::string> names = edge_feature_names(vocab);
  if (grouping == Grouping::PerBit) return singleton_groups(names);
  std::vector<FeatureGroup> out;
  for (std::size_t c = 0; c < kProtoOffset; ++c) out.push_back({names[c], {c}});
  auto block = [&](std::string name, std::size_t begin, std::size_t end) {
    FeatureGroup g{std::move(name), {}};
    for (std::size_t c = begin; c < end; ++c) g.columns.push_back(c);
    out.push_back(std::move(g));
  };
  const std::size_t dst_offset = kSrcPortOffset + vocab.size(PortSide::Src);
  block("proto", kProtoOffset, kSrcPortOffset);
  block("src_port", kSrcPortOffset, dst_offset);
  block("dst_port", dst_offset, names.size());
  return out;
}

std::vector<FeatureGroup> node_feature_groups() {
  const auto& names = node_feature_names();
  return singleton_groups(std::span<const std::string>(names.data(), names.size()));
}

namespace {

void check_inputs(std::span<const double> x, const Matrix& background,
                  std::span<const FeatureGroup> groups) {
  if (background.rows() == 0) fail(Errc::EmptyBackground, "background set is empty");
  if (x.size() != background.cols()) {
    fail(Errc::ShapeMismatch, "input width differs from background width");
  }
  if (groups.empty()) fail(Errc::InvalidArgument, "no feature groups");
  std::vector<int> seen(x.size(), 0);
  for (const auto& g : groups) {
    if (g.columns.empty()) fail(Errc::InvalidArgument, "feature group '" + g.name + "' is empty");
    for (std::size_t c : g.columns) {
      if (c >= x.size()) fail(Errc::InvalidArgument, "group column out of range");
      if (seen[c]++) fail(Errc::InvalidArgument, "column in more than one group");
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    fail(Errc::InvalidArgument, "feature groups do not cover every column");
  }
}

// Running mean; exact when all values are equal.
double running_mean(const Matrix& m, std::size_t first, std::size_t count, std::size_t col) {
  double mean = 0.0;
  for (std::size_t r = 0; r < count; ++r) {
    mean += (m(first + r, col) - mean) / static_cast<double>(r + 1);
  }
  return mean;
}

Matrix evaluate(const BatchFn& f, const Matrix& rows) {
  Matrix out = f(rows);
  if (out.rows() != rows.rows()) fail(Errc::ShapeMismatch, "function changed the row count");
  return out;
}

void set_group(std::span<double> row, std::span<const double> x, const FeatureGroup& g) {
  for (std::size_t c : g.columns) row[c] = x[c];
}

AttributionResult empty_result(std::span<const FeatureGroup> groups, std::size_t dims) {
  AttributionResult r;
  for (const auto& g : groups) r.features.push_back(g.name);
  r.phi = Matrix(dims, groups.size());
  r.std_error = Matrix(dims, groups.size());
  r.phi0.assign(dims, 0.0);
  r.fx.assign(dims, 0.0);
  r.total_std_error.assign(dims, 0.0);
  return r;
}

// Output at x plus mean output over the background.
void base_values(const BatchFn& f, std::span<const double> x, const Matrix& background,
                 AttributionResult& r) {
  const Matrix fb = evaluate(f, background);
  for (std::size_t i = 0; i < r.dims(); ++i) r.phi0[i] = running_mean(fb, 0, fb.rows(), i);
  const Matrix fx = evaluate(f, Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())));
  for (std::size_t i = 0; i < r.dims(); ++i) r.fx[i] = fx(0, i);
}

std::size_t output_dims(const BatchFn& f, const Matrix& background) {
  Matrix one(1, background.cols());
  std::copy(background.row(0).begin(), background.row(0).end(), one.row(0).begin());
  return evaluate(f, one).cols();
}

}  // namespace

AttributionResult mc_shap(const BatchFn& f, std::span<const double> x, const Matrix& background,
                          std::span<const FeatureGroup> groups, std::size_t mc_samples,
                          Rng& rng) {
  check_inputs(x, background, groups);
  if (mc_samples < 1) fail(Errc::InvalidArgument, "mc_samples must be >= 1");
  const std::size_t G = groups.size();
  const std::size_t F = x.size();
  const std::size_t d = output_dims(f, background);
  AttributionResult r = empty_result(groups, d);
  r.mc_samples = mc_samples;
  base_values(f, x, background, r);

  // Welford accumulators per cell, and for the per-sample total.
  Matrix mean(d, G), m2(d, G);
  std::vector<double> t_mean(d, 0.0), t_m2(d, 0.0);
  const std::size_t per_chunk = std::max<std::size_t>(1, 4096 / (G + 1));
  std::vector<std::size_t> perm(G);
  std::vector<std::size_t> perms;
  std::size_t n = 0;
  for (std::size_t start = 0; start < mc_samples; start += per_chunk) {
    const std::size_t chunk = std::min(per_chunk, mc_samples - start);
    Matrix rows(chunk * (G + 1), F);
    perms.assign(chunk * G, 0);
    for (std::size_t s = 0; s < chunk; ++s) {
      const std::size_t b = rng.index(background.rows());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(perm));
      std::copy(perm.begin(), perm.end(), perms.begin() + static_cast<std::ptrdiff_t>(s * G));
      const std::size_t base = s * (G + 1);
      std::copy(background.row(b).begin(), background.row(b).end(), rows.row(base).begin());
      for (std::size_t t = 1; t <= G; ++t) {
        auto row = rows.row(base + t);
        const auto prev = rows.row(base + t - 1);
        std::copy(prev.begin(), prev.end(), row.begin());
        set_group(row, x, groups[perm[t - 1]]);
      }
    }
    const Matrix out = evaluate(f, rows);
    for (std::size_t s = 0; s < chunk; ++s) {
      ++n;
      const double dn = static_cast<double>(n);
      const std::size_t base = s * (G + 1);
      for (std::size_t t = 1; t <= G; ++t) {
        const std::size_t j = perms[s * G + t - 1];
        for (std::size_t i = 0; i < d; ++i) {
          const double v = out(base + t, i) - out(base + t - 1, i);
          const double delta = v - mean(i, j);
          mean(i, j) += delta / dn;
          m2(i, j) += delta * (v - mean(i, j));
        }
      }
      for (std::size_t i = 0; i < d; ++i) {
        const double v = out(base + G, i) - out(base, i);
        const double delta = v - t_mean[i];
        t_mean[i] += delta / dn;
        t_m2[i] += delta * (v - t_mean[i]);
      }
    }
  }
  const double K = static_cast<double>(mc_samples);
  auto se = [&](double m2v) { return mc_samples > 1 ? std::sqrt(m2v / (K - 1.0) / K) : 0.0; };
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < G; ++j) {
      r.phi(i, j) = mean(i, j);
      r.std_error(i, j) = se(m2(i, j));
    }
    r.total_std_error[i] = se(t_m2[i]);
  }
  return r;
}

AttributionResult exact_shap(const BatchFn& f, std::span<const double> x, const Matrix& background,
                             std::span<const FeatureGroup> groups) {
  check_inputs(x, background, groups);
  const std::size_t G = groups.size();
  if (G > 20) fail(Errc::InvalidArgument, "exact enumeration is limited to 20 groups");
  const std::size_t F = x.size();
  const std::size_t B = background.rows();
  const std::size_t d = output_dims(f, background);
  AttributionResult r = empty_result(groups, d);
  base_values(f, x, background, r);

  // v(S) = mean over the background of f with the groups in S taken from x.
  const std::size_t masks = std::size_t{1} << G;
  Matrix value(masks, d);
  const std::size_t per_chunk = std::max<std::size_t>(1, 4096 / B);
  for (std::size_t start = 0; start < masks; start += per_chunk) {
    const std::size_t chunk = std::min(per_chunk, masks - start);
    Matrix rows(chunk * B, F);
    for (std::size_t m = 0; m < chunk; ++m) {
      for (std::size_t b = 0; b < B; ++b) {
        auto row = rows.row(m * B + b);
        std::copy(background.row(b).begin(), background.row(b).end(), row.begin());
        for (std::size_t j = 0; j < G; ++j) {
          if ((start + m) >> j & 1) set_group(row, x, groups[j]);
        }
      }
    }
    const Matrix out = evaluate(f, rows);
    for (std::size_t m = 0; m < chunk; ++m) {
      for (std::size_t i = 0; i < d; ++i) value(start + m, i) = running_mean(out, m * B, B, i);
    }
  }
  // weight(s) = s! (G - s - 1)! / G! = 1 / (G * C(G - 1, s))
  std::vector<double> weight(G);
  double binom = 1.0;
  for (std::size_t s = 0; s < G; ++s) {
    weight[s] = 1.0 / (static_cast<double>(G) * binom);
    binom = binom * static_cast<double>(G - 1 - s) / static_cast<double>(s + 1);
  }
  for (std::size_t mask = 0; mask < masks; ++mask) {
    const auto size = static_cast<std::size_t>(std::popcount(mask));
    for (std::size_t j = 0; j < G; ++j) {
      if (mask >> j & 1) continue;
      const std::size_t with = mask | (std::size_t{1} << j);
      for (std::size_t i = 0; i < d; ++i) {
        r.phi(i, j) += weight[size] * (value(with, i) - value(mask, i));
      }
    }
  }
  return r;
}

Additivity additivity_check(const AttributionResult& result, const BatchFn& f,
                            std::span<const double> x) {
  const Matrix fx = evaluate(f, Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())));
  if (fx.cols() != result.dims()) fail(Errc::ShapeMismatch, "output width differs from result");
  Additivity a;
  for (std::size_t i = 0; i < result.dims(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < result.phi.cols(); ++j) s += result.phi(i, j);
    a.residual.push_back(std::abs(s - (fx(0, i) - result.phi0[i])));
    a.std_error.push_back(result.total_std_error[i]);
  }
  return a;
}

std::string direction_glyph(std::size_t axis, double value) {
  switch (axis) {
    case 0: return value < 0.0 ? "←" : "→";
    case 1: return value < 0.0 ? "↓" : "↑";
    default: return value < 0.0 ? "-" : "+";
  }
}

std::vector<DriverRow> global_importance(
    const std::map<std::string, std::vector<AttributionResult>>& by_class, std::size_t axis,
    std::size_t top_k) {
  std::vector<DriverRow> rows;
  for (const auto& [cls, results] : by_class) {
    if (results.empty()) fail(Errc::EmptyGroup, "no attributions for class '" + cls + "'");
    const auto& features = results.front().features;
    for (const auto& r : results) {
      if (r.features != features) fail(Errc::InvalidArgument, "results use different features");
      if (axis >= r.dims()) fail(Errc::InvalidArgument, "axis out of range");
    }
    // Sorting before summing makes the mean independent of result order.
    std::vector<double> means(features.size());
    std::vector<double> vals(results.size());
    for (std::size_t j = 0; j < features.size(); ++j) {
      for (std::size_t k = 0; k < results.size(); ++k) vals[k] = results[k].phi(axis, j);
      std::sort(vals.begin(), vals.end());
      double s = 0.0;
      for (double v : vals) s += v;
      means[j] = s / static_cast<double>(vals.size());
    }
    std::vector<std::size_t> order(features.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(means[a]) > std::abs(means[b]);
    });
    for (std::size_t r = 0; r < std::min(top_k, order.size()); ++r) {
      const std::size_t j = order[r];
      rows.push_back({cls, axis, r + 1, features[j], means[j], direction_glyph(axis, means[j])});
    }
  }
  return rows;
}

Matrix sample_background(const Matrix& rows, std::size_t size, Rng& rng) {
  if (rows.rows() == 0 || size == 0) fail(Errc::EmptyBackground, "no background rows available");
  std::vector<std::size_t> idx(rows.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (size < idx.size()) {
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(size);
    std::sort(idx.begin(), idx.end());
  }
  Matrix out(idx.size(), rows.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy(rows.row(idx[r]).begin(), rows.row(idx[r]).end(), out.row(r).begin());
  }
  return out;
}

// ---- adapters ----------------------------------------------------------------

FrozenGraph::FrozenGraph(const GraphSnapshot& snapshot, const Checkpoint& checkpoint)
    : ckpt_(&checkpoint), g_(prepare(snapshot, checkpoint.params)) {
  diff::Tape tape;
  const BoundParams p = bind(tape, checkpoint.params, false);
  const Encoded enc = encode_nodes(p, tape.constant(g_.x), g_.src, g_.dst, g_.num_nodes,
                                   checkpoint.config.gin_norm);
  h_ = enc.h.value();
  for (const Var& nb : enc.neighbor_sums) neighbor_sums_.push_back(nb.value());
}

namespace {

Matrix repeat_row(std::span<const double> row, std::size_t n) {
  Matrix out(n, row.size());
  for (std::size_t r = 0; r < n; ++r) std::copy(row.begin(), row.end(), out.row(r).begin());
  return out;
}

}  // namespace

BatchFn FrozenGraph::edge_function(std::size_t edge) const {
  if (edge >= g_.src.size()) fail(Errc::InvalidArgument, "edge index out of range");
  std::vector<double> ctx(h_.cols());
  for (std::size_t c = 0; c < ctx.size(); ++c) {
    ctx[c] = h_(g_.src[edge], c) + h_(g_.dst[edge], c);
  }
  const Checkpoint* ckpt = ckpt_;
  return [ckpt, ctx = std::move(ctx)](const Matrix& rows) {
    if (rows.cols() != kEdgeFeatureCount) fail(Errc::ShapeMismatch, "edge rows must have 98 columns");
    diff::Tape tape;
    const BoundParams p = bind(tape, ckpt->params, false);
    Var e = tape.constant(rows);
    Var in = ckpt->config.fuse_node_context
                 ? diff::concat(tape.constant(repeat_row(ctx, rows.rows())), e, 1)
                 : e;
    return project(p.proj_edge, apply_mlp(p.edge, in)).value();
  };
}

BatchFn FrozenGraph::node_function(std::size_t node) const {
  if (node >= g_.num_nodes) fail(Errc::InvalidArgument, "node index out of range");
  std::vector<std::vector<double>> nbs;
  for (const Matrix& nb : neighbor_sums_) nbs.emplace_back(nb.row(node).begin(), nb.row(node).end());
  const Checkpoint* ckpt = ckpt_;
  return [ckpt, nbs = std::move(nbs)](const Matrix& rows) {
    if (rows.cols() != kNodeFeatureCount) fail(Errc::ShapeMismatch, "node rows must have 17 columns");
    diff::Tape tape;
    const BoundParams p = bind(tape, ckpt->params, false);
    Var h = tape.constant(rows);
    for (std::size_t l = 0; l < p.gin.size(); ++l) {
      Var self = diff::mul_scalar(h, diff::add_scalar(p.gin_eps[l], 1.0));
      h = apply_mlp(p.gin[l], diff::add(self, tape.constant(repeat_row(nbs[l], rows.rows()))));
      if (ckpt->config.gin_norm == GinNorm::Layer) h = row_normalize(h);
    }
    return project(p.proj_node, h).value();
  };
}

// ---- driver ------------------------------------------------------------------

void ExplainConfig::validate() const {
  if (mc_samples < 1) fail(Errc::InvalidConfig, "explain.mc_samples must be >= 1");
  if (background < 1) fail(Errc::InvalidConfig, "explain.background must be >= 1");
  if (per_class < 1) fail(Errc::InvalidConfig, "explain.per_class must be >= 1");
  if (top_k < 1) fail(Errc::InvalidConfig, "explain.top_k must be >= 1");
}

namespace {

// Up to k indices per class, evenly spaced over that class's entities.
std::vector<std::size_t> pick_entities(std::span<const std::string> labels,
                                       std::span<const std::string> classes, std::size_t k) {
  std::vector<std::size_t> out;
  for (const auto& cls : classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) members.push_back(i);
    }
    const std::size_t take = std::min(k, members.size());
    for (std::size_t t = 0; t < take; ++t) out.push_back(members[t * members.size() / take]);
  }
  return out;
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

ExplainRun explain_snapshot(const GraphSnapshot& train, const GraphSnapshot& target,
                            const Checkpoint& checkpoint, const PortVocabulary& vocab,
                            const ExplainConfig& config) {
  config.validate();
  const auto& classes = checkpoint.config.classes;
  if (classes.empty()) fail(Errc::ConfigMismatch, "checkpoint carries no class list");
  const FrozenGraph frozen(target, checkpoint);
  const GraphTensors train_g = prepare(train, checkpoint.params);

  Rng bg_rng(mix_seed(config.seed, 0));
  const Matrix edge_bg = sample_background(train_g.e, config.background, bg_rng);
  const Matrix node_bg = sample_background(train_g.x, config.background, bg_rng);
  const auto edge_groups = edge_feature_groups(vocab, config.grouping);
  const auto node_groups = node_feature_groups();

  ExplainRun run;
  const std::vector<std::string> node_cls = node_labels(target);
  const auto edge_ids = pick_entities(target.edge_labels, classes, config.per_class);
  const auto node_ids = pick_entities(node_cls, classes, config.per_class);
  run.edges.resize(edge_ids.size());
  run.edge_additivity.resize(edge_ids.size());
  run.nodes.resize(node_ids.size());
  run.node_additivity.resize(node_ids.size());
  for (std::size_t k : edge_ids) run.edge_classes.push_back(target.edge_labels[k]);
  for (std::size_t v : node_ids) run.node_classes.push_back(node_cls[v]);

  const std::size_t total = edge_ids.size() + node_ids.size();
  parallel_for(total, config.threads, [&](std::size_t t) {
    const bool is_edge = t < edge_ids.size();
    const std::size_t slot = is_edge ? t : t - edge_ids.size();
    const std::size_t entity = is_edge ? edge_ids[slot] : node_ids[slot];
    Rng rng(mix_seed(mix_seed(config.seed, is_edge ? 1 : 2), entity));
    const BatchFn f = is_edge ? frozen.edge_function(entity) : frozen.node_function(entity);
    const Matrix& inputs = is_edge ? frozen.tensors().e : frozen.tensors().x;
    const auto x = inputs.row(entity);
    AttributionResult r = mc_shap(f, x, is_edge ? edge_bg : node_bg,
                                  is_edge ? std::span<const FeatureGroup>(edge_groups)
                                          : std::span<const FeatureGroup>(node_groups),
                                  config.mc_samples, rng);
    r.entity_type = is_edge ? "edge" : "node";
    r.entity_id = is_edge ? std::to_string(entity) : target.node_ids[entity];
    Additivity a = additivity_check(r, f, x);
    if (is_edge) {
      run.edges[slot] = std::move(r);
      run.edge_additivity[slot] = std::move(a);
    } else {
      run.nodes[slot] = std::move(r);
      run.node_additivity[slot] = std::move(a);
    }
  });
  return run;
}

std::string attributions_csv(std::span<const AttributionResult> results) {
  std::ostringstream out;
  out << "entity_id,entity_type,axis,feature_name,phi,stderr\n";
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.dims(); ++i) {
      for (std::size_t j = 0; j < r.features.size(); ++j) {
        out << r.entity_id << ',' << r.entity_type << ',' << i + 1 << ',' << r.features[j] << ','
            << format_double(r.phi(i, j)) << ',' << format_double(r.std_error(i, j)) << '\n';
      }
    }
  }
  return out.str();
}

std::string base_values_csv(const ExplainRun& run) {
  std::ostringstream out;
  out << "entity_id,entity_type,class,axis,phi0,fx,residual,residual_stderr\n";
  auto emit = [&](const std::vector<AttributionResult>& rs, const std::vector<std::string>& cls,
                  const std::vector<Additivity>& add) {
    for (std::size_t k = 0; k < rs.size(); ++k) {
      for (std::size_t i = 0; i < rs[k].dims(); ++i) {
        out << rs[k].entity_id << ',' << rs[k].entity_type << ',' << cls[k] << ',' << i + 1 << ','
            << format_double(rs[k].phi0[i]) << ',' << format_double(rs[k].fx[i]) << ','
            << format_double(add[k].residual[i]) << ',' << format_double(add[k].std_error[i])
            << '\n';
      }
    }
  };
  emit(run.edges, run.edge_classes, run.edge_additivity);
  emit(run.nodes, run.node_classes, run.node_additivity);
  return out.str();
}

std::string drivers_csv(std::span<const DriverRow> rows) {
  std::ostringstream out;
  out << "class,axis,rank,feature,value,direction\n";
  for (const auto& r : rows) {
    out << r.cls << ',' << r.axis + 1 << ',' << r.rank << ',' << r.feature << ','
        << format_double(r.value) << ',' << r.glyph << '\n';
  }
  return out.str();
}

}  // namespace flowscope
