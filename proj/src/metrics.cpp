#include "flowscope/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "flowscope/error.hpp"
#include "flowscope/io.hpp"

namespace flowscope {

using diff::Matrix;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Clusters {
  std::vector<std::string> names;
  std::vector<std::size_t> of;  // cluster index per point
  std::vector<std::size_t> size;
};

Clusters group(const Matrix& points, std::span<const std::string> labels) {
  if (points.rows() != labels.size()) {
    fail(Errc::LengthMismatch, "one label per point required");
  }
  Clusters c;
  std::set<std::string> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) fail(Errc::SingleCluster, "need at least two labeled groups");
  c.names.assign(distinct.begin(), distinct.end());
  c.size.assign(c.names.size(), 0);
  for (const auto& l : labels) {
    const auto k = static_cast<std::size_t>(
        std::lower_bound(c.names.begin(), c.names.end(), l) - c.names.begin());
    c.of.push_back(k);
    ++c.size[k];
  }
  return c;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Matrix centroids(const Matrix& points, const Clusters& c) {
  Matrix out(c.names.size(), points.cols());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    auto row = out.row(c.of[i]);
    const auto p = points.row(i);
    for (std::size_t d = 0; d < p.size(); ++d) row[d] += p[d];
  }
  for (std::size_t k = 0; k < c.names.size(); ++k) {
    for (double& v : out.row(k)) v /= static_cast<double>(c.size[k]);
  }
  return out;
}

}  // namespace

double davies_bouldin(const Matrix& points, std::span<const std::string> labels) {
  const Clusters c = group(points, labels);
  const Matrix cent = centroids(points, c);
  const std::size_t k = c.names.size();
  std::vector<double> sigma(k, 0.0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    sigma[c.of[i]] += distance(points.row(i), cent.row(c.of[i]));
  }
  for (std::size_t a = 0; a < k; ++a) sigma[a] /= static_cast<double>(c.size[a]);
  double total = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    double worst = 0.0;
    for (std::size_t b = 0; b < k; ++b) {
      if (a == b) continue;
      const double d = distance(cent.row(a), cent.row(b));
      if (d == 0.0) return kInf;
      worst = std::max(worst, (sigma[a] + sigma[b]) / d);
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

double silhouette(const Matrix& points, std::span<const std::string> labels) {
  const Clusters c = group(points, labels);
  const std::size_t n = points.rows(), k = c.names.size();
  double total = 0.0;
  std::vector<double> sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (c.size[c.of[i]] == 1) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[c.of[j]] += distance(points.row(i), points.row(j));
    }
    const double a = sums[c.of[i]] / static_cast<double>(c.size[c.of[i]] - 1);
    double b = kInf;
    for (std::size_t q = 0; q < k; ++q) {
      if (q != c.of[i]) b = std::min(b, sums[q] / static_cast<double>(c.size[q]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

F1Scores f1_suite(std::span<const std::string> y_true, std::span<const std::string> y_pred,
                  std::span<const std::string> classes) {
  if (y_true.size() != y_pred.size()) {
    fail(Errc::LengthMismatch, "y_true and y_pred differ in length");
  }
  auto f1 = [](std::size_t tp, std::size_t fp, std::size_t fn) {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  };
  F1Scores s;
  {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      const bool t = y_true[i] != "benign", p = y_pred[i] != "benign";
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
    }
    s.binary = f1(tp, fp, fn);
  }
  std::vector<std::string> all(classes.begin(), classes.end());
  for (const auto& l : y_true) {
    if (std::find(all.begin(), all.end(), l) == all.end()) all.push_back(l);
  }
  double macro_sum = 0.0, weighted_sum = 0.0;
  std::size_t present = 0, support_total = 0;
  for (const auto& cls : all) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      const bool t = y_true[i] == cls, p = y_pred[i] == cls;
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
    }
    const std::size_t support = tp + fn;
    const double score = support == 0 ? 0.0 : f1(tp, fp, fn);
    s.per_class[cls] = score;
    s.support[cls] = support;
    if (support > 0) {
      macro_sum += score;
      weighted_sum += score * static_cast<double>(support);
      ++present;
      support_total += support;
    }
  }
  s.macro = present ? macro_sum / static_cast<double>(present) : 0.0;
  s.weighted = support_total ? weighted_sum / static_cast<double>(support_total) : 0.0;
  return s;
}

// ---- drift ----------------------------------------------------------------------

const DriftRow& DriftReport::row(std::string_view cls, std::string_view partition) const {
  for (const auto& r : rows) {
    if (r.cls == cls && r.partition == partition) return r;
  }
  fail(Errc::MissingPartition,
       "no drift row for " + std::string(cls) + " in " + std::string(partition));
}

double DriftReport::distance(std::string_view partition, std::string_view a,
                             std::string_view b) const {
  auto idx = [](const std::vector<std::string>& v, std::string_view x) {
    const auto it = std::find(v.begin(), v.end(), x);
    if (it == v.end()) fail(Errc::MissingPartition, "unknown name " + std::string(x));
    return static_cast<std::size_t>(it - v.begin());
  };
  return centroid_distances[idx(partitions, partition)](idx(classes, a), idx(classes, b));
}

DriftReport drift_report(std::span<const PartitionEmbedding> parts,
                         std::span<const std::string> classes) {
  DriftReport r;
  r.partitions = {"test_a", "test_b", "test_c"};
  r.classes.assign(classes.begin(), classes.end());
  std::vector<const PartitionEmbedding*> ordered;
  for (const auto& name : r.partitions) {
    const auto it = std::find_if(parts.begin(), parts.end(),
                                 [&](const PartitionEmbedding& p) { return p.name == name; });
    if (it == parts.end()) fail(Errc::MissingPartition, "drift report needs partition " + name);
    if (it->coords.rows() != it->labels.size()) {
      fail(Errc::LengthMismatch, "partition " + name + ": one label per embedded row required");
    }
    ordered.push_back(&*it);
  }

  const std::size_t k = r.classes.size();
  std::vector<std::optional<std::array<double, 2>>> previous(k);
  for (const auto* p : ordered) {
    std::vector<std::optional<std::array<double, 2>>> current(k);
    for (std::size_t c = 0; c < k; ++c) {
      DriftRow row;
      row.cls = r.classes[c];
      row.partition = p->name;
      std::array<double, 2> sum{0.0, 0.0};
      for (std::size_t i = 0; i < p->labels.size(); ++i) {
        if (p->labels[i] != row.cls) continue;
        ++row.count;
        sum[0] += p->coords(i, 0);
        sum[1] += p->coords(i, 1);
      }
      const auto it = p->f1.per_class.find(row.cls);
      row.f1 = it == p->f1.per_class.end() ? 0.0 : it->second;
      if (row.count > 0) {
        const double n = static_cast<double>(row.count);
        row.centroid = std::array<double, 2>{sum[0] / n, sum[1] / n};
        current[c] = row.centroid;
        if (previous[c]) {
          row.displacement = std::hypot((*row.centroid)[0] - (*previous[c])[0],
                                        (*row.centroid)[1] - (*previous[c])[1]);
        }
      }
      r.rows.push_back(row);
    }
    Matrix dist(k, k, kNaN);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        if (current[a] && current[b]) {
          dist(a, b) = std::hypot((*current[a])[0] - (*current[b])[0],
                                  (*current[a])[1] - (*current[b])[1]);
        }
      }
    }
    r.centroid_distances.push_back(std::move(dist));
    previous = current;
  }
  return r;
}

// ---- report ---------------------------------------------------------------------------

Validity validity(const Matrix& points, std::span<const std::string> labels) {
  std::set<std::string> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) return {kNaN, kNaN};
  return {davies_bouldin(points, labels), silhouette(points, labels)};
}

namespace {

nlohmann::ordered_json number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

nlohmann::ordered_json validity_json(const Validity& v) {
  return {{"dbi", number(v.dbi)}, {"silhouette", number(v.silhouette)}};
}

nlohmann::ordered_json f1_json(const F1Scores& f) {
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [cls, v] : f.per_class) per[cls] = {{"f1", v}, {"support", f.support.at(cls)}};
  return {{"binary", f.binary}, {"macro", f.macro}, {"weighted", f.weighted}, {"per_class", per}};
}

/// mean and population std over the finite entries.
std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : xs) {
    if (std::isfinite(x)) {
      s += x;
      ++n;
    }
  }
  if (n == 0) return {kNaN, kNaN};
  const double mean = s / static_cast<double>(n);
  double v = 0.0;
  for (double x : xs) {
    if (std::isfinite(x)) v += (x - mean) * (x - mean);
  }
  return {mean, std::sqrt(v / static_cast<double>(n))};
}

bool is_test(const std::string& name) { return name != "train"; }

}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json parts = nlohmann::ordered_json::array();
  for (const auto& p : partitions) {
    nlohmann::ordered_json j = {{"name", p.name}, {"nodes", p.nodes}, {"edges", p.edges}};
    nlohmann::ordered_json validity_j = {{"node", {{"model", validity_json(p.node_model)}}},
                                         {"edge", {{"model", validity_json(p.edge_model)}}}};
    if (p.node_baseline) validity_j["node"]["baseline"] = validity_json(*p.node_baseline);
    if (p.edge_baseline) validity_j["edge"]["baseline"] = validity_json(*p.edge_baseline);
    j["validity"] = validity_j;
    if (p.f1) j["f1"] = f1_json(*p.f1);
    parts.push_back(j);
  }

  // Mean and std across the test partitions.
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
  auto summarize = [&](const char* key, auto get) {
    std::vector<double> xs;
    for (const auto& p : partitions) {
      if (!is_test(p.name)) continue;
      const std::optional<double> v = get(p);
      if (!v) return;
      xs.push_back(*v);
    }
    if (xs.empty()) return;
    const auto [m, s] = mean_std(xs);
    summary[key] = {{"mean", number(m)}, {"std", number(s)}};
  };
  summarize("node_model_dbi", [](const PartitionReport& p) { return std::optional(p.node_model.dbi); });
  summarize("node_model_silhouette",
            [](const PartitionReport& p) { return std::optional(p.node_model.silhouette); });
  summarize("edge_model_dbi", [](const PartitionReport& p) { return std::optional(p.edge_model.dbi); });
  summarize("edge_model_silhouette",
            [](const PartitionReport& p) { return std::optional(p.edge_model.silhouette); });
  summarize("node_baseline_dbi", [](const PartitionReport& p) {
    return p.node_baseline ? std::optional(p.node_baseline->dbi) : std::nullopt;
  });
  summarize("node_baseline_silhouette", [](const PartitionReport& p) {
    return p.node_baseline ? std::optional(p.node_baseline->silhouette) : std::nullopt;
  });
  summarize("edge_baseline_dbi", [](const PartitionReport& p) {
    return p.edge_baseline ? std::optional(p.edge_baseline->dbi) : std::nullopt;
  });
  summarize("edge_baseline_silhouette", [](const PartitionReport& p) {
    return p.edge_baseline ? std::optional(p.edge_baseline->silhouette) : std::nullopt;
  });
  summarize("binary_f1",
            [](const PartitionReport& p) { return p.f1 ? std::optional(p.f1->binary) : std::nullopt; });
  summarize("macro_f1",
            [](const PartitionReport& p) { return p.f1 ? std::optional(p.f1->macro) : std::nullopt; });
  summarize("weighted_f1", [](const PartitionReport& p) {
    return p.f1 ? std::optional(p.f1->weighted) : std::nullopt;
  });

  nlohmann::ordered_json doc = {{"partitions", parts}, {"summary", summary}};
  if (drift) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : drift->rows) {
      rows.push_back({{"class", r.cls},
                      {"partition", r.partition},
                      {"count", r.count},
                      {"f1", r.f1},
                      {"centroid", r.centroid ? nlohmann::ordered_json{(*r.centroid)[0],
                                                                       (*r.centroid)[1]}
                                              : nlohmann::ordered_json(nullptr)},
                      {"displacement", r.displacement ? number(*r.displacement)
                                                      : nlohmann::ordered_json(nullptr)}});
    }
    nlohmann::ordered_json dists = nlohmann::ordered_json::object();
    for (std::size_t p = 0; p < drift->partitions.size(); ++p) {
      nlohmann::ordered_json m = nlohmann::ordered_json::array();
      const Matrix& d = drift->centroid_distances[p];
      for (std::size_t a = 0; a < d.rows(); ++a) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (std::size_t b = 0; b < d.cols(); ++b) row.push_back(number(d(a, b)));
        m.push_back(row);
      }
      dists[drift->partitions[p]] = m;
    }
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    for (const auto& cls : drift->classes) {
      nlohmann::ordered_json row = {{"class", cls}};
      for (const auto& part : drift->partitions) row[part] = drift->row(cls, part).f1;
      table.push_back(row);
    }
    doc["drift"] = {{"partitions", drift->partitions},
                    {"classes", drift->classes},
                    {"f1_table", table},
                    {"rows", rows},
                    {"centroid_distances", dists}};
  }
  return doc;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "table,partition,entity,embedding,metric,class,value\n";
  auto cell = [](double v) {
    if (std::isnan(v)) return std::string();
    return io::format_double(v);
  };
  auto emit = [&](std::string_view table, std::string_view part, std::string_view entity,
                  std::string_view embedding, std::string_view metric, std::string_view cls,
                  double v) {
    os << table << ',' << part << ',' << entity << ',' << embedding << ',' << metric << ','
       << cls << ',' << cell(v) << '\n';
  };
  for (const auto& p : partitions) {
    emit("validity", p.name, "node", "model", "dbi", "", p.node_model.dbi);
    emit("validity", p.name, "node", "model", "silhouette", "", p.node_model.silhouette);
    emit("validity", p.name, "edge", "model", "dbi", "", p.edge_model.dbi);
    emit("validity", p.name, "edge", "model", "silhouette", "", p.edge_model.silhouette);
    if (p.node_baseline) {
      emit("validity", p.name, "node", "baseline", "dbi", "", p.node_baseline->dbi);
      emit("validity", p.name, "node", "baseline", "silhouette", "", p.node_baseline->silhouette);
    }
    if (p.edge_baseline) {
      emit("validity", p.name, "edge", "baseline", "dbi", "", p.edge_baseline->dbi);
      emit("validity", p.name, "edge", "baseline", "silhouette", "", p.edge_baseline->silhouette);
    }
  }
  for (const auto& p : partitions) {
    if (!p.f1) continue;
    emit("classification", p.name, "edge", "model", "binary_f1", "", p.f1->binary);
    emit("classification", p.name, "edge", "model", "macro_f1", "", p.f1->macro);
    emit("classification", p.name, "edge", "model", "weighted_f1", "", p.f1->weighted);
    for (const auto& [cls, v] : p.f1->per_class) {
      emit("classification", p.name, "edge", "model", "f1", cls, v);
    }
  }
  if (drift) {
    for (const auto& r : drift->rows) {
      emit("drift", r.partition, "edge", "model", "f1", r.cls, r.f1);
      emit("drift", r.partition, "edge", "model", "centroid_x", r.cls,
           r.centroid ? (*r.centroid)[0] : kNaN);
      emit("drift", r.partition, "edge", "model", "centroid_y", r.cls,
           r.centroid ? (*r.centroid)[1] : kNaN);
      emit("drift", r.partition, "edge", "model", "displacement", r.cls,
           r.displacement ? *r.displacement : kNaN);
    }
  }
  return os.str();
}

std::string drift_table_csv(const DriftReport& drift) {
  std::ostringstream os;
  os << "class";
  for (const auto& part : drift.partitions) os << ',' << part;
  os << '\n';
  for (const auto& cls : drift.classes) {
    os << cls;
    for (const auto& part : drift.partitions) os << ',' << io::format_double(drift.row(cls, part).f1);
    os << '\n';
  }
  return os.str();
}

}  // namespace flowscope
