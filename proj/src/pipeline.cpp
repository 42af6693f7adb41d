#include "flowscope/pipeline.hpp"

#include <algorithm>
#include <sstream>

#include "flowscope/error.hpp"
#include "flowscope/io.hpp"

namespace flowscope {

std::vector<EmbeddingRow> embedding_rows(const GraphSnapshot& snapshot, const Embedding& emb,
                                         std::string_view partition) {
  if (emb.u.rows() != snapshot.num_nodes() || emb.w.rows() != snapshot.num_edges()) {
    fail(Errc::ShapeMismatch, "embedding does not match the snapshot");
  }
  const std::vector<std::string> node_truth = node_labels(snapshot);
  std::vector<EmbeddingRow> rows;
  rows.reserve(snapshot.num_nodes() + snapshot.num_edges());
  const std::string part(partition);
  for (std::size_t v = 0; v < snapshot.num_nodes(); ++v) {
    rows.push_back({"node", snapshot.node_ids[v], emb.u(v, 0), emb.u(v, 1), node_truth[v],
                    emb.node_pred.empty() ? "" : emb.node_pred[v], part});
  }
  for (std::size_t k = 0; k < snapshot.num_edges(); ++k) {
    rows.push_back({"edge", std::to_string(k), emb.w(k, 0), emb.w(k, 1), snapshot.edge_labels[k],
                    emb.edge_pred.empty() ? "" : emb.edge_pred[k], part});
  }
  return rows;
}

std::string embedding_csv(std::span<const EmbeddingRow> rows) {
  std::ostringstream os;
  os << kEmbeddingCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.entity_type << ',' << r.id << ',' << io::format_double(r.dim1) << ','
       << io::format_double(r.dim2) << ',' << r.true_label << ',' << r.pred_label << ','
       << r.partition << '\n';
  }
  return os.str();
}

std::vector<EmbeddingRow> read_embedding_csv(const std::filesystem::path& path) {
  const io::CsvTable t = io::CsvTable::read_file(path);
  const std::size_t c_type = t.column("entity_type"), c_id = t.column("id"),
                    c_x = t.column("dim1"), c_y = t.column("dim2"),
                    c_true = t.column("true_label"), c_pred = t.column("pred_label"),
                    c_part = t.column("partition");
  std::vector<EmbeddingRow> rows;
  rows.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    EmbeddingRow row{t.at(r, c_type), t.at(r, c_id),           io::parse_double(t.at(r, c_x)),
                     io::parse_double(t.at(r, c_y)), t.at(r, c_true), t.at(r, c_pred),
                     t.at(r, c_part)};
    if (row.entity_type != "node" && row.entity_type != "edge") {
      fail(Errc::ParseError, path.string() + ": unknown entity_type '" + row.entity_type + "'");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

EntityView entity_view(std::span<const EmbeddingRow> rows, std::string_view entity_type) {
  EntityView v;
  std::vector<double> data;
  for (const auto& r : rows) {
    if (r.entity_type != entity_type || r.true_label.empty()) continue;
    data.push_back(r.dim1);
    data.push_back(r.dim2);
    v.labels.push_back(r.true_label);
    v.preds.push_back(r.pred_label);
  }
  v.coords = diff::Matrix(v.labels.size(), 2, std::move(data));
  return v;
}

namespace {

bool has_predictions(const EntityView& v) {
  return !v.preds.empty() &&
         std::none_of(v.preds.begin(), v.preds.end(), [](const std::string& p) { return p.empty(); });
}

std::size_t count_type(std::span<const EmbeddingRow> rows, std::string_view type) {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [&](const EmbeddingRow& r) { return r.entity_type == type; }));
}

}  // namespace

EvalReport evaluate(std::span<const PartitionEmbeddings> partitions,
                    std::span<const std::string> classes) {
  EvalReport report;
  std::vector<PartitionEmbedding> drift_inputs;
  bool drift_possible = true;
  for (const auto& p : partitions) {
    PartitionReport pr;
    pr.name = p.name;
    pr.nodes = count_type(p.model, "node");
    pr.edges = count_type(p.model, "edge");
    const EntityView nodes = entity_view(p.model, "node");
    const EntityView edges = entity_view(p.model, "edge");
    pr.node_model = validity(nodes.coords, nodes.labels);
    pr.edge_model = validity(edges.coords, edges.labels);
    if (p.baseline) {
      const EntityView bn = entity_view(*p.baseline, "node");
      const EntityView be = entity_view(*p.baseline, "edge");
      pr.node_baseline = validity(bn.coords, bn.labels);
      pr.edge_baseline = validity(be.coords, be.labels);
    }
    if (has_predictions(edges)) {
      pr.f1 = f1_suite(edges.labels, edges.preds, classes);
      drift_inputs.push_back({p.name, edges.coords, edges.labels, *pr.f1});
    } else {
      drift_possible = false;
    }
    report.partitions.push_back(std::move(pr));
  }
  auto present = [&](std::string_view name) {
    return std::any_of(drift_inputs.begin(), drift_inputs.end(),
                       [&](const PartitionEmbedding& p) { return p.name == name; });
  };
  if (drift_possible && present("test_a") && present("test_b") && present("test_c")) {
    report.drift = drift_report(drift_inputs, classes);
  }
  return report;
}

}  // namespace flowscope
