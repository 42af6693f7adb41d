#include <doctest.h>

#include <filesystem>

#include "flowscope/error.hpp"
#include "flowscope/io.hpp"
#include "flowscope/pipeline.hpp"
#include "flowscope/plot.hpp"
#include "support.hpp"

using namespace flowscope;

namespace {

std::vector<EmbeddingRow> grid_rows(Rng& rng) {
  std::vector<EmbeddingRow> rows;
  const char* classes[] = {"benign", "dos", "recon"};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 40; ++i) {
      const double x = 4.0 * c + rng.normal(), y = rng.normal();
      const std::string pred = i % 10 == 0 ? classes[(c + 1) % 3] : classes[c];
      rows.push_back({"edge", std::to_string(rows.size()), x, y, classes[c], pred, "test_a"});
    }
  return rows;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("embedding rows and csv round trip") {
  const auto g = fst::random_snapshot(6, 25, 2);
  ModelConfig model;
  model.classes = {"benign", "dos"};
  const auto emb = embed(g, fst::fresh_model(g, model, 1));
  const auto rows = embedding_rows(g, emb, "test_b");
  REQUIRE(rows.size() == g.num_nodes() + g.num_edges());
  CHECK(rows.front().entity_type == "node");
  CHECK(rows.front().id == g.node_ids[0]);
  CHECK(rows.back().id == std::to_string(g.num_edges() - 1));
  CHECK(rows.back().true_label == g.edge_labels.back());

  const auto path = std::filesystem::temp_directory_path() / "flowscope_test_embedding.csv";
  const std::string text = embedding_csv(rows);
  CHECK(text.rfind(std::string(kEmbeddingCsvHeader) + "\n", 0) == 0);
  io::write_text(path, text);
  CHECK(read_embedding_csv(path) == rows);
  std::filesystem::remove(path);

  const auto edges = entity_view(rows, "edge");
  CHECK(edges.coords.rows() == g.num_edges());
  CHECK(edges.preds == emb.edge_pred);
}

TEST_CASE("entity view skips unlabeled rows") {
  const std::vector<EmbeddingRow> rows = {{"node", "a", 1, 2, "", "", "train"},
                                          {"node", "b", 3, 4, "dos", "", "train"},
                                          {"edge", "0", 5, 6, "dos", "dos", "train"}};
  const auto v = entity_view(rows, "node");
  CHECK(v.coords == diff::Matrix::from_rows({{3, 4}}));
  CHECK(v.labels == std::vector<std::string>{"dos"});
}

TEST_CASE("evaluate fills validity, f1 and drift") {
  Rng rng(3);
  const std::vector<std::string> classes = {"benign", "dos", "recon"};
  std::vector<PartitionEmbeddings> parts;
  for (const char* name : {"test_a", "test_b", "test_c"}) {
    PartitionEmbeddings p{name, grid_rows(rng), grid_rows(rng)};
    for (auto& r : p.model) r.partition = name;
    parts.push_back(std::move(p));
  }
  const auto report = evaluate(parts, classes);
  REQUIRE(report.partitions.size() == 3);
  const auto& a = report.partitions[0];
  CHECK(a.edges == 120);
  CHECK(a.nodes == 0);
  CHECK(std::isnan(a.node_model.dbi));
  CHECK(a.edge_model.silhouette > 0.3);
  REQUIRE(a.f1.has_value());
  CHECK(a.f1->per_class.at("dos") == doctest::Approx(0.9));
  CHECK(a.edge_baseline.has_value());
  REQUIRE(report.drift.has_value());
  CHECK(report.drift->rows.size() == 9);
  CHECK(report.to_json().contains("partitions"));
  CHECK(report.to_csv().rfind("table,partition,entity,embedding,metric,class,value\n", 0) == 0);

  // Without predictions there is no F1 and no drift table.
  for (auto& p : parts)
    for (auto& r : p.model) r.pred_label.clear();
  const auto bare = evaluate(parts, classes);
  CHECK_FALSE(bare.partitions[0].f1.has_value());
  CHECK_FALSE(bare.drift.has_value());
}

TEST_CASE("contour of a single cell") {
  std::vector<EmbeddingRow> rows(5, EmbeddingRow{"edge", "0", 0.55, 0.55, "dos", "", ""});
  rows.push_back({"edge", "1", 0.05, 0.05, "benign", "", ""});
  const Extent ext{0, 1, 0, 1};
  const auto c = mass_contour(rows, "dos", ext, 10, 0.9, 0);
  CHECK(c.points == 5);
  CHECK(c.threshold == 5.0);
  CHECK(c.enclosed == 1.0);
  CHECK(c.segments.size() == 4);
  CHECK(mass_contour(rows, "recon", ext, 10, 0.9).segments.empty());
  CHECK_THROWS_AS(mass_contour(rows, "dos", ext, 10, 0.0), Error);
  CHECK_THROWS_AS(mass_contour(rows, "dos", ext, 0, 0.5), Error);
}

TEST_CASE("contours enclose at least the requested mass") {
  Rng rng(4);
  const auto rows = grid_rows(rng);
  const Extent ext = plot_extent(rows);
  CHECK(ext.x0 < ext.x1);
  for (const double mass : {0.5, 0.9, 1.0}) {
    const auto c = mass_contour(rows, "dos", ext, 32, mass, 0);
    CHECK(c.enclosed >= mass - 1e-12);
    CHECK_FALSE(c.segments.empty());
  }
  const auto smooth = mass_contour(rows, "dos", ext, 32, 0.9, 3);
  CHECK(smooth.enclosed > 0.5);
}

TEST_CASE("svg and contour csv") {
  Rng rng(5);
  PlotSpec spec;
  spec.title = "edges";
  spec.points = grid_rows(rng);
  spec.classes = {"benign", "dos", "recon"};
  spec.grid = 48;
  const Plot plot = render_plot(spec);
  CHECK(plot.contours.size() == 3);
  CHECK(plot.svg.rfind("<svg", 0) == 0);
  CHECK(plot.svg.find("recon") != std::string::npos);
  CHECK(plot.svg.find("</svg>") != std::string::npos);
  const std::string csv = contours_csv(plot.contours);
  CHECK(csv.rfind("class,points,threshold,enclosed,x1,y1,x2,y2\n", 0) == 0);
  CHECK(render_plot(spec).svg == plot.svg);
}

}  // TEST_SUITE
