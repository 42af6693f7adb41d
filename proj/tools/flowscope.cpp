// flowscope command-line pipeline: synth -> ingest -> split -> train -> embed
// -> explain / eval -> export-plot. Every stage reads the previous stage's files
// under --out and writes its own.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "flowscope/config.hpp"
#include "flowscope/error.hpp"
#include "flowscope/explain.hpp"
#include "flowscope/graphbuild.hpp"
#include "flowscope/ingest.hpp"
#include "flowscope/io.hpp"
#include "flowscope/pipeline.hpp"
#include "flowscope/plot.hpp"
#include "flowscope/synthgen.hpp"
#include "flowscope/train.hpp"

namespace fs = std::filesystem;
using namespace flowscope;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string input;
  bool sort = false;
  bool baseline = false;
  std::string partition;
};

struct Context {
  PipelineConfig cfg;
  fs::path out;
};

Context make_context(const Options& o) {
  Context ctx;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) fail(Errc::InvalidConfig, "config file not found: " + o.config);
    ctx.cfg = PipelineConfig::load(o.config);
  }
  if (o.seed) ctx.cfg.seed = *o.seed;
  ctx.out = o.out;
  return ctx;
}

fs::path require(const fs::path& p, std::string_view produced_by) {
  if (!fs::exists(p)) {
    fail(Errc::Io, "missing " + p.string() + " (run '" + std::string(produced_by) + "' first)");
  }
  return p;
}

template <typename Writer>
void write_stream(const fs::path& path, Writer w) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::Io, "cannot write " + path.string());
  w(f);
  if (!f) fail(Errc::Io, "write failed: " + path.string());
}

void write_file(const fs::path& path, std::string_view text) {
  write_stream(path, [&](std::ostream& os) { os << text; });
}

fs::path snapshot_dir(const Context& c, std::string_view part) {
  return c.out / "snapshots" / std::string(part);
}

GraphSnapshot load_snapshot(const Context& c, std::string_view part) {
  return import_snapshot(require(snapshot_dir(c, part), "split"));
}

// ---- commands -------------------------------------------------------------------

void cmd_synth(const Context& c) {
  const LabeledStream stream = generate(c.cfg.scenario());
  write_stream(c.out / "packets.csv",
               [&](std::ostream& os) { write_packets_csv(os, stream.packets); });
  std::cout << "synth: " << stream.packets.size() << " packets, " << stream.flows.size()
            << " flows -> " << (c.out / "packets.csv").string() << '\n';
}

void cmd_ingest(const Context& c, const Options& o) {
  fs::path input = !o.input.empty()            ? fs::path(o.input)
                   : !c.cfg.ingest.input.empty() ? fs::path(c.cfg.ingest.input)
                                                 : c.out / "packets.csv";
  if (!fs::exists(input)) fail(Errc::Io, "input not found: " + input.string());
  std::vector<PacketEvent> packets = read_packets(input);
  if (o.sort || c.cfg.ingest.sort) sort_packets(packets);
  const std::vector<FlowRecord> flows = segment_flows(packets, c.cfg.ingest.options);
  write_stream(c.out / "flows.csv", [&](std::ostream& os) { write_flows_csv(os, flows); });
  std::cout << "ingest: " << packets.size() << " packets -> " << flows.size() << " flows\n";
}

void cmd_split(const Context& c) {
  std::ifstream in(require(c.out / "flows.csv", "ingest"));
  const std::vector<FlowRecord> flows = read_flows_csv(in);
  const TemporalSplit split = temporal_split(flows);
  const PortVocabulary vocab = c.cfg.vocabulary();
  for (std::size_t p = 0; p < kPartitionNames.size(); ++p) {
    std::vector<FlowRecord> part;
    part.reserve(split.parts[p].size());
    for (std::size_t i : split.parts[p]) part.push_back(flows[i]);
    const GraphSnapshot snap = build_snapshot(part, vocab);
    export_snapshot(snap, vocab, snapshot_dir(c, kPartitionNames[p]));
    std::cout << "split: " << kPartitionNames[p] << " " << snap.num_nodes() << " nodes, "
              << snap.num_edges() << " edges\n";
  }
}

ModelConfig baseline_config(ModelConfig m) {
  m.gin_layers = 0;
  m.fuse_node_context = false;
  return m;
}

void cmd_train(const Context& c, const Options& o) {
  const GraphSnapshot train_snap = load_snapshot(c, "train");
  const ModelConfig model = o.baseline ? baseline_config(c.cfg.model) : c.cfg.model;
  const TrainResult r = train(train_snap, model, c.cfg.train_config());
  const std::string stem = o.baseline ? "baseline" : "model";
  save_checkpoint(r.checkpoint, c.out / (stem + ".json"));
  write_history_csv(r.history, c.out / (o.baseline ? "baseline_history.csv" : "history.csv"));
  const EpochRecord& last = r.history.back();
  std::cout << "train: " << stem << " epochs=" << last.epoch << " l_total=" << last.total
            << " -> " << (c.out / (stem + ".json")).string() << '\n';
}

void cmd_embed(const Context& c) {
  const Checkpoint model = load_checkpoint(require(c.out / "model.json", "train"));
  std::optional<Checkpoint> base;
  if (fs::exists(c.out / "baseline.json")) base = load_checkpoint(c.out / "baseline.json");
  for (std::string_view part : kPartitionNames) {
    const GraphSnapshot snap = load_snapshot(c, part);
    const std::string file = std::string(part) + ".csv";
    write_file(c.out / "embeddings" / file,
               embedding_csv(embedding_rows(snap, embed(snap, model), part)));
    if (base) {
      write_file(c.out / "embeddings" / "baseline" / file,
                 embedding_csv(embedding_rows(snap, embed(snap, *base), part)));
    }
  }
  std::cout << "embed: " << kPartitionNames.size() << " partitions"
            << (base ? " (model + baseline)" : "") << '\n';
}

void cmd_explain(const Context& c, const Options& o) {
  const std::string part = o.partition.empty() ? c.cfg.explain_partition : o.partition;
  if (std::find(kPartitionNames.begin(), kPartitionNames.end(), part) == kPartitionNames.end()) {
    fail(Errc::InvalidArgument, "unknown partition '" + part + "'");
  }
  const Checkpoint model = load_checkpoint(require(c.out / "model.json", "train"));
  const GraphSnapshot train_snap = load_snapshot(c, "train");
  const GraphSnapshot target = load_snapshot(c, part);
  const PortVocabulary vocab = c.cfg.vocabulary();
  const ExplainConfig ec = c.cfg.explain_config();
  const ExplainRun run = explain_snapshot(train_snap, target, model, vocab, ec);

  const fs::path dir = c.out / "explain";
  std::vector<AttributionResult> all = run.edges;
  all.insert(all.end(), run.nodes.begin(), run.nodes.end());
  write_file(dir / "attributions.csv", attributions_csv(all));
  write_file(dir / "base_values.csv", base_values_csv(run));
  auto drivers = [&](const std::vector<AttributionResult>& rs, const std::vector<std::string>& cls) {
    std::map<std::string, std::vector<AttributionResult>> by_class;
    for (std::size_t k = 0; k < rs.size(); ++k) by_class[cls[k]].push_back(rs[k]);
    std::vector<DriverRow> rows;
    for (std::size_t axis = 0; axis < 2 && !by_class.empty(); ++axis) {
      const auto r = global_importance(by_class, axis, ec.top_k);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    return drivers_csv(rows);
  };
  write_file(dir / "drivers_edge.csv", drivers(run.edges, run.edge_classes));
  write_file(dir / "drivers_node.csv", drivers(run.nodes, run.node_classes));
  std::cout << "explain: " << part << " " << run.edges.size() << " edges, " << run.nodes.size()
            << " nodes, K_mc=" << ec.mc_samples << '\n';
}

std::vector<std::string> report_classes(const Context& c, const std::vector<PartitionEmbeddings>& ps) {
  std::vector<std::string> classes = c.cfg.model.classes;
  for (const auto& p : ps) {
    for (const auto& r : p.model) {
      if (!r.true_label.empty() &&
          std::find(classes.begin(), classes.end(), r.true_label) == classes.end()) {
        classes.push_back(r.true_label);
      }
    }
  }
  return classes;
}

void cmd_eval(const Context& c) {
  std::vector<PartitionEmbeddings> parts;
  for (const auto& name : c.cfg.eval.partitions) {
    PartitionEmbeddings p;
    p.name = name;
    p.model = read_embedding_csv(require(c.out / "embeddings" / (name + ".csv"), "embed"));
    const fs::path base = c.out / "embeddings" / "baseline" / (name + ".csv");
    if (fs::exists(base)) p.baseline = read_embedding_csv(base);
    parts.push_back(std::move(p));
  }
  const EvalReport report = evaluate(parts, report_classes(c, parts));
  write_file(c.out / "report.json", report.to_json().dump(2) + "\n");
  write_file(c.out / "report.csv", report.to_csv());
  if (report.drift) write_file(c.out / "drift_table.csv", drift_table_csv(*report.drift));
  std::cout << "eval: " << parts.size() << " partitions -> " << (c.out / "report.json").string()
            << '\n';
}

void cmd_export_plot(const Context& c) {
  const auto doc = nlohmann::json::parse(io::read_text(require(c.out / "report.json", "eval")));
  std::map<std::string, nlohmann::json> by_name;
  for (const auto& p : doc.at("partitions")) by_name[p.at("name").get<std::string>()] = p;
  const bool svg = std::count(c.cfg.export_.formats.begin(), c.cfg.export_.formats.end(), "svg") > 0;
  const bool csv = std::count(c.cfg.export_.formats.begin(), c.cfg.export_.formats.end(), "csv") > 0;
  auto metric = [](const nlohmann::json& v) {
    if (v.is_null()) return std::string("n/a");
    if (v.is_string()) return v.get<std::string>();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v.get<double>());
    return std::string(buf);
  };
  std::size_t written = 0;
  for (const auto& name : c.cfg.eval.partitions) {
    const auto rows = read_embedding_csv(require(c.out / "embeddings" / (name + ".csv"), "embed"));
    for (std::string_view entity : {"edge", "node"}) {
      PlotSpec spec;
      for (const auto& r : rows) {
        if (r.entity_type == entity) spec.points.push_back(r);
      }
      spec.classes = report_classes(c, {});
      spec.grid = c.cfg.export_.grid;
      spec.mass = c.cfg.export_.mass;
      spec.smooth = c.cfg.export_.smooth;
      spec.title = name + " " + std::string(entity) + "s";
      if (by_name.count(name)) {
        const auto& v = by_name[name].at("validity").at(std::string(entity)).at("model");
        spec.title += "  DBI " + metric(v.at("dbi")) + "  silhouette " + metric(v.at("silhouette"));
      }
      const Plot plot = render_plot(spec);
      const std::string stem = name + "_" + std::string(entity);
      if (svg) write_file(c.out / "plots" / (stem + ".svg"), plot.svg);
      if (csv) {
        write_file(c.out / "plots" / (stem + ".csv"), embedding_csv(spec.points));
        write_file(c.out / "plots" / (stem + "_contours.csv"), contours_csv(plot.contours));
      }
      ++written;
    }
  }
  std::cout << "export-plot: " << written << " plots -> " << (c.out / "plots").string() << '\n';
}

int exit_code(ErrorClass k) {
  switch (k) {
    case ErrorClass::Config: return 2;
    case ErrorClass::Data: return 3;
    case ErrorClass::Numeric: return 4;
  }
  return 3;
}

int report_error(std::string_view code, std::string_view klass, const std::string& message,
                 int status) {
  nlohmann::ordered_json j = {{"error", code}, {"class", klass}, {"message", message}};
  std::cerr << j.dump() << '\n';
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowscope: graph embeddings of network flows"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  app.add_option("--config", o.config, "pipeline config file (TOML-style)");
  auto* seed_opt = app.add_option("--seed", seed, "top-level seed (overrides the config)");
  app.add_option("--out", o.out, "output directory")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic packet stream");
  auto* ingest = app.add_subcommand("ingest", "segment packets into flow records");
  ingest->add_option("--input", o.input, "packet file (.csv or .jsonl)");
  ingest->add_flag("--sort", o.sort, "sort packets by timestamp first");
  auto* split = app.add_subcommand("split", "temporal split into four graph snapshots");
  auto* trn = app.add_subcommand("train", "train the model on the train snapshot");
  trn->add_flag("--baseline", o.baseline, "train the raw-feature baseline (no GIN, no fusion)");
  auto* emb = app.add_subcommand("embed", "embed every partition");
  auto* expl = app.add_subcommand("explain", "Shapley attributions for one partition");
  expl->add_option("--partition", o.partition, "partition to explain");
  auto* ev = app.add_subcommand("eval", "clustering validity, F1 and drift report");
  auto* plot = app.add_subcommand("export-plot", "SVG scatter plots with class contours");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("InvalidArgument", "config", e.what(), 2);
  }
  if (*seed_opt) o.seed = seed;

  try {
    const Context ctx = make_context(o);
    if (*synth) cmd_synth(ctx);
    else if (*ingest) cmd_ingest(ctx, o);
    else if (*split) cmd_split(ctx);
    else if (*trn) cmd_train(ctx, o);
    else if (*emb) cmd_embed(ctx);
    else if (*expl) cmd_explain(ctx, o);
    else if (*ev) cmd_eval(ctx);
    else if (*plot) cmd_export_plot(ctx);
  } catch (const Error& e) {
    const char* klass = e.klass() == ErrorClass::Config  ? "config"
                        : e.klass() == ErrorClass::Data ? "data"
                                                         : "numeric";
    return report_error(errc_name(e.code()), klass, e.what(), exit_code(e.klass()));
  } catch (const fs::filesystem_error& e) {
    return report_error("Io", "data", e.what(), 3);
  } catch (const std::exception& e) {
    return report_error("Internal", "data", e.what(), 3);
  }
  return 0;
}
