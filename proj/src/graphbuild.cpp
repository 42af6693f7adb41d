#include "flowscope/graphbuild.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "flowscope/error.hpp"
#include "flowscope/io.hpp"

namespace flowscope {

GraphSnapshot build_snapshot(std::span<const FlowRecord> flows, const PortVocabulary& vocab) {
  if (flows.empty()) fail(Errc::EmptyInput, "cannot build a snapshot from zero flows");

  GraphSnapshot g;
  std::map<IpAddress, std::size_t> index;
  std::vector<IpAddress> devices;
  auto node_of = [&](const IpAddress& ip) {
    auto [it, inserted] = index.emplace(ip, devices.size());
    if (inserted) {
      devices.push_back(ip);
      g.node_ids.push_back(ip.to_string());
    }
    return it->second;
  };

  const std::size_t m = flows.size();
  g.src.reserve(m);
  g.dst.reserve(m);
  g.e = diff::Matrix(m, kEdgeFeatureCount);
  std::vector<std::vector<const FlowRecord*>> incident;
  g.window_start = flows.front().start;
  g.window_end = flows.front().last;
  for (std::size_t k = 0; k < m; ++k) {
    const FlowRecord& f = flows[k];
    const std::size_t s = node_of(f.initiator().ip);
    const std::size_t t = node_of(f.responder().ip);
    g.src.push_back(s);
    g.dst.push_back(t);
    incident.resize(devices.size());
    incident[s].push_back(&f);
    if (t != s) incident[t].push_back(&f);
    const auto feats = edge_features(f, vocab);
    std::copy(feats.begin(), feats.end(), g.e.row(k).begin());
    g.edge_labels.push_back(f.label);
    g.edge_times.push_back(f.start);
    g.window_start = std::min(g.window_start, f.start);
    g.window_end = std::max(g.window_end, f.last);
  }

  g.x = diff::Matrix(devices.size(), kNodeFeatureCount);
  for (std::size_t i = 0; i < devices.size(); ++i) {
    const auto feats = node_features(devices[i], incident[i]);
    std::copy(feats.begin(), feats.end(), g.x.row(i).begin());
  }
  return g;
}

std::vector<std::string> node_labels(const GraphSnapshot& g) {
  return majority_labels(g, g.edge_labels);
}

std::vector<std::string> majority_labels(const GraphSnapshot& g,
                                         std::span<const std::string> edge_labels) {
  if (edge_labels.size() != g.num_edges()) {
    fail(Errc::LengthMismatch, "one label per edge required");
  }
  std::vector<std::map<std::string, std::size_t>> counts(g.num_nodes());
  for (std::size_t k = 0; k < g.num_edges(); ++k) {
    const auto& label = edge_labels[k];
    if (label.empty()) continue;
    ++counts[g.src[k]][label];
    if (g.dst[k] != g.src[k]) ++counts[g.dst[k]][label];
  }
  std::vector<std::string> out(g.num_nodes());
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    std::size_t best = 0;
    for (const auto& [label, c] : counts[i]) best = std::max(best, c);
    if (best == 0) continue;
    auto benign = counts[i].find(std::string(kBenignLabel));
    if (benign != counts[i].end() && benign->second == best) {
      out[i] = std::string(kBenignLabel);
      continue;
    }
    for (const auto& [label, c] : counts[i]) {  // map order: smallest label first
      if (c == best) {
        out[i] = label;
        break;
      }
    }
  }
  return out;
}

TemporalSplit temporal_split(std::span<const FlowRecord> flows) {
  const std::size_t n = flows.size();
  if (n < 4) fail(Errc::FewerThanFourFlows, "temporal split needs at least 4 flows");
  for (std::size_t i = 1; i < n; ++i) {
    if (flows[i].start < flows[i - 1].start) {
      fail(Errc::InvalidArgument, "temporal split requires flows sorted by start time");
    }
  }
  TemporalSplit split;
  std::size_t next = 0;
  for (std::size_t p = 0; p < 4; ++p) {
    const std::size_t size = n / 4 + (p < n % 4 ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) split.parts[p].push_back(next++);
  }
  return split;
}

// ---- export / import ---------------------------------------------------------------

void export_snapshot(const GraphSnapshot& g, const PortVocabulary& vocab,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream os;
    os << "id";
    for (const auto& n : node_feature_names()) os << ',' << n;
    os << '\n';
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
      os << g.node_ids[i];
      for (double v : g.x.row(i)) os << ',' << io::format_double(v);
      os << '\n';
    }
    io::write_text(dir / "nodes.csv", os.str());
  }
  {
    std::ostringstream os;
    os << "s,t";
    for (const auto& n : edge_feature_names(vocab)) os << ',' << n;
    os << ",label,time\n";
    for (std::size_t k = 0; k < g.num_edges(); ++k) {
      os << g.src[k] << ',' << g.dst[k];
      for (double v : g.e.row(k)) os << ',' << io::format_double(v);
      os << ',' << g.edge_labels[k] << ',' << io::format_double(g.edge_times[k]) << '\n';
    }
    io::write_text(dir / "edges.csv", os.str());
  }
  nlohmann::ordered_json meta = {
      {"N", g.num_nodes()},
      {"M", g.num_edges()},
      {"window", {{"start", io::format_double(g.window_start)},
                  {"end", io::format_double(g.window_end)}}},
      {"node_features", kNodeFeatureCount},
      {"edge_features", kEdgeFeatureCount},
  };
  io::write_text(dir / "meta.json", meta.dump(2) + "\n");
}

GraphSnapshot import_snapshot(const std::filesystem::path& dir) {
  GraphSnapshot g;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io::read_text(dir / "meta.json"));
    g.window_start = io::parse_double(meta.at("window").at("start").get<std::string>());
    g.window_end = io::parse_double(meta.at("window").at("end").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ParseError, "meta.json: " + std::string(e.what()));
  }

  const auto nodes = io::CsvTable::read_file(dir / "nodes.csv");
  if (nodes.header().size() != 1 + kNodeFeatureCount) {
    fail(Errc::ParseError, "nodes.csv must have id plus 17 feature columns");
  }
  g.x = diff::Matrix(nodes.rows(), kNodeFeatureCount);
  for (std::size_t i = 0; i < nodes.rows(); ++i) {
    g.node_ids.push_back(nodes.at(i, 0));
    for (std::size_t c = 0; c < kNodeFeatureCount; ++c)
      g.x(i, c) = io::parse_double(nodes.at(i, 1 + c));
  }

  const auto edges = io::CsvTable::read_file(dir / "edges.csv");
  if (edges.header().size() != 2 + kEdgeFeatureCount + 2) {
    fail(Errc::ParseError, "edges.csv must have s,t, 98 feature columns, label, time");
  }
  const std::size_t n = g.node_ids.size();
  g.e = diff::Matrix(edges.rows(), kEdgeFeatureCount);
  for (std::size_t k = 0; k < edges.rows(); ++k) {
    const auto s = io::parse_int(edges.at(k, 0));
    const auto t = io::parse_int(edges.at(k, 1));
    if (s < 0 || t < 0 || static_cast<std::size_t>(s) >= n || static_cast<std::size_t>(t) >= n) {
      fail(Errc::ParseError, "edges.csv: node index out of range on row " + std::to_string(k));
    }
    g.src.push_back(static_cast<std::size_t>(s));
    g.dst.push_back(static_cast<std::size_t>(t));
    for (std::size_t c = 0; c < kEdgeFeatureCount; ++c)
      g.e(k, c) = io::parse_double(edges.at(k, 2 + c));
    g.edge_labels.push_back(std::string(io::trim(edges.at(k, 2 + kEdgeFeatureCount))));
    g.edge_times.push_back(io::parse_double(edges.at(k, 3 + kEdgeFeatureCount)));
  }
  if (meta.value("N", std::size_t{0}) != g.num_nodes() ||
      meta.value("M", std::size_t{0}) != g.num_edges()) {
    fail(Errc::ParseError, "meta.json N/M disagree with nodes.csv/edges.csv");
  }
  return g;
}

}  // namespace flowscope
