#include <doctest.h>

#include <filesystem>
#include <set>

#include "flowscope/error.hpp"
#include "flowscope/graphbuild.hpp"
#include "support.hpp"

using namespace flowscope;
using fst::packet;

namespace {

std::vector<FlowRecord> flows_from(const std::vector<PacketEvent>& pkts) {
  return segment_flows(pkts);
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("flowscope_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("graphbuild") {

TEST_CASE("two devices, three flows") {
  const auto flows = flows_from({packet(0, "10.0.0.1", 1, "10.0.0.2", 80),
                                 packet(1, "10.0.0.1", 2, "10.0.0.2", 80),
                                 packet(2, "10.0.0.2", 3, "10.0.0.1", 80)});
  const auto g = build_snapshot(flows, PortVocabulary::defaults());
  CHECK(g.num_nodes() == 2);
  CHECK(g.num_edges() == 3);
  CHECK(g.x.rows() == 2);
  CHECK(g.x.cols() == 17);
  CHECK(g.e.rows() == 3);
  CHECK(g.e.cols() == 98);
  CHECK(g.node_ids == std::vector<std::string>{"10.0.0.1", "10.0.0.2"});
  CHECK(g.src == std::vector<std::size_t>{0, 0, 1});
  CHECK(g.dst == std::vector<std::size_t>{1, 1, 0});
}

TEST_CASE("self flow") {
  const auto g = build_snapshot(flows_from({packet(0, "10.0.0.1", 1, "10.0.0.1", 80)}),
                                PortVocabulary::defaults());
  CHECK(g.num_nodes() == 1);
  CHECK(g.src[0] == g.dst[0]);
}

TEST_CASE("empty input") {
  try {
    build_snapshot({}, PortVocabulary::defaults());
    FAIL("expected EmptyInput");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptyInput);
  }
}

TEST_CASE("node rows aggregate exactly the incident flows") {
  const auto flows = fst::random_flows(7, 60, 21);
  const auto g = build_snapshot(flows, PortVocabulary::defaults());
  std::set<std::string> ips;
  for (const auto& f : flows) {
    ips.insert(f.key.lo.ip.to_string());
    ips.insert(f.key.hi.ip.to_string());
  }
  CHECK(g.num_nodes() == ips.size());
  double bytes = 0, pkts = 0;
  for (const auto& f : flows) {
    bytes += f.bytes();
    pkts += static_cast<double>(f.packets());
  }
  double out_b = 0, in_b = 0, out_p = 0, in_p = 0;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    out_b += g.x(v, 0);
    out_p += g.x(v, 1);
    in_b += g.x(v, 2);
    in_p += g.x(v, 3);
    std::vector<const FlowRecord*> incident;
    for (const auto& f : flows) {
      if (f.key.lo.ip.to_string() == g.node_ids[v] || f.key.hi.ip.to_string() == g.node_ids[v])
        incident.push_back(&f);
    }
    const auto want = node_features(IpAddress::parse(g.node_ids[v]), incident);
    for (std::size_t c = 0; c < 17; ++c) CHECK(g.x(v, c) == want[c]);
  }
  CHECK(out_b == bytes);
  CHECK(in_b == bytes);
  CHECK(out_p == pkts);
  CHECK(in_p == pkts);
  for (std::size_t k = 0; k < g.num_edges(); ++k) {
    CHECK(g.src[k] < g.num_nodes());
    CHECK(g.dst[k] < g.num_nodes());
    CHECK(g.node_ids[g.src[k]] == flows[k].initiator().ip.to_string());
  }
}

TEST_CASE("node labels by majority") {
  auto f = [](double ts, const char* a, const char* b, std::uint16_t sport, const char* label) {
    return packet(ts, a, sport, b, 80, 60, Protocol::Tcp, label);
  };
  const auto flows = flows_from({f(0, "10.0.0.1", "10.0.0.2", 1, "dos"),
                                 f(1, "10.0.0.1", "10.0.0.2", 2, "benign"),
                                 f(2, "10.0.0.1", "10.0.0.3", 3, "recon"),
                                 f(3, "10.0.0.4", "10.0.0.3", 4, "recon"),
                                 f(4, "10.0.0.5", "10.0.0.6", 5, "mirai_like"),
                                 f(5, "10.0.0.5", "10.0.0.6", 6, "dos")});
  const auto g = build_snapshot(flows, PortVocabulary::defaults());
  const auto labels = node_labels(g);
  // 10.0.0.1: dos, benign, recon -> three-way tie including benign
  CHECK(labels[0] == "benign");
  CHECK(labels[1] == "benign");  // 10.0.0.2: dos/benign tie
  CHECK(labels[2] == "recon");
  CHECK(labels[4] == "dos");     // tie without benign -> smallest label
  const std::vector<std::string> preds(g.num_edges(), "dos");
  CHECK(majority_labels(g, preds) == std::vector<std::string>(g.num_nodes(), "dos"));
  CHECK_THROWS_AS(majority_labels(g, std::vector<std::string>{"dos"}), Error);
}

TEST_CASE("temporal split sizes and order") {
  auto make = [](std::size_t n) {
    std::vector<PacketEvent> pkts;
    for (std::size_t i = 0; i < n; ++i)
      pkts.push_back(packet(static_cast<double>(i), "10.0.0.1", static_cast<std::uint16_t>(1000 + i),
                            "10.0.0.2", 80));
    return segment_flows(pkts);
  };
  auto sizes = [](const TemporalSplit& s) {
    std::vector<std::size_t> out;
    for (const auto& p : s.parts) out.push_back(p.size());
    return out;
  };
  CHECK(sizes(temporal_split(make(8))) == std::vector<std::size_t>{2, 2, 2, 2});
  CHECK(sizes(temporal_split(make(9))) == std::vector<std::size_t>{3, 2, 2, 2});
  CHECK(sizes(temporal_split(make(11))) == std::vector<std::size_t>{3, 3, 3, 2});

  const auto flows = make(23);
  const auto split = temporal_split(flows);
  std::vector<std::size_t> all;
  for (std::size_t p = 0; p < 4; ++p) {
    all.insert(all.end(), split.parts[p].begin(), split.parts[p].end());
    if (p > 0) CHECK(flows[split.parts[p - 1].back()].start < flows[split.parts[p].front()].start);
  }
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);

  try {
    temporal_split(make(3));
    FAIL("expected FewerThanFourFlows");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::FewerThanFourFlows);
  }
}

TEST_CASE("export and import reproduce the snapshot") {
  const auto g = fst::random_snapshot(8, 50, 4, {"benign", "dos", "recon"});
  const auto dir = scratch_dir("snapshot");
  export_snapshot(g, PortVocabulary::defaults(), dir);
  CHECK(std::filesystem::exists(dir / "nodes.csv"));
  CHECK(std::filesystem::exists(dir / "edges.csv"));
  CHECK(std::filesystem::exists(dir / "meta.json"));
  CHECK(import_snapshot(dir) == g);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
