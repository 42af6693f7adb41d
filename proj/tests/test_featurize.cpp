#include <doctest.h>

#include <cmath>
#include <numeric>

#include "flowscope/error.hpp"
#include "flowscope/featurize.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace flowscope;
using fst::packet;

namespace {

oracle::Pkt to_oracle(const PacketEvent& p) {
  auto quad = [](const IpAddress& ip) {
    const auto o = ip.octets();
    return std::array<int, 4>{o[0], o[1], o[2], o[3]};
  };
  return {p.ts, quad(p.src.ip), p.src.port, quad(p.dst.ip), p.dst.port,
          static_cast<double>(p.length)};
}

double block_sum(const std::vector<double>& e, std::size_t from, std::size_t n) {
  return std::accumulate(e.begin() + static_cast<long>(from), e.begin() + static_cast<long>(from + n), 0.0);
}

}  // namespace

TEST_SUITE("featurize") {

TEST_CASE("default vocabulary is 27 + 28 categories") {
  const auto v = PortVocabulary::defaults();
  CHECK(v.size(PortSide::Src) == 27);
  CHECK(v.size(PortSide::Dst) == 28);
  CHECK(edge_feature_names(v).size() == kEdgeFeatureCount);
  CHECK(v.categories(PortSide::Dst).back().name == "dhcp6");
}

TEST_CASE("port categories") {
  const auto v = PortVocabulary::defaults();
  auto name = [&](std::uint16_t port, PortSide side) {
    return v.categories(side)[port_category(port, side, v)].name;
  };
  CHECK(name(22, PortSide::Src) == "ssh");
  CHECK(name(22, PortSide::Dst) == "ssh");
  CHECK(name(50000, PortSide::Dst) == "ephemeral");
  CHECK(name(8883, PortSide::Dst) == "mqtts");
  CHECK(name(3000, PortSide::Src) == "registered");
  CHECK(name(7, PortSide::Src) == "unknown");
  CHECK(name(546, PortSide::Dst) == "dhcp6");
  CHECK(name(546, PortSide::Src) == "unknown");
}

TEST_CASE("every port maps to exactly one category on each side") {
  const auto v = PortVocabulary::defaults();
  for (PortSide side : {PortSide::Src, PortSide::Dst}) {
    const auto& cats = v.categories(side);
    for (std::uint32_t p = 0; p <= 65535; ++p) {
      int claims = 0;
      for (const auto& c : cats)
        for (const auto& r : c.ports) claims += r.contains(static_cast<std::uint16_t>(p));
      CHECK(claims <= 1);
      const std::size_t idx = v.category(static_cast<std::uint16_t>(p), side);
      REQUIRE(idx < cats.size());
      if (claims == 0) {
        bool fallback = false;
        for (const auto& r : cats[idx].fallback) fallback |= r.contains(static_cast<std::uint16_t>(p));
        CHECK(fallback);
      }
    }
  }
}

TEST_CASE("vocabulary json round trip and validation") {
  const auto v = PortVocabulary::defaults();
  const auto back = PortVocabulary::from_json(v.to_json());
  CHECK(back.to_json() == v.to_json());
  for (std::uint16_t p : {0, 22, 546, 8080, 50000}) {
    CHECK(back.category(p, PortSide::Dst) == v.category(p, PortSide::Dst));
  }
  auto doc = v.to_json();
  doc.erase(doc.size() - 1);  // drops dst dhcp6 -> 27 + 27 categories
  CHECK_THROWS_AS(PortVocabulary::from_json(doc), Error);
  auto clash = v.to_json();
  clash[0]["ports"].push_back(22);  // http also claims ssh's port
  CHECK_THROWS_AS(PortVocabulary::from_json(clash), Error);
}

TEST_CASE("two-packet flow matches hand values and the scalar oracle") {
  const std::vector<PacketEvent> pkts = {packet(0.0, "10.0.0.1", 1000, "10.0.0.2", 80, 100),
                                         packet(1.0, "10.0.0.1", 1000, "10.0.0.2", 80, 100)};
  const auto e = edge_features(fst::single_flow(pkts), PortVocabulary::defaults());
  CHECK(e[0] == 1.0);    // duration
  CHECK(e[1] == 0.0);    // dur_zero
  CHECK(e[2] == 2.0);    // pkts
  CHECK(e[3] == 200.0);  // bytes
  CHECK(e[4] == 100.0);  // bytes_per_pkt
  CHECK(e[5] == 2.0);    // pps
  CHECK(e[6] == 200.0);  // bps
  CHECK(e[10] == 0.0);   // size_var
  CHECK(e[11] == 1.0);   // iat_mean
  for (std::size_t i = 0; i < kDirBlockSize; ++i) CHECK(e[kDirB2AOffset + i] == 0.0);

  std::vector<oracle::Pkt> op;
  for (const auto& p : pkts) op.push_back(to_oracle(p));
  const auto want = oracle::numeric_flow_features(op);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(e[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("numeric columns agree with the oracle on random bidirectional flows") {
  Rng rng(5);
  const auto vocab = PortVocabulary::defaults();
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PacketEvent> pkts;
    double ts = rng.uniform(0, 100);
    const std::size_t n = 1 + rng.index(12);
    for (std::size_t i = 0; i < n; ++i) {
      const auto len = static_cast<std::uint32_t>(rng.index(1500));
      pkts.push_back(rng.uniform() < 0.5 ? packet(ts, "10.0.1.7", 4321, "10.0.0.9", 443, len)
                                         : packet(ts, "10.0.0.9", 443, "10.0.1.7", 4321, len));
      ts += rng.uniform() < 0.2 ? 0.0 : rng.uniform(0, 0.8);
    }
    const auto e = edge_features(fst::single_flow(pkts), vocab);
    std::vector<oracle::Pkt> op;
    for (const auto& p : pkts) op.push_back(to_oracle(p));
    const auto want = oracle::numeric_flow_features(op);
    for (std::size_t i = 0; i < want.size(); ++i) {
      INFO("column " << edge_feature_names(vocab)[i]);
      CHECK(e[i] == doctest::Approx(want[i]).epsilon(1e-9).scale(1.0));
    }
  }
}

TEST_CASE("single packet flow uses the zero-duration rates") {
  const auto e = edge_features(fst::single_flow({packet(0, "10.0.0.1", 5, "10.0.0.2", 53, 90,
                                                        Protocol::Udp)}),
                               PortVocabulary::defaults());
  CHECK(e[1] == 1.0);
  CHECK(e[5] == 1.0);
  CHECK(e[6] == 90.0);
  for (std::size_t i = 11; i < 15; ++i) CHECK(e[i] == 0.0);
}

TEST_CASE("one-hot blocks") {
  const auto vocab = PortVocabulary::defaults();
  const auto e = edge_features(fst::single_flow({packet(0, "10.0.0.1", 40000, "10.0.0.2", 53)}), vocab);
  CHECK(e[kProtoOffset + 0] == 1.0);
  CHECK(block_sum(e, kProtoOffset, 4) == 1.0);
  const std::size_t dst = kSrcPortOffset + vocab.size(PortSide::Src);
  CHECK(e[dst + vocab.index_of("dns", PortSide::Dst)] == 1.0);
  CHECK(block_sum(e, dst, vocab.size(PortSide::Dst)) == 1.0);
  CHECK(e[kSrcPortOffset + vocab.index_of("registered", PortSide::Src)] == 1.0);
}

TEST_CASE("shape properties over 1000 random flows") {
  const auto vocab = PortVocabulary::defaults();
  Rng rng(17);
  const std::size_t dst = kSrcPortOffset + vocab.size(PortSide::Src);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<PacketEvent> pkts;
    const auto sp = static_cast<std::uint16_t>(rng.index(65536));
    const auto dp = static_cast<std::uint16_t>(rng.index(65536));
    const Protocol proto = static_cast<Protocol>(rng.index(4));
    double ts = 0;
    const std::size_t n = 1 + rng.index(6);
    const bool one_way = rng.uniform() < 0.3;
    for (std::size_t i = 0; i < n; ++i) {
      const auto len = static_cast<std::uint32_t>(rng.index(2000));
      const bool fwd = one_way || rng.uniform() < 0.5;
      pkts.push_back(fwd ? packet(ts, "10.0.0.1", sp, "10.0.0.2", dp, len, proto)
                         : packet(ts, "10.0.0.2", dp, "10.0.0.1", sp, len, proto));
      ts += rng.uniform() < 0.3 ? 0.0 : rng.exponential(2.0);
    }
    const FlowRecord flow = fst::single_flow(pkts);
    const auto e = edge_features(flow, vocab);
    REQUIRE(e.size() == 98);
    for (double v : e) REQUIRE(std::isfinite(v));
    CHECK(block_sum(e, kProtoOffset, 4) == 1.0);
    CHECK(block_sum(e, kSrcPortOffset, vocab.size(PortSide::Src)) == 1.0);
    CHECK(block_sum(e, dst, vocab.size(PortSide::Dst)) == 1.0);
    CHECK((e[1] == 0.0 || e[1] == 1.0));
    CHECK(e[10] >= 0.0);
    CHECK(e[kDirA2BOffset + 5] >= 0.0);
    CHECK(e[kDirB2AOffset + 5] >= 0.0);

    // Relabel the endpoints so the other side becomes endpoint_lo.
    std::vector<PacketEvent> swapped = pkts;
    for (auto& p : swapped) {
      p.src.ip = p.src.ip == IpAddress::parse("10.0.0.1") ? IpAddress::parse("10.0.0.3")
                                                           : IpAddress::parse("10.0.0.1");
      p.dst.ip = p.dst.ip == IpAddress::parse("10.0.0.1") ? IpAddress::parse("10.0.0.3")
                                                           : IpAddress::parse("10.0.0.1");
    }
    const auto s = edge_features(fst::single_flow(swapped), vocab);
    for (std::size_t i = 0; i < kDirA2BOffset; ++i) CHECK(s[i] == e[i]);
    for (std::size_t i = 0; i < kDirBlockSize; ++i) {
      CHECK(s[kDirA2BOffset + i] == e[kDirB2AOffset + i]);
      CHECK(s[kDirB2AOffset + i] == e[kDirA2BOffset + i]);
    }
    const auto x = node_features(flow.key.lo.ip, std::vector<const FlowRecord*>{&flow});
    REQUIRE(x.size() == 17);
    for (double v : x) CHECK(std::isfinite(v));
  }
}

TEST_CASE("node features") {
  const IpAddress dev = IpAddress::parse("10.0.0.1");
  SUBCASE("no flows") {
    const auto x = node_features(dev, {});
    for (std::size_t i = 0; i < 15; ++i) CHECK(x[i] == 0.0);
    CHECK(x[15] == 1.0);
    CHECK(x[16] == 1.0);
  }
  SUBCASE("one flow, 200 B out and 100 B in") {
    const FlowRecord f = fst::single_flow({packet(0, "10.0.0.1", 1, "10.0.0.2", 2, 200),
                                           packet(1, "10.0.0.2", 2, "10.0.0.1", 1, 100)});
    const auto x = node_features(dev, std::vector<const FlowRecord*>{&f});
    CHECK(x[0] == 200.0);
    CHECK(x[2] == 100.0);
    CHECK(x[15] == doctest::Approx(201.0 / 101.0));
    CHECK(x[16] == 2.0);  // initiated one, received none
    const auto y = node_features(IpAddress::parse("10.0.0.2"), std::vector<const FlowRecord*>{&f});
    CHECK(y[0] == 100.0);
    CHECK(y[16] == 0.5);
  }
  SUBCASE("protocol flags") {
    const FlowRecord t = fst::single_flow({packet(0, "10.0.0.1", 1, "10.0.0.2", 2, 60, Protocol::Tcp)});
    const FlowRecord u = fst::single_flow({packet(0, "10.0.0.1", 1, "10.0.0.3", 2, 60, Protocol::Udp)});
    const auto x = node_features(dev, std::vector<const FlowRecord*>{&t, &u});
    CHECK(x[12] == 1.0);
    CHECK(x[13] == 1.0);
    CHECK(x[14] == 0.0);
  }
  SUBCASE("a flow not touching the device is rejected") {
    const FlowRecord f = fst::single_flow({packet(0, "10.0.0.5", 1, "10.0.0.2", 2)});
    CHECK_THROWS_AS(node_features(dev, std::vector<const FlowRecord*>{&f}), Error);
  }
}

TEST_CASE("standardizer") {
  const auto m = diff::Matrix::from_rows({{1, 5}, {3, 5}, {5, 5}});
  const Standardizer s = Standardizer::fit(m);
  CHECK(s.mean[0] == 3.0);
  CHECK(s.scale[0] == doctest::Approx(std::sqrt(8.0 / 3.0)));
  CHECK(s.scale[1] == 1.0);  // constant column keeps unit scale
  const auto z = s.apply(m);
  CHECK(z(0, 1) == 0.0);
  CHECK(z(0, 0) + z(1, 0) + z(2, 0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(s.apply(diff::Matrix(1, 3)), Error);
}

}  // TEST_SUITE
