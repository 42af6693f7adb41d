#include <doctest.h>

#include <sstream>

#include "flowscope/error.hpp"
#include "flowscope/ingest.hpp"
#include "support.hpp"

using namespace flowscope;
using fst::packet;

TEST_SUITE("ingest") {

TEST_CASE("canonical key orders endpoints by ip bytes then port") {
  const FlowKey k = canonical_key(packet(0, "10.0.0.2", 5000, "10.0.0.1", 80));
  CHECK(k.lo.ip.to_string() == "10.0.0.1");
  CHECK(k.lo.port == 80);
  CHECK(k.hi.ip.to_string() == "10.0.0.2");
  CHECK(k.hi.port == 5000);

  const FlowKey same_ip = canonical_key(packet(0, "10.0.0.1", 443, "10.0.0.1", 80));
  CHECK(same_ip.lo.port == 80);
  CHECK(same_ip.hi.port == 443);

  // numeric, not textual: 10.0.0.9 < 10.0.0.10
  const FlowKey numeric = canonical_key(packet(0, "10.0.0.10", 1, "10.0.0.9", 2));
  CHECK(numeric.lo.ip.to_string() == "10.0.0.9");
}

TEST_CASE("canonical key is symmetric under src/dst swap") {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    auto ip = [&] {
      return std::to_string(rng.index(3)) + "." + std::to_string(rng.index(3)) + ".0." +
             std::to_string(rng.index(4));
    };
    const auto a = ip(), b = ip();
    const auto pa = static_cast<std::uint16_t>(rng.index(65536));
    const auto pb = static_cast<std::uint16_t>(rng.index(65536));
    const Protocol proto = static_cast<Protocol>(rng.index(4));
    const PacketEvent fwd = packet(0, a, pa, b, pb, 60, proto);
    const PacketEvent rev = packet(0, b, pb, a, pa, 60, proto);
    const FlowKey k = canonical_key(fwd);
    CHECK(k == canonical_key(rev));
    CHECK(!(k.hi < k.lo));
  }
}

TEST_CASE("ipv6 addresses compare as 16-byte tuples") {
  const IpAddress a = IpAddress::parse("fe80::1");
  const IpAddress b = IpAddress::parse("fe80::2:0");
  CHECK(a < b);
  CHECK(a.length == 16);
  CHECK(IpAddress::parse(a.to_string()) == a);
  const FlowKey k = canonical_key(packet(0, "fe80::2:0", 1, "fe80::1", 2));
  CHECK(k.lo.ip == a);
}

TEST_CASE("window boundary is strict") {
  SUBCASE("exactly 10 s stays in the flow") {
    const auto flows = segment_flows(std::vector{packet(0.0, "10.0.0.1", 1000, "10.0.0.2", 80),
                                                 packet(10.0, "10.0.0.1", 1000, "10.0.0.2", 80)});
    REQUIRE(flows.size() == 1);
    CHECK(flows[0].packets() == 2);
    CHECK(flows[0].duration == 10.0);
  }
  SUBCASE("10.5 s opens a new flow") {
    const auto flows = segment_flows(std::vector{packet(0.0, "10.0.0.1", 1000, "10.0.0.2", 80),
                                                 packet(10.5, "10.0.0.1", 1000, "10.0.0.2", 80)});
    REQUIRE(flows.size() == 2);
    CHECK(flows[0].duration == 0.0);
    CHECK(flows[0].start == 0.0);
    CHECK(flows[1].start == 10.5);
  }
}

TEST_CASE("the flushing packet is returned by ingest") {
  FlowTable table;
  CHECK(table.ingest(packet(0.0, "10.0.0.1", 1, "10.0.0.2", 2)).empty());
  const auto out = table.ingest(packet(11.0, "10.0.0.2", 2, "10.0.0.1", 1));
  REQUIRE(out.size() == 1);
  CHECK(out[0].packets() == 1);
  CHECK(table.size() == 1);
}

TEST_CASE("direction attribution follows endpoint_lo") {
  const FlowRecord f = fst::single_flow({packet(0.0, "10.0.0.2", 5000, "10.0.0.1", 80, 100),
                                         packet(0.5, "10.0.0.1", 80, "10.0.0.2", 5000, 300),
                                         packet(0.7, "10.0.0.1", 80, "10.0.0.2", 5000, 500)});
  CHECK(f.a2b.packets() == 2);  // sent by 10.0.0.1:80 (lo)
  CHECK(f.a2b.bytes() == 800);
  CHECK(f.b2a.packets() == 1);
  CHECK_FALSE(f.initiator_is_lo);
  CHECK(f.initiator().port == 5000);
  CHECK(f.responder().port == 80);
  CHECK(f.last >= f.start);
  CHECK(f.duration == doctest::Approx(0.7));
}

TEST_CASE("tcp and udp between the same endpoints are distinct flows") {
  const auto flows =
      segment_flows(std::vector{packet(0, "10.0.0.1", 1, "10.0.0.2", 2, 60, Protocol::Tcp),
                                packet(1, "10.0.0.1", 1, "10.0.0.2", 2, 60, Protocol::Udp)});
  CHECK(flows.size() == 2);
}

TEST_CASE("flow label is the first packet's label") {
  const FlowRecord f =
      fst::single_flow({packet(0, "10.0.0.1", 1, "10.0.0.2", 2, 60, Protocol::Tcp, "dos"),
                        packet(1, "10.0.0.2", 2, "10.0.0.1", 1, 60, Protocol::Tcp, "benign")});
  CHECK(f.label == "dos");
}

TEST_CASE("flush_all empties the table and is idempotent") {
  FlowTable table;
  CHECK(table.flush_all().empty());
  table.ingest(packet(0, "10.0.0.1", 1, "10.0.0.2", 2));
  table.ingest(packet(1, "10.0.0.1", 3, "10.0.0.2", 2));
  table.ingest(packet(2, "10.0.0.3", 1, "10.0.0.2", 2));
  const auto out = table.flush_all();
  CHECK(out.size() == 3);
  CHECK(table.size() == 0);
  CHECK(table.flush_all().empty());
  CHECK(out[0].start == 0);
  CHECK(out[2].start == 2);
}

TEST_CASE("out-of-order timestamps") {
  FlowTable strict;
  strict.ingest(packet(5.0, "10.0.0.1", 1, "10.0.0.2", 2));
  try {
    strict.ingest(packet(4.0, "10.0.0.1", 1, "10.0.0.2", 2));
    FAIL("expected OutOfOrderTimestamp");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::OutOfOrderTimestamp);
  }
  FlowTable lenient({10.0, 2.0});
  lenient.ingest(packet(5.0, "10.0.0.1", 1, "10.0.0.2", 2));
  CHECK_NOTHROW(lenient.ingest(packet(4.0, "10.0.0.1", 1, "10.0.0.2", 2)));
}

TEST_CASE("single packet flow") {
  const FlowRecord f = fst::single_flow({packet(3.0, "10.0.0.1", 1, "10.0.0.2", 2, 77)});
  CHECK(f.packets() == 1);
  CHECK(f.duration == 0.0);
  CHECK(f.iats.n == 0);
}

TEST_CASE("running stats merge equals sequential accumulation") {
  RunningStats a, b, all;
  for (double x : {1.0, 4.0, 9.0}) {
    a.add(x);
    all.add(x);
  }
  for (double x : {2.0, 3.0}) {
    b.add(x);
    all.add(x);
  }
  a.merge(b);
  CHECK(a.n == all.n);
  CHECK(a.sum == all.sum);
  CHECK(a.min == 1.0);
  CHECK(a.max == 9.0);
  CHECK(a.variance() == doctest::Approx(all.variance()));
  RunningStats one;
  one.add(5.0);
  CHECK(one.variance() == 0.0);
}

TEST_CASE("packet csv and jsonl readers agree") {
  const std::string csv =
      "ts,src_ip,src_port,dst_ip,dst_port,proto,length,tcp_flags,label\n"
      "0.5,10.0.0.1,1234,10.0.0.2,80,tcp,60,0x12,benign\n"
      "1.0,10.0.0.2,53,10.0.0.1,999,udp,80,,\n";
  const std::string jsonl =
      R"({"ts":0.5,"src_ip":"10.0.0.1","src_port":1234,"dst_ip":"10.0.0.2","dst_port":80,"proto":"tcp","length":60,"tcp_flags":"0x12","label":"benign"})"
      "\n"
      R"({"ts":1.0,"src_ip":"10.0.0.2","src_port":53,"dst_ip":"10.0.0.1","dst_port":999,"proto":"udp","length":80})"
      "\n";
  std::istringstream a(csv), b(jsonl);
  const auto pc = read_packets_csv(a);
  const auto pj = read_packets_jsonl(b);
  REQUIRE(pc.size() == 2);
  REQUIRE(pj.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(pc[i].ts == pj[i].ts);
    CHECK(pc[i].src == pj[i].src);
    CHECK(pc[i].dst == pj[i].dst);
    CHECK(pc[i].proto == pj[i].proto);
    CHECK(pc[i].length == pj[i].length);
    CHECK(pc[i].tcp_flags == pj[i].tcp_flags);
    CHECK(pc[i].label == pj[i].label);
  }
  CHECK(*pc[0].tcp_flags == 0x12);
  CHECK_FALSE(pc[1].tcp_flags.has_value());

  std::ostringstream out;
  write_packets_csv(out, pc);
  std::istringstream again(out.str());
  const auto round = read_packets_csv(again);
  CHECK(round.size() == 2);
  CHECK(round[0].ts == 0.5);
  CHECK(round[1].label.empty());
}

TEST_CASE("malformed packet rows are rejected") {
  auto parse = [](const std::string& row) {
    std::istringstream in("ts,src_ip,src_port,dst_ip,dst_port,proto,length,tcp_flags,label\n" +
                          row + "\n");
    return read_packets_csv(in);
  };
  CHECK_THROWS_AS(parse("0,10.0.0.1,70000,10.0.0.2,80,tcp,60,,"), Error);
  CHECK_THROWS_AS(parse("0,10.0.0.1,1,10.0.0.2,80,sctp,60,,"), Error);
  CHECK_THROWS_AS(parse("0,10.0.0.256,1,10.0.0.2,80,tcp,60,,"), Error);
  CHECK_THROWS_AS(parse("0,10.0.0.1,1,10.0.0.2,80,tcp,-1,,"), Error);
}

TEST_CASE("flows csv round trip is exact") {
  const auto flows = fst::random_flows(6, 40, 3);
  std::ostringstream out;
  write_flows_csv(out, flows);
  std::istringstream in(out.str());
  CHECK(read_flows_csv(in) == flows);
}

}  // TEST_SUITE
