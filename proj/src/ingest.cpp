#include "flowscope/ingest.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "flowscope/error.hpp"
#include "flowscope/io.hpp"

namespace flowscope {

std::string_view protocol_name(Protocol p) noexcept {
  switch (p) {
    case Protocol::Tcp: return "tcp";
    case Protocol::Udp: return "udp";
    case Protocol::Icmp: return "icmp";
    case Protocol::Icmpv6: return "icmpv6";
  }
  return "tcp";
}

Protocol parse_protocol(std::string_view text) {
  std::string t(io::trim(text));
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "tcp" || t == "6") return Protocol::Tcp;
  if (t == "udp" || t == "17") return Protocol::Udp;
  if (t == "icmp" || t == "1") return Protocol::Icmp;
  if (t == "icmpv6" || t == "58") return Protocol::Icmpv6;
  fail(Errc::ParseError, "unknown protocol '" + std::string(text) + "'");
}

// ---- IpAddress -------------------------------------------------------------

IpAddress IpAddress::parse(std::string_view text) {
  const std::string s(io::trim(text));
  IpAddress ip;
  if (s.find(':') != std::string::npos) {
    if (inet_pton(AF_INET6, s.c_str(), ip.bytes.data()) != 1) {
      fail(Errc::ParseError, "invalid IPv6 address '" + s + "'");
    }
    ip.length = 16;
  } else {
    if (inet_pton(AF_INET, s.c_str(), ip.bytes.data()) != 1) {
      fail(Errc::ParseError, "invalid IPv4 address '" + s + "'");
    }
    ip.length = 4;
  }
  return ip;
}

IpAddress IpAddress::v4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
  IpAddress ip;
  ip.bytes[0] = a;
  ip.bytes[1] = b;
  ip.bytes[2] = c;
  ip.bytes[3] = d;
  ip.length = 4;
  return ip;
}

std::string IpAddress::to_string() const {
  char buf[INET6_ADDRSTRLEN] = {};
  inet_ntop(length == 16 ? AF_INET6 : AF_INET, bytes.data(), buf, sizeof(buf));
  return buf;
}

std::strong_ordering IpAddress::operator<=>(const IpAddress& other) const {
  auto a = octets();
  auto b = other.octets();
  return std::lexicographical_compare_three_way(a.begin(), a.end(), b.begin(), b.end());
}

// ---- keys & accumulators ---------------------------------------------------

std::size_t FlowKeyHash::operator()(const FlowKey& key) const noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  for (const Endpoint* e : {&key.lo, &key.hi}) {
    for (auto b : e->ip.octets()) mix(b);
    mix(e->ip.length);
    mix(e->port);
  }
  mix(static_cast<std::uint64_t>(key.proto));
  return static_cast<std::size_t>(h);
}

FlowKey canonical_key(const PacketEvent& pkt) {
  FlowKey key;
  key.proto = pkt.proto;
  if (pkt.dst < pkt.src) {
    key.lo = pkt.dst;
    key.hi = pkt.src;
  } else {
    key.lo = pkt.src;
    key.hi = pkt.dst;
  }
  return key;
}

void RunningStats::add(double x) {
  if (n == 0) {
    min = max = x;
  } else {
    min = std::min(min, x);
    max = std::max(max, x);
  }
  ++n;
  sum += x;
  sumsq += x * x;
}

void RunningStats::merge(const RunningStats& other) {
  if (other.n == 0) return;
  if (n == 0) {
    *this = other;
    return;
  }
  n += other.n;
  sum += other.sum;
  sumsq += other.sumsq;
  min = std::min(min, other.min);
  max = std::max(max, other.max);
}

double RunningStats::variance() const {
  if (n < 2) return 0.0;
  const double m = mean();
  return std::max(0.0, sumsq / static_cast<double>(n) - m * m);
}

double RunningStats::stddev() const { return std::sqrt(variance()); }

void DirectionStats::add(double ts, std::uint32_t length) {
  if (sizes.n > 0) iats.add(ts - last_arrival);
  sizes.add(static_cast<double>(length));
  last_arrival = ts;
}

// ---- flow table --------------------------------------------------------------

namespace {

void absorb(FlowState& state, const PacketEvent& pkt) {
  if (state.packets() > 0) state.iats.add(pkt.ts - state.last);
  DirectionStats& dir = (pkt.src == state.key.lo) ? state.a2b : state.b2a;
  dir.add(pkt.ts, pkt.length);
  state.last = std::max(state.last, pkt.ts);
  if (pkt.tcp_flags) state.tcp_flags |= *pkt.tcp_flags;
}

FlowState open_state(const FlowKey& key, const PacketEvent& pkt) {
  FlowState s;
  s.key = key;
  s.start = pkt.ts;
  s.last = pkt.ts;
  s.initiator_is_lo = (pkt.src == key.lo);
  s.label = pkt.label;
  absorb(s, pkt);
  return s;
}

FlowRecord freeze(const FlowState& state) {
  FlowRecord rec;
  static_cast<FlowState&>(rec) = state;
  rec.duration = state.last - state.start;
  return rec;
}

}  // namespace

std::vector<FlowRecord> FlowTable::ingest(const PacketEvent& pkt) {
  if (pkt.ts < latest_ts_ - options_.out_of_order_slack) {
    fail(Errc::OutOfOrderTimestamp, "packet at ts=" + io::format_double(pkt.ts) +
                                        " precedes stream position " +
                                        io::format_double(latest_ts_));
  }
  latest_ts_ = std::max(latest_ts_, pkt.ts);

  std::vector<FlowRecord> flushed;
  const FlowKey key = canonical_key(pkt);
  auto it = active_.find(key);
  if (it == active_.end()) {
    active_.emplace(key, Slot{open_state(key, pkt), next_seq_++});
  } else if (pkt.ts - it->second.state.start > options_.max_duration) {
    flushed.push_back(freeze(it->second.state));
    it->second = Slot{open_state(key, pkt), next_seq_++};
  } else {
    absorb(it->second.state, pkt);
  }
  return flushed;
}

std::vector<FlowRecord> FlowTable::flush_all() {
  std::vector<const Slot*> slots;
  slots.reserve(active_.size());
  for (const auto& [key, slot] : active_) slots.push_back(&slot);
  std::sort(slots.begin(), slots.end(), [](const Slot* a, const Slot* b) {
    if (a->state.start != b->state.start) return a->state.start < b->state.start;
    return a->seq < b->seq;
  });
  std::vector<FlowRecord> out;
  out.reserve(slots.size());
  for (const Slot* s : slots) out.push_back(freeze(s->state));
  active_.clear();
  return out;
}

std::vector<FlowRecord> segment_flows(std::span<const PacketEvent> packets,
                                      IngestOptions options) {
  FlowTable table(options);
  std::vector<FlowRecord> flows;
  for (const PacketEvent& p : packets) {
    auto done = table.ingest(p);
    flows.insert(flows.end(), std::make_move_iterator(done.begin()),
                 std::make_move_iterator(done.end()));
  }
  auto rest = table.flush_all();
  flows.insert(flows.end(), std::make_move_iterator(rest.begin()),
               std::make_move_iterator(rest.end()));
  std::stable_sort(flows.begin(), flows.end(),
                   [](const FlowRecord& a, const FlowRecord& b) { return a.start < b.start; });
  return flows;
}

// ---- packet files ------------------------------------------------------------

namespace {

std::uint16_t parse_port(std::string_view text) {
  const auto v = io::parse_int(text);
  if (v < 0 || v > 65535) fail(Errc::ParseError, "port out of range: " + std::string(text));
  return static_cast<std::uint16_t>(v);
}

std::optional<std::uint16_t> parse_flags(std::string_view text) {
  text = io::trim(text);
  if (text.empty()) return std::nullopt;
  if (text.starts_with("0x") || text.starts_with("0X")) text.remove_prefix(2);
  unsigned value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, 16);
  if (ec != std::errc() || ptr != text.data() + text.size() || value > 0xFFFF) {
    fail(Errc::ParseError, "invalid tcp_flags '" + std::string(text) + "'");
  }
  return static_cast<std::uint16_t>(value);
}

std::string format_flags(std::uint16_t flags) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "0x%02x", flags);
  return buf;
}

void validate(const PacketEvent& p) {
  if (!std::isfinite(p.ts)) fail(Errc::ParseError, "non-finite timestamp");
}

}  // namespace

std::vector<PacketEvent> read_packets_csv(std::istream& in) {
  const auto table = io::CsvTable::read(in);
  const std::size_t c_ts = table.column("ts"), c_sip = table.column("src_ip"),
                    c_sp = table.column("src_port"), c_dip = table.column("dst_ip"),
                    c_dp = table.column("dst_port"), c_proto = table.column("proto"),
                    c_len = table.column("length");
  const bool has_flags = table.has_column("tcp_flags");
  const bool has_label = table.has_column("label");
  const std::size_t c_flags = has_flags ? table.column("tcp_flags") : 0;
  const std::size_t c_label = has_label ? table.column("label") : 0;

  std::vector<PacketEvent> out;
  out.reserve(table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    PacketEvent p;
    p.ts = io::parse_double(table.at(r, c_ts));
    p.src = {IpAddress::parse(table.at(r, c_sip)), parse_port(table.at(r, c_sp))};
    p.dst = {IpAddress::parse(table.at(r, c_dip)), parse_port(table.at(r, c_dp))};
    p.proto = parse_protocol(table.at(r, c_proto));
    const auto len = io::parse_int(table.at(r, c_len));
    if (len < 0 || len > UINT32_MAX) fail(Errc::ParseError, "invalid packet length");
    p.length = static_cast<std::uint32_t>(len);
    if (has_flags) p.tcp_flags = parse_flags(table.at(r, c_flags));
    if (has_label) p.label = std::string(io::trim(table.at(r, c_label)));
    validate(p);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PacketEvent> read_packets_jsonl(std::istream& in) {
  std::vector<PacketEvent> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      PacketEvent p;
      p.ts = j.at("ts").get<double>();
      auto port = [](const nlohmann::json& v) {
        const auto x = v.get<std::int64_t>();
        if (x < 0 || x > 65535) fail(Errc::ParseError, "port out of range");
        return static_cast<std::uint16_t>(x);
      };
      p.src = {IpAddress::parse(j.at("src_ip").get<std::string>()), port(j.at("src_port"))};
      p.dst = {IpAddress::parse(j.at("dst_ip").get<std::string>()), port(j.at("dst_port"))};
      p.proto = parse_protocol(j.at("proto").get<std::string>());
      const auto len = j.at("length").get<std::int64_t>();
      if (len < 0) fail(Errc::ParseError, "negative packet length");
      p.length = static_cast<std::uint32_t>(len);
      if (j.contains("tcp_flags") && !j["tcp_flags"].is_null()) {
        const auto& f = j["tcp_flags"];
        p.tcp_flags = f.is_string() ? parse_flags(f.get<std::string>())
                                    : std::optional<std::uint16_t>(f.get<std::uint16_t>());
      }
      if (j.contains("label") && j["label"].is_string()) p.label = j["label"].get<std::string>();
      validate(p);
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::ParseError, "jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<PacketEvent> read_packets(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  const auto ext = path.extension().string();
  if (ext == ".jsonl" || ext == ".ndjson") return read_packets_jsonl(in);
  return read_packets_csv(in);
}

void write_packets_csv(std::ostream& out, std::span<const PacketEvent> packets) {
  out << kPacketCsvHeader << '\n';
  for (const PacketEvent& p : packets) {
    out << io::format_double(p.ts) << ',' << p.src.ip.to_string() << ',' << p.src.port << ','
        << p.dst.ip.to_string() << ',' << p.dst.port << ',' << protocol_name(p.proto) << ','
        << p.length << ',' << (p.tcp_flags ? format_flags(*p.tcp_flags) : std::string()) << ','
        << p.label << '\n';
  }
}

void sort_packets(std::vector<PacketEvent>& packets) {
  std::stable_sort(packets.begin(), packets.end(),
                   [](const PacketEvent& a, const PacketEvent& b) { return a.ts < b.ts; });
}

// ---- flow files ----------------------------------------------------------------

namespace {

const char* const kStatFields[] = {"n", "sum", "sumsq", "min", "max"};

void append_stats_header(std::vector<std::string>& h, const std::string& prefix) {
  for (const char* f : kStatFields) h.push_back(prefix + "_" + f);
}

void append_stats(std::vector<std::string>& row, const RunningStats& s) {
  row.push_back(std::to_string(s.n));
  row.push_back(io::format_double(s.sum));
  row.push_back(io::format_double(s.sumsq));
  row.push_back(io::format_double(s.min));
  row.push_back(io::format_double(s.max));
}

RunningStats read_stats(const io::CsvTable& t, std::size_t r, const std::string& prefix) {
  RunningStats s;
  s.n = static_cast<std::uint64_t>(io::parse_int(t.at(r, t.column(prefix + "_n"))));
  s.sum = io::parse_double(t.at(r, t.column(prefix + "_sum")));
  s.sumsq = io::parse_double(t.at(r, t.column(prefix + "_sumsq")));
  s.min = io::parse_double(t.at(r, t.column(prefix + "_min")));
  s.max = io::parse_double(t.at(r, t.column(prefix + "_max")));
  return s;
}

std::vector<std::string> flow_header() {
  std::vector<std::string> h = {"start",  "last",     "duration",  "lo_ip", "lo_port",
                                "hi_ip",  "hi_port",  "proto",     "initiator",
                                "tcp_flags", "label"};
  for (const char* dir : {"a2b", "b2a"}) {
    append_stats_header(h, std::string(dir) + "_size");
    append_stats_header(h, std::string(dir) + "_iat");
    h.push_back(std::string(dir) + "_last");
  }
  append_stats_header(h, "iat");
  return h;
}

}  // namespace

void write_flows_csv(std::ostream& out, std::span<const FlowRecord> flows) {
  const auto header = flow_header();
  out << io::join(header) << '\n';
  for (const FlowRecord& f : flows) {
    std::vector<std::string> row = {io::format_double(f.start),
                                    io::format_double(f.last),
                                    io::format_double(f.duration),
                                    f.key.lo.ip.to_string(),
                                    std::to_string(f.key.lo.port),
                                    f.key.hi.ip.to_string(),
                                    std::to_string(f.key.hi.port),
                                    std::string(protocol_name(f.key.proto)),
                                    f.initiator_is_lo ? "lo" : "hi",
                                    format_flags(f.tcp_flags),
                                    f.label};
    for (const DirectionStats* d : {&f.a2b, &f.b2a}) {
      append_stats(row, d->sizes);
      append_stats(row, d->iats);
      row.push_back(io::format_double(d->last_arrival));
    }
    append_stats(row, f.iats);
    out << io::join(row) << '\n';
  }
}

std::vector<FlowRecord> read_flows_csv(std::istream& in) {
  const auto t = io::CsvTable::read(in);
  std::vector<FlowRecord> flows;
  flows.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    FlowRecord f;
    f.start = io::parse_double(t.at(r, t.column("start")));
    f.last = io::parse_double(t.at(r, t.column("last")));
    f.duration = io::parse_double(t.at(r, t.column("duration")));
    f.key.lo = {IpAddress::parse(t.at(r, t.column("lo_ip"))),
                parse_port(t.at(r, t.column("lo_port")))};
    f.key.hi = {IpAddress::parse(t.at(r, t.column("hi_ip"))),
                parse_port(t.at(r, t.column("hi_port")))};
    f.key.proto = parse_protocol(t.at(r, t.column("proto")));
    const auto init = io::trim(t.at(r, t.column("initiator")));
    if (init != "lo" && init != "hi") fail(Errc::ParseError, "initiator must be lo or hi");
    f.initiator_is_lo = init == "lo";
    f.tcp_flags = parse_flags(t.at(r, t.column("tcp_flags"))).value_or(0);
    f.label = std::string(io::trim(t.at(r, t.column("label"))));
    f.a2b.sizes = read_stats(t, r, "a2b_size");
    f.a2b.iats = read_stats(t, r, "a2b_iat");
    f.a2b.last_arrival = io::parse_double(t.at(r, t.column("a2b_last")));
    f.b2a.sizes = read_stats(t, r, "b2a_size");
    f.b2a.iats = read_stats(t, r, "b2a_iat");
    f.b2a.last_arrival = io::parse_double(t.at(r, t.column("b2a_last")));
    f.iats = read_stats(t, r, "iat");
    flows.push_back(std::move(f));
  }
  return flows;
}

}  // namespace flowscope
