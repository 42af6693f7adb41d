#include "flowscope/featurize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "flowscope/error.hpp"

namespace flowscope {
namespace {

constexpr std::uint16_t kNoCategory = 0xFFFF;

PortCategory named(std::string name, std::vector<PortRange> ports) {
  return PortCategory{std::move(name), std::move(ports), {}};
}

PortRange single(std::uint16_t p) { return {p, p}; }

std::vector<PortCategory> base_categories() {
  return {
      named("http", {single(80)}),
      named("https", {single(443)}),
      named("http_alt", {single(8000), single(8008), single(8080), single(8081), single(8888)}),
      named("dns", {single(53), single(5353)}),
      named("ssh", {single(22)}),
      named("telnet", {single(23), single(2323)}),
      named("ftp", {single(21)}),
      named("ftp_data", {single(20)}),
      named("smtp", {single(25)}),
      named("smtp_alt", {single(587)}),
      named("smtp_alt2", {single(465)}),
      named("snmp", {single(161)}),
      named("snmp_trap", {single(162)}),
      named("mqtt", {single(1883)}),
      named("mqtts", {single(8883)}),
      named("dhcp", {{67, 68}}),
      named("ntp", {single(123)}),
      named("irc", {single(6667)}),
      named("irc_alt", {{6665, 6666}, {6668, 6669}}),
      named("irc_alt2", {single(6697), single(7000)}),
      named("adb", {single(5555)}),
      named("rdp", {single(3389)}),
      named("rtsp", {single(554), single(8554)}),
      named("upnp", {single(1900)}),
      PortCategory{"ephemeral", {}, {{49152, 65535}}},
      PortCategory{"registered", {}, {{1024, 49151}}},
      PortCategory{"unknown", {}, {{0, 1023}}},
  };
}

std::vector<std::uint16_t> build_lookup(const std::vector<PortCategory>& cats, const char* side) {
  std::vector<std::uint16_t> explicit_map(65536, kNoCategory);
  std::vector<std::uint16_t> fallback_map(65536, kNoCategory);
  for (std::size_t c = 0; c < cats.size(); ++c) {
    for (const auto* ranges : {&cats[c].ports, &cats[c].fallback}) {
      auto& map = (ranges == &cats[c].ports) ? explicit_map : fallback_map;
      for (const PortRange& r : *ranges) {
        if (r.lo > r.hi) fail(Errc::InvalidConfig, "port range lo > hi in " + cats[c].name);
        for (std::uint32_t p = r.lo; p <= r.hi; ++p) {
          if (map[p] != kNoCategory) {
            fail(Errc::InvalidConfig, std::string(side) + " port " + std::to_string(p) +
                                          " claimed by both " + cats[map[p]].name + " and " +
                                          cats[c].name);
          }
          map[p] = static_cast<std::uint16_t>(c);
        }
      }
    }
  }
  for (std::uint32_t p = 0; p < 65536; ++p) {
    if (explicit_map[p] == kNoCategory) explicit_map[p] = fallback_map[p];
    if (explicit_map[p] == kNoCategory) {
      fail(Errc::InvalidConfig,
           std::string(side) + " port " + std::to_string(p) + " maps to no category");
    }
  }
  return explicit_map;
}

std::vector<PortRange> parse_ranges(const nlohmann::json& j) {
  std::vector<PortRange> out;
  for (const auto& item : j) {
    auto port = [](const nlohmann::json& v) {
      const auto x = v.get<std::int64_t>();
      if (x < 0 || x > 65535) fail(Errc::InvalidConfig, "port out of range in vocabulary");
      return static_cast<std::uint16_t>(x);
    };
    if (item.is_array()) {
      if (item.size() != 2) fail(Errc::InvalidConfig, "port range must be [lo, hi]");
      out.push_back({port(item[0]), port(item[1])});
    } else {
      const auto p = port(item);
      out.push_back({p, p});
    }
  }
  return out;
}

nlohmann::json ranges_json(const std::vector<PortRange>& ranges) {
  auto arr = nlohmann::json::array();
  for (const auto& r : ranges) {
    if (r.lo == r.hi)
      arr.push_back(r.lo);
    else
      arr.push_back({r.lo, r.hi});
  }
  return arr;
}

}  // namespace

// ---- vocabulary ------------------------------------------------------------------

PortVocabulary PortVocabulary::defaults() {
  PortVocabulary v;
  v.src_ = base_categories();
  v.dst_ = base_categories();
  v.dst_.push_back(named("dhcp6", {{546, 547}}));
  v.build();
  return v;
}

PortVocabulary PortVocabulary::from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) fail(Errc::InvalidConfig, "vocabulary must be a JSON list");
  PortVocabulary v;
  try {
    for (const auto& entry : doc) {
      PortCategory cat;
      cat.name = entry.at("name").get<std::string>();
      const auto side = entry.value("side", std::string("both"));
      if (entry.contains("ports")) cat.ports = parse_ranges(entry["ports"]);
      if (entry.contains("fallback")) cat.fallback = parse_ranges(entry["fallback"]);
      for (const auto& [key, _] : entry.items()) {
        if (key != "name" && key != "side" && key != "ports" && key != "fallback") {
          fail(Errc::InvalidConfig, "unknown vocabulary key '" + key + "'");
        }
      }
      if (side == "src" || side == "both") v.src_.push_back(cat);
      if (side == "dst" || side == "both") v.dst_.push_back(cat);
      if (side != "src" && side != "dst" && side != "both") {
        fail(Errc::InvalidConfig, "vocabulary side must be src, dst or both");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, std::string("vocabulary: ") + e.what());
  }
  v.build();
  return v;
}

PortVocabulary PortVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open vocabulary " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::InvalidConfig, std::string("vocabulary: ") + e.what());
  }
}

nlohmann::json PortVocabulary::to_json() const {
  auto doc = nlohmann::json::array();
  auto emit = [&doc](const PortCategory& c, const char* side) {
    nlohmann::json e = {{"name", c.name}, {"side", side}};
    if (!c.ports.empty()) e["ports"] = ranges_json(c.ports);
    if (!c.fallback.empty()) e["fallback"] = ranges_json(c.fallback);
    doc.push_back(std::move(e));
  };
  for (const auto& c : src_) emit(c, "src");
  for (const auto& c : dst_) emit(c, "dst");
  return doc;
}

void PortVocabulary::build() {
  if (src_.size() + dst_.size() != kPortCategoryTotal) {
    fail(Errc::InvalidConfig, "port vocabulary has " + std::to_string(src_.size()) + " + " +
                                  std::to_string(dst_.size()) + " categories; edge width " +
                                  std::to_string(kEdgeFeatureCount) + " requires " +
                                  std::to_string(kPortCategoryTotal));
  }
  src_lookup_ = build_lookup(src_, "src");
  dst_lookup_ = build_lookup(dst_, "dst");
}

std::size_t PortVocabulary::index_of(std::string_view name, PortSide side) const {
  const auto& cats = categories(side);
  for (std::size_t i = 0; i < cats.size(); ++i)
    if (cats[i].name == name) return i;
  fail(Errc::InvalidArgument, "no port category named '" + std::string(name) + "'");
}

std::size_t port_category(std::uint16_t port, PortSide side, const PortVocabulary& vocab) {
  return vocab.category(port, side);
}

// ---- names -------------------------------------------------------------------------

std::vector<std::string> edge_feature_names(const PortVocabulary& vocab) {
  std::vector<std::string> names = {"duration", "dur_zero", "pkts",      "bytes",
                                    "bytes_per_pkt", "pps", "bps",       "size_min",
                                    "size_max", "size_mean", "size_var", "iat_mean",
                                    "iat_std",  "iat_min",  "iat_max"};
  for (const char* dir : {"dir_a2b_", "dir_b2a_"}) {
    for (const char* f : {"pkts", "bytes", "pps", "bps", "size_mean", "size_var", "size_min",
                          "size_max", "iat_mean", "iat_std", "iat_min", "iat_max"}) {
      names.push_back(std::string(dir) + f);
    }
  }
  for (const char* p : {"proto_tcp", "proto_udp", "proto_icmp", "proto_icmpv6"}) names.push_back(p);
  for (const auto& c : vocab.categories(PortSide::Src)) names.push_back("src_port_cat_" + c.name);
  for (const auto& c : vocab.categories(PortSide::Dst)) names.push_back("dst_port_cat_" + c.name);
  return names;
}

const std::array<std::string, kNodeFeatureCount>& node_feature_names() {
  static const std::array<std::string, kNodeFeatureCount> names = {
      "bytes_out",      "pkts_out",       "bytes_in",          "pkts_in",
      "mean_bytes_out", "std_bytes_out",  "mean_bytes_in",     "std_bytes_in",
      "mean_bps_out",   "mean_pps_out",   "mean_bps_in",       "mean_pps_in",
      "tcp_flag",       "udp_flag",       "icmp_flag",         "ratio_bytes_out_in",
      "ratio_flows_out_in"};
  return names;
}

// ---- edge features ------------------------------------------------------------------

namespace {

void direction_block(const DirectionStats& d, double duration, double* out) {
  if (d.packets() == 0) {
    std::fill(out, out + kDirBlockSize, 0.0);
    return;
  }
  const double pkts = static_cast<double>(d.packets());
  out[0] = pkts;
  out[1] = d.bytes();
  out[2] = rate(pkts, duration);
  out[3] = rate(d.bytes(), duration);
  out[4] = d.sizes.mean();
  out[5] = d.sizes.variance();
  out[6] = d.sizes.min;
  out[7] = d.sizes.max;
  out[8] = d.iats.mean();
  out[9] = d.iats.stddev();
  out[10] = d.iats.n ? d.iats.min : 0.0;
  out[11] = d.iats.n ? d.iats.max : 0.0;
}

}  // namespace

std::vector<double> edge_features(const FlowRecord& flow, const PortVocabulary& vocab) {
  std::vector<double> e(kEdgeFeatureCount, 0.0);
  const double duration = flow.duration;
  const double pkts = static_cast<double>(flow.packets());
  const double bytes = flow.bytes();

  e[0] = duration;
  e[1] = duration > 0.0 ? 0.0 : 1.0;
  e[2] = pkts;
  e[3] = bytes;
  e[4] = pkts > 0 ? bytes / pkts : 0.0;
  e[5] = rate(pkts, duration);
  e[6] = rate(bytes, duration);

  RunningStats sizes = flow.a2b.sizes;
  sizes.merge(flow.b2a.sizes);
  e[7] = sizes.n ? sizes.min : 0.0;
  e[8] = sizes.n ? sizes.max : 0.0;
  e[9] = sizes.mean();
  e[10] = sizes.variance();

  e[11] = flow.iats.mean();
  e[12] = flow.iats.stddev();
  e[13] = flow.iats.n ? flow.iats.min : 0.0;
  e[14] = flow.iats.n ? flow.iats.max : 0.0;

  direction_block(flow.a2b, duration, e.data() + kDirA2BOffset);
  direction_block(flow.b2a, duration, e.data() + kDirB2AOffset);

  e[kProtoOffset + static_cast<std::size_t>(flow.key.proto)] = 1.0;
  const std::size_t dst_offset = kSrcPortOffset + vocab.size(PortSide::Src);
  e[kSrcPortOffset + vocab.category(flow.initiator().port, PortSide::Src)] = 1.0;
  e[dst_offset + vocab.category(flow.responder().port, PortSide::Dst)] = 1.0;
  return e;
}

// ---- node features ------------------------------------------------------------------

namespace {

struct Sample {
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t n = 0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double stddev() const { return n ? std::sqrt(std::max(0.0, m2 / static_cast<double>(n))) : 0.0; }
};

}  // namespace

std::array<double, kNodeFeatureCount> node_features(const IpAddress& device,
                                                    std::span<const FlowRecord* const> flows) {
  double bytes_out = 0, pkts_out = 0, bytes_in = 0, pkts_in = 0;
  Sample out_bytes, in_bytes, bps_out, pps_out, bps_in, pps_in;
  bool tcp = false, udp = false, icmp = false;
  double initiated = 0, received = 0;

  for (const FlowRecord* f : flows) {
    const bool is_lo = f->key.lo.ip == device;
    const bool is_hi = f->key.hi.ip == device;
    if (!is_lo && !is_hi) {
      fail(Errc::InvalidArgument, "flow does not involve device " + device.to_string());
    }
    for (int role = 0; role < 2; ++role) {
      const bool as_lo = role == 0;
      if (as_lo ? !is_lo : !is_hi) continue;
      const DirectionStats& out = as_lo ? f->a2b : f->b2a;
      const DirectionStats& in = as_lo ? f->b2a : f->a2b;
      bytes_out += out.bytes();
      pkts_out += static_cast<double>(out.packets());
      bytes_in += in.bytes();
      pkts_in += static_cast<double>(in.packets());
      out_bytes.add(out.bytes());
      in_bytes.add(in.bytes());
      bps_out.add(rate(out.bytes(), f->duration));
      pps_out.add(rate(static_cast<double>(out.packets()), f->duration));
      bps_in.add(rate(in.bytes(), f->duration));
      pps_in.add(rate(static_cast<double>(in.packets()), f->duration));
      if (f->initiator_is_lo == as_lo)
        initiated += 1;
      else
        received += 1;
    }
    switch (f->key.proto) {
      case Protocol::Tcp: tcp = true; break;
      case Protocol::Udp: udp = true; break;
      case Protocol::Icmp:
      case Protocol::Icmpv6: icmp = true; break;
    }
  }

  return {bytes_out,
          pkts_out,
          bytes_in,
          pkts_in,
          out_bytes.mean,
          out_bytes.stddev(),
          in_bytes.mean,
          in_bytes.stddev(),
          bps_out.mean,
          pps_out.mean,
          bps_in.mean,
          pps_in.mean,
          tcp ? 1.0 : 0.0,
          udp ? 1.0 : 0.0,
          icmp ? 1.0 : 0.0,
          (bytes_out + 1.0) / (bytes_in + 1.0),
          (initiated + 1.0) / (received + 1.0)};
}

// ---- standardization ------------------------------------------------------------------

Standardizer Standardizer::fit(const diff::Matrix& data) {
  Standardizer s;
  const std::size_t n = data.rows(), k = data.cols();
  s.mean.assign(k, 0.0);
  s.scale.assign(k, 1.0);
  if (n == 0) return s;
  for (std::size_t c = 0; c < k; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < n; ++r) m += data(r, c);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t r = 0; r < n; ++r) v += (data(r, c) - m) * (data(r, c) - m);
    v /= static_cast<double>(n);
    s.mean[c] = m;
    s.scale[c] = v > 1e-24 ? std::sqrt(v) : 1.0;
  }
  return s;
}

diff::Matrix Standardizer::apply(const diff::Matrix& data) const {
  if (data.cols() != mean.size()) {
    fail(Errc::ShapeMismatch, "standardizer fitted on " + std::to_string(mean.size()) +
                                  " columns, got " + std::to_string(data.cols()));
  }
  diff::Matrix out(data.rows(), data.cols());
  for (std::size_t r = 0; r < data.rows(); ++r)
    for (std::size_t c = 0; c < data.cols(); ++c) out(r, c) = (data(r, c) - mean[c]) / scale[c];
  return out;
}

}  // namespace flowscope
