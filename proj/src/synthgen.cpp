#include "flowscope/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "flowscope/error.hpp"

namespace flowscope {

namespace {

constexpr double kMaxFlowSpan = 9.5;  // seconds; keeps every flow inside one window
constexpr double kDurationCap = 9.0;

void check_profile(const ClassProfile& p, std::string_view name) {
  auto bad = [&](const std::string& msg) {
    fail(Errc::InvalidConfig, "synth profile " + std::string(name) + ": " + msg);
  };
  if (!(p.packet_rate > 0.0) || !(p.min_gap > 0.0) || !(p.size_median > 0.0) || !(p.size_sigma >= 0.0) ||
      !(p.duration_mean > 0.0)) {
    bad("rates, sizes and durations must be positive");
  }
  if (!(p.min_packets >= 1.0) || !(p.max_packets >= p.min_packets)) {
    bad("need 1 <= min_packets <= max_packets");
  }
  for (double prob : {p.reply_prob, p.tcp_prob, p.udp_share, p.random_port_prob}) {
    if (!(prob >= 0.0 && prob <= 1.0)) bad("probabilities must lie in [0, 1]");
  }
  if (p.ports.empty() && p.random_port_prob < 1.0) bad("no ports to choose from");
  for (const auto& wp : p.ports) {
    if (!(wp.weight > 0.0)) bad("port weights must be positive");
  }
}

double geometric(double a, double b, double m) {
  return std::exp((1.0 - m) * std::log(a) + m * std::log(b));
}

double linear(double a, double b, double m) { return (1.0 - m) * a + m * b; }

double sum_weights(const std::vector<WeightedPort>& ports) {
  double s = 0.0;
  for (const auto& p : ports) s += p.weight;
  return s;
}

std::uint16_t draw_port(const ClassProfile& p, Rng& rng) {
  if (p.ports.empty() || rng.uniform() < p.random_port_prob) {
    return static_cast<std::uint16_t>(1 + rng.index(65535));
  }
  std::vector<double> w;
  w.reserve(p.ports.size());
  for (const auto& wp : p.ports) w.push_back(wp.weight);
  return p.ports[rng.categorical(w)].port;
}

template <class T>
const T& pick(const std::vector<T>& pool, Rng& rng) {
  return pool[rng.index(pool.size())];
}

}  // namespace

ClassProfile ScenarioConfig::default_profile(std::string_view cls) {
  ClassProfile p;
  if (cls == "benign") {
    p.packet_rate = 4.0;
    p.size_median = 300.0;
    p.size_sigma = 0.6;
    p.duration_mean = 4.0;
    p.min_packets = 2;
    p.max_packets = 60;
    p.reply_prob = 0.45;
    p.tcp_prob = 0.8;
    p.udp_share = 1.0;
    p.ports = {{443, 5}, {80, 2}, {1883, 2}, {8883, 1}, {53, 1}, {123, 1}};
    p.tcp_flags = 0x18;
  } else if (cls == "dos") {
    p.packet_rate = 80.0;
    p.min_gap = 0.001;
    p.size_median = 64.0;
    p.size_sigma = 0.1;
    p.duration_mean = 2.5;
    p.min_packets = 20;
    p.max_packets = 600;
    p.reply_prob = 0.02;
    p.tcp_prob = 0.6;
    p.udp_share = 1.0;
    p.ports = {{80, 3}, {53, 1}, {443, 1}};
    p.random_port_prob = 0.1;
    p.tcp_flags = 0x02;
  } else if (cls == "mirai_like") {
    // Horizontal telnet sweep; flow-level shape matches recon.
    p.packet_rate = 2.0;
    p.size_median = 60.0;
    p.size_sigma = 0.05;
    p.duration_mean = 0.3;
    p.min_packets = 1;
    p.max_packets = 2;
    p.reply_prob = 0.35;
    p.tcp_prob = 1.0;
    p.ports = {{23, 3}, {2323, 1}};
    p.random_port_prob = 0.35;
    p.tcp_flags = 0x02;
  } else if (cls == "recon") {
    // Vertical port scan of a few hosts.
    p.packet_rate = 2.0;
    p.size_median = 60.0;
    p.size_sigma = 0.05;
    p.duration_mean = 0.3;
    p.min_packets = 1;
    p.max_packets = 1;
    p.reply_prob = 0.35;
    p.tcp_prob = 0.9;
    p.udp_share = 0.5;
    p.ports = {{22, 1}, {23, 1}, {80, 1}, {443, 1}, {2323, 1}, {8080, 1}};
    p.random_port_prob = 0.85;
    p.tcp_flags = 0x02;
  } else {
    fail(Errc::InvalidConfig, "unknown synthetic class '" + std::string(cls) + "'");
  }
  return p;
}

void ScenarioConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(Errc::InvalidConfig, "synth: " + msg); };
  if (benign_flows < 0 || dos_flows < 0 || mirai_flows < 0 || recon_flows < 0) {
    bad("flow counts must be >= 0");
  }
  if (!(horizon > 0.0)) bad("horizon must be > 0");
  if (!(mimicry.start >= 0.0 && mimicry.start <= 1.0 && mimicry.end >= mimicry.start &&
        mimicry.end <= 1.0)) {
    bad("mimicry needs 0 <= start <= end <= 1");
  }
  if (servers < 1 || dos_attackers < 1 || mirai_bots < 1 || scanners < 1 || dos_victims < 1) {
    bad("every device role needs at least one device");
  }
  const int clients = n_devices - servers - dos_attackers - mirai_bots - scanners;
  if (clients < dos_victims || clients < 1) bad("n_devices too small for the configured roles");
  if (recon_targets < 1 || recon_targets > clients + servers) bad("recon_targets out of range");
  if (n_devices > 65000) bad("n_devices must fit in 10.0.0.0/16");
  check_profile(benign, "benign");
  check_profile(dos, "dos");
  check_profile(mirai_like, "mirai_like");
  check_profile(recon, "recon");
}

ClassProfile interpolate_profile(const ClassProfile& from, const ClassProfile& to, double m) {
  if (m <= 0.0) return from;
  if (m >= 1.0) return to;
  ClassProfile p;
  p.packet_rate = geometric(from.packet_rate, to.packet_rate, m);
  p.min_gap = geometric(from.min_gap, to.min_gap, m);
  p.size_median = geometric(from.size_median, to.size_median, m);
  p.size_sigma = linear(from.size_sigma, to.size_sigma, m);
  p.duration_mean = geometric(from.duration_mean, to.duration_mean, m);
  p.min_packets = geometric(from.min_packets, to.min_packets, m);
  p.max_packets = geometric(from.max_packets, to.max_packets, m);
  p.reply_prob = linear(from.reply_prob, to.reply_prob, m);
  p.tcp_prob = linear(from.tcp_prob, to.tcp_prob, m);
  p.udp_share = linear(from.udp_share, to.udp_share, m);
  // Port law is the mixture (1 - m) D_from + m D_to, rewritten as one
  // uniform-or-categorical law.
  p.random_port_prob = linear(from.random_port_prob, to.random_port_prob, m);
  std::map<std::uint16_t, double> mixed;
  const double sf = sum_weights(from.ports), st = sum_weights(to.ports);
  for (const auto& wp : from.ports) {
    mixed[wp.port] += (1.0 - m) * (1.0 - from.random_port_prob) * wp.weight / sf;
  }
  for (const auto& wp : to.ports) {
    mixed[wp.port] += m * (1.0 - to.random_port_prob) * wp.weight / st;
  }
  for (const auto& [port, w] : mixed) {
    if (w > 0.0) p.ports.push_back({port, w});
  }
  p.tcp_flags = m < 0.5 ? from.tcp_flags : to.tcp_flags;
  return p;
}

IpAddress device_address(int index) {
  const int host = index + 1;
  return IpAddress::v4(10, 0, static_cast<std::uint8_t>(host >> 8),
                      static_cast<std::uint8_t>(host & 255));
}

LabeledStream generate(const ScenarioConfig& config) {
  config.validate();

  std::vector<IpAddress> servers, dos_attackers, bots, scanners, clients, victims;
  {
    int next = 0;
    auto take = [&](int count, std::vector<IpAddress>& pool) {
      for (int i = 0; i < count; ++i) pool.push_back(device_address(next++));
    };
    take(config.servers, servers);
    take(config.dos_attackers, dos_attackers);
    take(config.mirai_bots, bots);
    take(config.scanners, scanners);
    take(config.n_devices - next, clients);
    victims.assign(clients.begin(), clients.begin() + config.dos_victims);
  }
  std::vector<IpAddress> scan_targets = servers;
  scan_targets.insert(scan_targets.end(), clients.begin(), clients.end());
  // Each scanner keeps its own small target list for the whole run.
  std::vector<std::vector<IpAddress>> recon_lists;
  {
    Rng pick_rng(mix_seed(config.seed, 0x7265636f6e));
    for (int s = 0; s < config.scanners; ++s) {
      std::vector<IpAddress> pool = scan_targets;
      pick_rng.shuffle(std::span<IpAddress>(pool));
      pool.resize(static_cast<std::size_t>(config.recon_targets));
      recon_lists.push_back(std::move(pool));
    }
  }

  // Flow starts first, so every flow's draws come from its own stream and the
  // schedule is independent of how many packets earlier flows produced.
  struct Planned {
    std::string_view label;
    double start;
    std::size_t id;
  };
  std::vector<Planned> planned;
  Rng schedule(mix_seed(config.seed, 0));
  const std::array<int, 4> counts = {config.benign_flows, config.dos_flows, config.mirai_flows,
                                     config.recon_flows};
  for (std::size_t c = 0; c < kSynthClasses.size(); ++c) {
    for (int i = 0; i < counts[c]; ++i) {
      planned.push_back({kSynthClasses[c], schedule.uniform(0.0, config.horizon), planned.size()});
    }
  }
  std::stable_sort(planned.begin(), planned.end(),
                   [](const Planned& a, const Planned& b) { return a.start < b.start; });

  LabeledStream out;
  std::map<IpAddress, std::uint32_t> next_port;
  for (const auto& plan : planned) {
    Rng rng(mix_seed(config.seed, 1 + plan.id));
    const double m = std::clamp(config.mimicry.at(plan.start / config.horizon), 0.0, 1.0);

    ClassProfile profile;
    IpAddress initiator, responder;
    if (plan.label == "benign") {
      profile = config.benign;
      initiator = pick(clients, rng);
      responder = pick(servers, rng);
    } else if (plan.label == "dos") {
      profile = config.dos;
      initiator = pick(dos_attackers, rng);
      responder = pick(victims, rng);
    } else if (plan.label == "recon") {
      profile = config.recon;
      const std::size_t s = rng.index(scanners.size());
      initiator = scanners[s];
      responder = pick(recon_lists[s], rng);
    } else {
      profile = interpolate_profile(config.mirai_like, config.dos, m);
      initiator = pick(bots, rng);
      responder = rng.uniform() < m ? pick(victims, rng) : pick(scan_targets, rng);
    }

    Protocol proto = Protocol::Tcp;
    if (rng.uniform() >= profile.tcp_prob) {
      proto = rng.uniform() < profile.udp_share ? Protocol::Udp : Protocol::Icmp;
    }
    // The initiator's port (an echo identifier for icmp) is unique per device,
    // so no two generated flows share a canonical key.
    auto [it, _] = next_port.emplace(initiator, 0u);
    const auto sport = static_cast<std::uint16_t>(49152 + it->second % 16384);
    ++it->second;
    const std::uint16_t dport = proto == Protocol::Icmp ? 0 : draw_port(profile, rng);

    const double duration =
        std::min(rng.exponential(1.0 / profile.duration_mean), kDurationCap);
    const auto min_packets = static_cast<std::size_t>(std::llround(profile.min_packets));
    const auto max_packets = static_cast<std::size_t>(std::llround(profile.max_packets));
    const double log_median = std::log(profile.size_median);

    const Endpoint a{initiator, sport}, b{responder, dport};
    double offset = 0.0;
    for (std::size_t n = 0; n < max_packets; ++n) {
      if (n > 0) {
        offset += profile.min_gap + rng.exponential(profile.packet_rate);
        if (offset > kMaxFlowSpan || (n >= min_packets && offset > duration)) break;
      }
      const bool reply = n > 0 && rng.uniform() < profile.reply_prob;
      PacketEvent pkt;
      pkt.ts = std::round((plan.start + offset) * 1e6) / 1e6;
      pkt.src = reply ? b : a;
      pkt.dst = reply ? a : b;
      pkt.proto = proto;
      const double size = std::exp(rng.normal(log_median, profile.size_sigma));
      pkt.length = static_cast<std::uint32_t>(std::clamp(std::llround(size), 40LL, 1500LL));
      if (proto == Protocol::Tcp) pkt.tcp_flags = profile.tcp_flags;
      pkt.label = std::string(plan.label);
      out.packets.push_back(std::move(pkt));
    }
    out.flows.push_back({std::string(plan.label), plan.start, initiator, responder});
  }
  std::stable_sort(out.packets.begin(), out.packets.end(),
                   [](const PacketEvent& x, const PacketEvent& y) { return x.ts < y.ts; });
  return out;
}

}  // namespace flowscope
