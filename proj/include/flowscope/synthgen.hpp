#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowscope/ingest.hpp"
#include "flowscope/rng.hpp"

namespace flowscope {

inline constexpr std::array<std::string_view, 4> kSynthClasses = {"benign", "dos", "mirai_like",
                                                                  "recon"};

struct WeightedPort {
  std::uint16_t port = 0;
  double weight = 1.0;

  bool operator==(const WeightedPort&) const = default;
};

/// Generative parameters for the flows of one class. Sizes are log-normal,
/// inter-arrival gaps exponential, ports categorical.
struct ClassProfile {
  double packet_rate = 1.0;    // packets per second within a flow
  double min_gap = 0.01;       // seconds added to every exponential inter-arrival
  double size_median = 100.0;  // bytes
  double size_sigma = 0.2;     // log-space spread
  double duration_mean = 1.0;  // seconds, exponential, capped below the flow window
  double min_packets = 1.0;
  double max_packets = 1.0;
  double reply_prob = 0.0;  // chance a packet goes responder -> initiator
  double tcp_prob = 1.0;    // remainder is split udp / icmp by udp_share
  double udp_share = 1.0;
  std::vector<WeightedPort> ports;
  double random_port_prob = 0.0;  // uniform port in [1, 65535] instead of `ports`
  std::uint8_t tcp_flags = 0x18;

  bool operator==(const ClassProfile&) const = default;
};

/// Linear ramp of the mirai_like -> dos interpolation weight over normalized
/// time t in [0, 1].
struct Mimicry {
  double start = 0.0;
  double end = 0.0;

  double at(double t) const { return start + (end - start) * t; }
  bool operator==(const Mimicry&) const = default;
};

struct ScenarioConfig {
  std::uint64_t seed = 0;
  int n_devices = 40;
  int benign_flows = 1000;
  int dos_flows = 400;
  int mirai_flows = 300;
  int recon_flows = 300;
  double horizon = 3600.0;
  Mimicry mimicry;

  // Device roles, carved out of the address pool in this order; everything
  // left over is an ordinary IoT client.
  int servers = 4;
  int dos_attackers = 2;
  int mirai_bots = 2;
  int scanners = 2;
  int dos_victims = 3;
  int recon_targets = 3;  // hosts each scanner port-scans (vertical scan)

  ClassProfile benign = default_profile("benign");
  ClassProfile dos = default_profile("dos");
  ClassProfile mirai_like = default_profile("mirai_like");
  ClassProfile recon = default_profile("recon");

  static ClassProfile default_profile(std::string_view cls);

  void validate() const;
  bool operator==(const ScenarioConfig&) const = default;
};

/// mirai_like parameters moved a fraction m toward dos: geometric for scale
/// parameters, linear for probabilities; categorical choices mix (done at
/// sampling time, not here).
ClassProfile interpolate_profile(const ClassProfile& from, const ClassProfile& to, double m);

struct SynthFlowPlan {
  std::string label;
  double start = 0.0;
  IpAddress initiator;
  IpAddress responder;
};

struct LabeledStream {
  std::vector<PacketEvent> packets;  // sorted by ts
  std::vector<SynthFlowPlan> flows;  // one per generated flow, in start order
};

IpAddress device_address(int index);

LabeledStream generate(const ScenarioConfig& config);

}  // namespace flowscope
