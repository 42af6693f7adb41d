#pragma once

// Packet events -> terminated bidirectional flows.
//
// Both directions of a session share one canonical key: the two (ip, port)
// endpoints ordered lexicographically on (ip bytes, port). A flow is flushed
// when a packet for its key arrives strictly more than `max_duration` seconds
// after the flow started; the arriving packet then opens a fresh flow.

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace flowscope {

enum class Protocol : std::uint8_t { Tcp = 0, Udp = 1, Icmp = 2, Icmpv6 = 3 };
inline constexpr std::size_t kProtocolCount = 4;

std::string_view protocol_name(Protocol p) noexcept;
Protocol parse_protocol(std::string_view text);

/// IPv4 (4 bytes) or IPv6 (16 bytes), compared as numeric byte tuples.
struct IpAddress {
  std::array<std::uint8_t, 16> bytes{};
  std::uint8_t length = 4;

  static IpAddress parse(std::string_view text);
  static IpAddress v4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d);
  std::string to_string() const;

  std::span<const std::uint8_t> octets() const { return {bytes.data(), length}; }
  std::strong_ordering operator<=>(const IpAddress& other) const;
  bool operator==(const IpAddress& other) const { return (*this <=> other) == 0; }
};

struct Endpoint {
  IpAddress ip;
  std::uint16_t port = 0;

  auto operator<=>(const Endpoint&) const = default;
  bool operator==(const Endpoint&) const = default;
};

struct PacketEvent {
  double ts = 0.0;
  Endpoint src;
  Endpoint dst;
  Protocol proto = Protocol::Tcp;
  std::uint32_t length = 0;
  std::optional<std::uint16_t> tcp_flags;
  std::string label;  // empty when unlabeled
};

struct FlowKey {
  Endpoint lo;
  Endpoint hi;
  Protocol proto = Protocol::Tcp;

  bool operator==(const FlowKey&) const = default;
};

struct FlowKeyHash {
  std::size_t operator()(const FlowKey& key) const noexcept;
};

FlowKey canonical_key(const PacketEvent& pkt);

/// count/sum/sum-of-squares/min/max accumulator; variance is the population one.
struct RunningStats {
  std::uint64_t n = 0;
  double sum = 0.0;
  double sumsq = 0.0;
  double min = 0.0;
  double max = 0.0;

  void add(double x);
  void merge(const RunningStats& other);
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double variance() const;
  double stddev() const;

  bool operator==(const RunningStats&) const = default;
};

struct DirectionStats {
  RunningStats sizes;  // one sample per packet (bytes)
  RunningStats iats;   // gaps between consecutive packets of this direction
  double last_arrival = 0.0;

  std::uint64_t packets() const { return sizes.n; }
  double bytes() const { return sizes.sum; }
  void add(double ts, std::uint32_t length);

  bool operator==(const DirectionStats&) const = default;
};

struct FlowState {
  FlowKey key;
  double start = 0.0;
  double last = 0.0;
  DirectionStats a2b;  // sent by key.lo
  DirectionStats b2a;  // sent by key.hi
  RunningStats iats;   // gaps between consecutive packets regardless of direction
  std::uint16_t tcp_flags = 0;
  bool initiator_is_lo = true;  // side that sent the first packet
  std::string label;

  std::uint64_t packets() const { return a2b.packets() + b2a.packets(); }
  double bytes() const { return a2b.bytes() + b2a.bytes(); }

  bool operator==(const FlowState&) const = default;
};

struct FlowRecord : FlowState {
  double duration = 0.0;

  const Endpoint& initiator() const { return initiator_is_lo ? key.lo : key.hi; }
  const Endpoint& responder() const { return initiator_is_lo ? key.hi : key.lo; }

  bool operator==(const FlowRecord&) const = default;
};

struct IngestOptions {
  double max_duration = 10.0;
  double out_of_order_slack = 0.0;
};

/// Active flow table for one packet stream. Single writer.
class FlowTable {
 public:
  explicit FlowTable(IngestOptions options = {}) : options_(options) {}

  /// Feeds one packet; returns flows that terminated because of it.
  std::vector<FlowRecord> ingest(const PacketEvent& pkt);
  /// Freezes and emits every active flow, ordered by start time then arrival.
  std::vector<FlowRecord> flush_all();

  std::size_t size() const noexcept { return active_.size(); }
  const IngestOptions& options() const noexcept { return options_; }

 private:
  struct Slot {
    FlowState state;
    std::uint64_t seq = 0;
  };

  IngestOptions options_;
  std::unordered_map<FlowKey, Slot, FlowKeyHash> active_;
  double latest_ts_ = -std::numeric_limits<double>::infinity();
  std::uint64_t next_seq_ = 0;
};

/// Runs a whole stream through a fresh table; result sorted by start time
/// (stable with respect to flow creation order).
std::vector<FlowRecord> segment_flows(std::span<const PacketEvent> packets,
                                      IngestOptions options = {});

// ---- file formats ------------------------------------------------------
inline constexpr std::string_view kPacketCsvHeader =
    "ts,src_ip,src_port,dst_ip,dst_port,proto,length,tcp_flags,label";

std::vector<PacketEvent> read_packets_csv(std::istream& in);
std::vector<PacketEvent> read_packets_jsonl(std::istream& in);
/// Dispatches on extension: .jsonl/.ndjson -> JSON lines, otherwise CSV.
std::vector<PacketEvent> read_packets(const std::filesystem::path& path);
void write_packets_csv(std::ostream& out, std::span<const PacketEvent> packets);
/// Stable sort by timestamp (the CLI's --sort preprocessing).
void sort_packets(std::vector<PacketEvent>& packets);

void write_flows_csv(std::ostream& out, std::span<const FlowRecord> flows);
std::vector<FlowRecord> read_flows_csv(std::istream& in);

}  // namespace flowscope
