#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowscope/diffmath.hpp"
#include "flowscope/ingest.hpp"

namespace flowscope {

inline constexpr std::size_t kEdgeFeatureCount = 98;
inline constexpr std::size_t kNodeFeatureCount = 17;
// global(7) + sizing(4) + iat(4) + two directional blocks(12 each) + proto(4)
inline constexpr std::size_t kEdgeNumericCount = 43;
inline constexpr std::size_t kPortCategoryTotal = kEdgeFeatureCount - kEdgeNumericCount;

// Offsets into the edge vector.
inline constexpr std::size_t kDirA2BOffset = 15;
inline constexpr std::size_t kDirB2AOffset = 27;
inline constexpr std::size_t kDirBlockSize = 12;
inline constexpr std::size_t kProtoOffset = 39;
inline constexpr std::size_t kSrcPortOffset = 43;

enum class PortSide { Src, Dst };

struct PortRange {
  std::uint16_t lo = 0;
  std::uint16_t hi = 0;
  bool contains(std::uint16_t p) const { return p >= lo && p <= hi; }
};

/// A named service category. `ports` are explicit claims; `fallback` ranges
/// catch ports in range that no explicit claim covers (ephemeral, registered,
/// unknown).
struct PortCategory {
  std::string name;
  std::vector<PortRange> ports;
  std::vector<PortRange> fallback;
};

class PortVocabulary {
 public:
  /// 27 source categories, 28 destination categories (the extra one is dhcp6).
  static PortVocabulary defaults();
  /// JSON list of {name, side: src|dst|both, ports: [p | [lo, hi]], fallback: [...]}.
  static PortVocabulary from_json(const nlohmann::json& doc);
  static PortVocabulary load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::vector<PortCategory>& categories(PortSide side) const {
    return side == PortSide::Src ? src_ : dst_;
  }
  std::size_t size(PortSide side) const { return categories(side).size(); }
  std::size_t category(std::uint16_t port, PortSide side) const {
    return (side == PortSide::Src ? src_lookup_ : dst_lookup_)[port];
  }
  std::size_t index_of(std::string_view name, PortSide side) const;

 private:
  void build();

  std::vector<PortCategory> src_;
  std::vector<PortCategory> dst_;
  std::vector<std::uint16_t> src_lookup_;
  std::vector<std::uint16_t> dst_lookup_;
};

std::size_t port_category(std::uint16_t port, PortSide side, const PortVocabulary& vocab);

std::vector<std::string> edge_feature_names(const PortVocabulary& vocab);
const std::array<std::string, kNodeFeatureCount>& node_feature_names();

/// The edge vector for one flow, in canonical column order. The source-port
/// category is taken from the flow initiator's port, the destination one from
/// the responder's.
std::vector<double> edge_features(const FlowRecord& flow, const PortVocabulary& vocab);

/// Aggregates the flows incident to `device`. A self-flow (device on both
/// sides) contributes once in each role. No flows -> zeros with ratios 1.
std::array<double, kNodeFeatureCount> node_features(const IpAddress& device,
                                                    std::span<const FlowRecord* const> flows);

/// Count per second with the zero-duration convention (count itself).
inline double rate(double count, double duration) {
  return duration > 0.0 ? count / duration : count;
}

/// Column-wise z-scoring fitted on one matrix (the training partition);
/// zero-variance columns keep scale 1.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const diff::Matrix& data);
  diff::Matrix apply(const diff::Matrix& data) const;
  std::size_t width() const { return mean.size(); }

  bool operator==(const Standardizer&) const = default;
};

}  // namespace flowscope
