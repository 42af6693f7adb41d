#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "flowscope/diffmath.hpp"
#include "flowscope/featurize.hpp"
#include "flowscope/ingest.hpp"

namespace flowscope {

inline constexpr std::string_view kBenignLabel = "benign";

/// Devices as nodes, one edge per flow (parallel edges allowed). Edge k runs
/// from the flow initiator `src[k]` to the responder `dst[k]`. Features are
/// raw (unstandardized).
struct GraphSnapshot {
  std::vector<std::string> node_ids;
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  diff::Matrix x;  // N x 17
  diff::Matrix e;  // M x 98
  std::vector<std::string> edge_labels;
  std::vector<double> edge_times;
  double window_start = 0.0;
  double window_end = 0.0;

  std::size_t num_nodes() const { return node_ids.size(); }
  std::size_t num_edges() const { return src.size(); }
  bool operator==(const GraphSnapshot&) const = default;
};

GraphSnapshot build_snapshot(std::span<const FlowRecord> flows, const PortVocabulary& vocab);

/// Majority class over incident flows; a tie that includes benign resolves to
/// benign, other ties to the lexicographically smallest label. Nodes with no
/// labeled flow get "".
std::vector<std::string> node_labels(const GraphSnapshot& snapshot);
/// Same rule applied to an arbitrary per-edge labeling (e.g. predictions).
std::vector<std::string> majority_labels(const GraphSnapshot& snapshot,
                                         std::span<const std::string> edge_labels);

struct TemporalSplit {
  std::array<std::vector<std::size_t>, 4> parts;  // train, test A, test B, test C

  const std::vector<std::size_t>& train() const { return parts[0]; }
};

inline constexpr std::array<std::string_view, 4> kPartitionNames = {"train", "test_a", "test_b",
                                                                    "test_c"};

/// Four contiguous chunks of a start-time-sorted flow list; sizes differ by at
/// most one with the remainder going to the earliest chunks.
TemporalSplit temporal_split(std::span<const FlowRecord> flows_sorted);

/// nodes.csv + edges.csv + meta.json under `dir`.
void export_snapshot(const GraphSnapshot& snapshot, const PortVocabulary& vocab,
                     const std::filesystem::path& dir);
GraphSnapshot import_snapshot(const std::filesystem::path& dir);

}  // namespace flowscope
