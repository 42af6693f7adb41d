#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowscope/diffmath.hpp"

namespace flowscope {

/// Ground-truth labels act as cluster assignments. Both need at least two
/// distinct labels (SingleCluster otherwise).
///
/// Returns +infinity when two cluster centroids coincide.
double davies_bouldin(const diff::Matrix& points, std::span<const std::string> labels);
/// Mean of (b - a) / max(a, b); members of singleton clusters score 0.
double silhouette(const diff::Matrix& points, std::span<const std::string> labels);

struct F1Scores {
  double binary = 0.0;  // benign vs. every other class
  double macro = 0.0;
  double weighted = 0.0;
  std::map<std::string, double> per_class;
  std::map<std::string, std::size_t> support;

  bool operator==(const F1Scores&) const = default;
};

/// Per-class scores cover `classes` plus any further label seen in `y_true`.
/// A class with no true instances scores 0 and stays out of the macro mean.
F1Scores f1_suite(std::span<const std::string> y_true, std::span<const std::string> y_pred,
                  std::span<const std::string> classes);

// ---- drift -----------------------------------------------------------------------

struct PartitionEmbedding {
  std::string name;
  diff::Matrix coords;              // edge coordinates W
  std::vector<std::string> labels;  // true class per row
  F1Scores f1;
};

struct DriftRow {
  std::string cls;
  std::string partition;
  std::size_t count = 0;
  double f1 = 0.0;
  std::optional<std::array<double, 2>> centroid;  // absent when the class is absent
  std::optional<double> displacement;             // from the previous partition's centroid
};

struct DriftReport {
  std::vector<std::string> partitions;  // test_a, test_b, test_c
  std::vector<std::string> classes;
  std::vector<DriftRow> rows;           // partition-major
  /// Per partition, classes x classes centroid distances (NaN if a class is absent).
  std::vector<diff::Matrix> centroid_distances;

  const DriftRow& row(std::string_view cls, std::string_view partition) const;
  double distance(std::string_view partition, std::string_view a, std::string_view b) const;
};

/// Needs the test_a, test_b and test_c partitions (MissingPartition otherwise);
/// others are ignored.
DriftReport drift_report(std::span<const PartitionEmbedding> partitions,
                         std::span<const std::string> classes);

/// Per-class F1 with one column per partition (the drift table layout).
std::string drift_table_csv(const DriftReport& drift);

// ---- report ------------------------------------------------------------------------

struct Validity {
  double dbi = 0.0;         // NaN when undefined for the partition
  double silhouette = 0.0;  // NaN when undefined for the partition
};

/// Validity on one embedding; NaN fields when fewer than two classes are present.
Validity validity(const diff::Matrix& points, std::span<const std::string> labels);

struct PartitionReport {
  std::string name;
  std::size_t nodes = 0;
  std::size_t edges = 0;
  Validity node_model;
  Validity edge_model;
  std::optional<Validity> node_baseline;
  std::optional<Validity> edge_baseline;
  std::optional<F1Scores> f1;
};

struct EvalReport {
  std::vector<PartitionReport> partitions;
  std::optional<DriftReport> drift;

  nlohmann::ordered_json to_json() const;
  /// Long format: table,partition,entity,embedding,metric,class,value
  std::string to_csv() const;
};

}  // namespace flowscope
