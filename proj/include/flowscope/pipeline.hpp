#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowscope/graphbuild.hpp"
#include "flowscope/metrics.hpp"
#include "flowscope/train.hpp"

namespace flowscope {

inline constexpr std::string_view kEmbeddingCsvHeader =
    "entity_type,id,dim1,dim2,true_label,pred_label,partition";

/// One row of an embedding CSV. Edge ids are the flow's row index in the
/// snapshot; node ids are device addresses.
struct EmbeddingRow {
  std::string entity_type;  // "node" or "edge"
  std::string id;
  double dim1 = 0.0;
  double dim2 = 0.0;
  std::string true_label;  // node: majority class of incident flows ("" if none)
  std::string pred_label;  // empty for the autoencoder
  std::string partition;

  bool operator==(const EmbeddingRow&) const = default;
};

std::vector<EmbeddingRow> embedding_rows(const GraphSnapshot& snapshot, const Embedding& emb,
                                         std::string_view partition);
std::string embedding_csv(std::span<const EmbeddingRow> rows);
std::vector<EmbeddingRow> read_embedding_csv(const std::filesystem::path& path);

/// Coordinates and labels of one entity type, skipping rows without a true label.
struct EntityView {
  diff::Matrix coords;
  std::vector<std::string> labels;
  std::vector<std::string> preds;
};

EntityView entity_view(std::span<const EmbeddingRow> rows, std::string_view entity_type);

struct PartitionEmbeddings {
  std::string name;
  std::vector<EmbeddingRow> model;
  std::optional<std::vector<EmbeddingRow>> baseline;
};

/// Validity per partition and entity type, edge F1 when predictions exist,
/// and the drift table when test_a, test_b and test_c are all present.
EvalReport evaluate(std::span<const PartitionEmbeddings> partitions,
                    std::span<const std::string> classes);

}  // namespace flowscope
