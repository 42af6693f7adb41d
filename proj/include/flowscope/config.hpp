#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "flowscope/explain.hpp"
#include "flowscope/ingest.hpp"
#include "flowscope/model.hpp"
#include "flowscope/synthgen.hpp"
#include "flowscope/train.hpp"

namespace flowscope {

/// Whole-pipeline configuration, read from a TOML-style file with sections
/// synth, ingest, featurize, model, train, explain, eval and export. Every
/// key is optional; unknown sections or keys are rejected.
///
/// All randomness derives from the top-level `seed`, so the per-stage seeds
/// (train.seed, explain.seed, the scenario seed) are not settable.
struct PipelineConfig {
  std::uint64_t seed = 0;
  ScenarioConfig synth;

  struct Ingest {
    std::string input;  // empty: <out>/packets.csv
    bool sort = false;
    IngestOptions options;
  } ingest;

  struct Featurize {
    std::string vocab;  // empty: built-in vocabulary
    bool operator==(const Featurize&) const = default;
  } featurize;

  ModelConfig model = [] {
    ModelConfig m;
    m.classes.assign(kSynthClasses.begin(), kSynthClasses.end());
    return m;
  }();
  TrainConfig train;

  ExplainConfig explain;
  std::string explain_partition = "test_a";

  struct Eval {
    std::vector<std::string> partitions = {"test_a", "test_b", "test_c"};
    bool operator==(const Eval&) const = default;
  } eval;

  struct Export {
    std::vector<std::string> formats = {"svg", "csv"};
    int grid = 128;      // histogram bins per axis for contours
    double mass = 0.9;   // probability mass enclosed by each class contour
    int smooth = 4;      // box-blur radius in cells before thresholding
    bool operator==(const Export&) const = default;
  } export_;

  static PipelineConfig parse(std::string_view text);
  static PipelineConfig load(const std::filesystem::path& path);
  /// Canonical text: every key, fixed order, no comments.
  std::string to_toml() const;
  void validate() const;

  /// Stage configs with their seeds derived from `seed`.
  ScenarioConfig scenario() const;
  TrainConfig train_config() const;
  ExplainConfig explain_config() const;
  PortVocabulary vocabulary() const;

  /// Equal when the canonical texts are equal.
  bool operator==(const PipelineConfig& other) const { return to_toml() == other.to_toml(); }
};

}  // namespace flowscope
