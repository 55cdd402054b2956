#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmr/failure/failure_set.hpp"
#include "cmr/nn/detector.hpp"
#include "cmr/nn/segmentation.hpp"

namespace cmr::pipeline {

inline constexpr const char* kDatasetEnv = "CMR_DATASET_ROOT";

struct Seeds {
  std::uint64_t split = 0;
  std::uint64_t segmentation = 0;
  std::uint64_t detector = 0;
  std::uint64_t inference = 0;
};

struct ExperimentConfig {
  std::filesystem::path dataset_root;
  std::filesystem::path output_root;
  seg::Arch arch = seg::Arch::DRN;
  seg::LossKind loss = seg::LossKind::CrossEntropy;
  bool mc_enabled = true;
  int T = 10;
  unc::MapKind umap_kind = unc::MapKind::Entropy;
  failure::ToleranceSpec tolerance;
  int patch_size = 8;
  int k = 4;
  std::vector<int> folds;  // empty: all k folds
  Seeds seeds;
  nn::SegModelConfig segmentation = nn::SegModelConfig::defaults(seg::Arch::DRN, seg::LossKind::CrossEntropy);
  nn::DetectorConfig detector;
  double threshold = 0.5;

  std::vector<int> active_folds() const;
  /// Throws ConfigError describing the first violation.
  void validate() const;
};

/// Parses and validates a config document. Unknown keys and wrongly typed
/// values are configuration errors. Keys absent from the document keep the
/// published defaults for the chosen architecture and loss.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies `dotted.key=value` overrides to a config document. Values are
/// parsed as JSON when possible, otherwise taken as strings.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// 64-bit FNV-1a over the canonical (sorted-key) serialisation, as hex.
std::string config_hash(const ExperimentConfig& c);
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace cmr::pipeline
