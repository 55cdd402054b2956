#pragma once

#include <utility>
#include <vector>

#include "cmr/nn/detector.hpp"
#include "cmr/pipeline/pipeline.hpp"

namespace cmr::pipeline::detail {

struct DetectionData {
  std::vector<nn::DetectionSlice> slices;
  std::vector<std::pair<long long, long long>> patch_counts;  // per volume
};

/// Held-out predictions of every fold except `fold`, with patch counts taken
/// on `patch_size` grids.
DetectionData detection_training_data(const Layout& layout, const ExperimentConfig& cfg, int fold, int patch_size);

std::uint64_t derived_seed(std::uint64_t base, std::string_view salt);

}  // namespace cmr::pipeline::detail
