#pragma once

#include <optional>
#include <vector>

#include "cmr/detect/geometry.hpp"
#include "cmr/volume.hpp"

namespace cmr::eval {

struct PrCurve {
  std::vector<double> thresholds;  // descending distinct scores
  std::vector<double> precision;
  std::vector<double> recall;
  double average_precision = 0.0;
};

/// Precision-recall over every distinct score threshold. AP uses all-points
/// interpolation: precision is replaced by its maximum at equal or higher
/// recall, then integrated over recall steps.
PrCurve precision_recall(const std::vector<double>& scores, const std::vector<bool>& labels);

/// Slice identification: score = max region probability of the slice,
/// positive = slice holds at least one failure voxel.
PrCurve slice_detection_pr(const std::vector<detect::DetectionResult>& detections,
                           const std::vector<MaskVolume>& failure_masks);

struct SensitivityPoint {
  double threshold = 0;
  std::optional<double> sensitivity;  // missing when there are no failure voxels
  double false_positive_regions = 0;  // mean per volume
};

/// Voxel-level detection rate against false-positive regions (flagged
/// regions holding no failure voxel), for each threshold.
std::vector<SensitivityPoint> voxel_sensitivity_vs_fp(const std::vector<detect::DetectionResult>& detections,
                                                      const std::vector<MaskVolume>& failure_masks,
                                                      const std::vector<double>& thresholds);

/// 0, 0.01, ..., 1.0 plus a value above 1 so the curve reaches zero flags.
std::vector<double> default_thresholds();

}  // namespace cmr::eval
