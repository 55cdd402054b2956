#pragma once

#include <cstdint>
#include <vector>

#include "cmr/volume.hpp"

namespace cmr::eval {

/// 2|A ∩ B| / (|A| + |B|) for class `c`; 1 when both masks are empty.
double dice_3d(const LabelVolume& pred, const LabelVolume& ref, std::uint8_t c);

/// Foreground voxels with at least one 6-neighbour outside the mask (the
/// volume border counts as outside).
std::vector<std::uint8_t> boundary_voxels(const std::vector<std::uint8_t>& mask, Shape3 shape);

/// Symmetric Hausdorff distance in mm between the boundary voxel sets of
/// class `c`. Throws UndefinedMetric if either mask is empty.
double hausdorff_3d(const LabelVolume& pred, const LabelVolume& ref, std::uint8_t c, const Spacing& spacing);

inline constexpr double kMyocardialDensity = 1.05;  // g/mL

struct ClinicalMetrics {
  double lv_edv = 0, lv_esv = 0, lv_ef = 0;
  double rv_edv = 0, rv_esv = 0, rv_ef = 0;
  double lvm_mass = 0;
};

/// Volumes in mL from voxel counts; EF in percent; LVM mass from the ED
/// myocardium at 1.05 g/mL.
ClinicalMetrics clinical_metrics(const LabelVolume& ed, const LabelVolume& es, const Spacing& spacing);

double structure_volume_ml(const LabelVolume& labels, std::uint8_t c, const Spacing& spacing);
double ejection_fraction(double edv, double esv);

struct Agreement {
  double pearson = 0;
  double bias = 0;
  double bias_sd = 0;
  double mae = 0;
};

/// Pearson correlation, mean (auto - reference) with sample SD, and MAE.
Agreement agreement_stats(const std::vector<double>& automatic, const std::vector<double>& reference);

/// Two-sided Mann-Whitney U test. Exact null distribution when both samples
/// have at most 20 values and there are no ties; otherwise the normal
/// approximation with tie and continuity correction.
double mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace cmr::eval
