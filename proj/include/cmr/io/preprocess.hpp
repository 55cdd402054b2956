#pragma once

#include <map>
#include <string>
#include <vector>

#include "cmr/io/study.hpp"

namespace cmr::io {

inline constexpr double kWorkingSpacingMm = 1.4;

/// In-plane size after resampling `n` voxels of `spacing` mm to `target` mm.
int resampled_extent(int n, double spacing, double target = kWorkingSpacingMm);

/// Per-volume min-max intensity scaling to [0, 1]. Throws DegenerateIntensity
/// when the volume is constant.
void rescale_intensity(ImageVolume& image);

ImageVolume resample_bilinear(const ImageVolume& src, int out_h, int out_w);
LabelVolume resample_nearest(const LabelVolume& src, int out_h, int out_w);

/// Intensity scaling plus in-plane resampling to 1.4 x 1.4 mm. The returned
/// study carries the geometry needed to map predictions back.
PatientStudy preprocess_volume(const PatientStudy& study);

/// Nearest-neighbour inverse of the in-plane resampling for label maps.
LabelVolume to_original_grid(const LabelVolume& working, const ResampleGeometry& geometry);
MaskVolume mask_to_original_grid(const MaskVolume& working, const ResampleGeometry& geometry);
/// Nearest-neighbour inverse for scalar maps (overlays).
ImageVolume image_to_original_grid(const ImageVolume& working, const ResampleGeometry& geometry);

/// Source index sampled by nearest-neighbour resampling of `src_n` samples
/// onto `dst_n` for output index `i`.
int nearest_source(int i, int src_n, int dst_n);

struct FoldSplit {
  int k = 4;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignments;

  std::vector<std::string> test_patients(int fold) const;
  std::vector<std::string> train_patients(int fold) const;
};

/// Patient-level stratified k-fold split; deterministic for a given seed.
FoldSplit make_stratified_folds(const std::vector<PatientStudy>& studies, int k, std::uint64_t seed);

/// Same split computed from (patient id, group) pairs only.
FoldSplit make_stratified_folds(const std::vector<std::pair<std::string, DiseaseGroup>>& patients, int k,
                                std::uint64_t seed);

}  // namespace cmr::io
