#pragma once

#include <cstdint>
#include <vector>

#include "cmr/failure/failure_set.hpp"
#include "cmr/volume.hpp"

namespace cmr::detect {

inline constexpr int kMinCrop = 80;

/// Rectangle in slice coordinates; may extend past the slice, where the crop
/// is zero-filled.
struct CropRect {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;
  bool operator==(const CropRect&) const = default;
};

/// Crop geometry around the automatic segmentation: each side is
/// max(min_size, bbox side rounded up to a multiple of `multiple`); empty
/// masks give a centred min_size x min_size crop.
CropRect detection_crop_rect(const Slice2D<std::uint8_t>& auto_seg, int min_size = kMinCrop, int multiple = 8);

template <typename T>
Slice2D<T> crop(const Slice2D<T>& src, const CropRect& r, T fill = T{}) {
  Slice2D<T> out(r.height, r.width, fill);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) {
      const int sy = r.row + y;
      const int sx = r.col + x;
      if (src.contains(sy, sx)) out(y, x) = src(sy, sx);
    }
  return out;
}

struct DetectionCrop {
  Slice2D<float> image;
  Slice2D<float> umap;
  CropRect rect;
};

DetectionCrop crop_for_detection(const Slice2D<float>& image, const Slice2D<float>& umap,
                                 const Slice2D<std::uint8_t>& auto_seg, int min_size = kMinCrop, int multiple = 8);

/// Weight for positive patches: mean per-volume % negative patches divided
/// by mean per-volume % positive patches. Each entry is one volume's
/// (positives, total patches).
double compute_w_pos(const std::vector<std::pair<long long, long long>>& per_volume_counts);
double compute_w_pos(const std::vector<failure::FailureSet>& failure_sets);

/// Probabilities of one slice's region grid.
struct SliceDetection {
  int z = 0;
  CropRect rect;
  int patch_size = 8;
  int rows = 0;
  int cols = 0;
  std::vector<float> probs;

  float prob(int r, int c) const { return probs[static_cast<std::size_t>(r) * cols + c]; }
  float max_prob() const;
};

struct FlaggedRegion {
  int z = 0;
  int grid_row = 0;
  int grid_col = 0;
  bool operator==(const FlaggedRegion&) const = default;
};

/// Voxel extent of a region in volume coordinates, [y0, y1) x [x0, x1).
struct VoxelRegion {
  int z = 0;
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;
};

struct DetectionResult {
  Shape3 volume_shape;
  std::vector<SliceDetection> slices;
  double decision_threshold = 0.5;
  std::vector<FlaggedRegion> flagged_regions;
};

/// Recomputes flagged_regions: prob >= threshold and overlapping the slice.
void apply_threshold(DetectionResult& result, double threshold);

/// Region extent clipped to the volume. Empty when fully outside.
VoxelRegion region_extent(const DetectionResult& result, const FlaggedRegion& region);
std::vector<VoxelRegion> flagged_voxel_regions(const DetectionResult& result);

/// Voxels covered by flagged regions.
MaskVolume region_mask(const DetectionResult& result);

}  // namespace cmr::detect
