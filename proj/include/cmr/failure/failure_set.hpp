#pragma once

#include <cstdint>
#include <vector>

#include "cmr/volume.hpp"

namespace cmr::failure {

/// Distances are in voxels of the 1.4 mm working grid.
struct ToleranceSpec {
  int outside_voxels = 3;
  int inside_voxels = 2;
  int min_cluster = 10;
  int connectivity = 4;

  void validate() const;
};

/// Boolean grid with one cell per non-overlapping patch of a slice.
struct PatchGrid {
  int rows = 0;
  int cols = 0;
  int patch_size = 8;
  std::vector<std::uint8_t> cells;

  bool operator()(int r, int c) const { return cells[static_cast<std::size_t>(r) * cols + c] != 0; }
  int positives() const;
  bool operator==(const PatchGrid&) const = default;
};

struct FailureSet {
  MaskVolume voxel_mask;             // 1 = segmentation failure
  std::vector<PatchGrid> patch_labels;  // one per slice, over the padded slice
  int patch_size = 8;
  ToleranceSpec spec;

  long long failure_voxels() const;
};

/// Euclidean distance (voxels) from each pixel to the nearest boundary pixel of
/// class `c` in `ref`. Boundary pixels belong to the class and have a
/// 4-neighbour that does not (the image border counts as outside). Every pixel
/// is +inf when the class is absent.
Slice2D<double> boundary_distance_map(const Slice2D<std::uint8_t>& ref, std::uint8_t c);

/// Splits mis-segmented voxels into tolerated errors and failures.
FailureSet compute_failure_set(const LabelVolume& pred, const LabelVolume& ref, const ToleranceSpec& spec = {},
                               int patch_size = 8);

/// Max-pool of a binary mask over non-overlapping patches. Throws when the
/// slice dimensions are not multiples of `patch_size`.
PatchGrid patch_labels(const Slice2D<std::uint8_t>& mask, int patch_size);

/// Zero-pads a slice at the bottom/right up to a multiple of `multiple`.
Slice2D<std::uint8_t> pad_to_multiple(const Slice2D<std::uint8_t>& mask, int multiple);

/// Number of mis-segmented voxels (pred != ref).
long long error_voxels(const LabelVolume& pred, const LabelVolume& ref);

/// |failures| / |errors|; 0 when there are no errors.
double failure_fraction(const FailureSet& fs, const LabelVolume& pred, const LabelVolume& ref);

/// Slice range covered by the reference foreground, [first, last]; first > last when empty.
std::pair<int, int> reference_slice_range(const LabelVolume& ref);

}  // namespace cmr::failure
