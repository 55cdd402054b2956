#pragma once

#include <vector>

#include "cmr/detect/geometry.hpp"
#include "cmr/volume.hpp"

namespace cmr::eval {

/// Replaces predicted labels by reference labels inside every flagged region.
/// Throws OutOfBounds for regions outside the volume.
LabelVolume simulate_correction(const LabelVolume& pred, const LabelVolume& ref,
                                const std::vector<detect::VoxelRegion>& regions);

/// Same, with the flagged area given as a voxel mask.
LabelVolume simulate_correction(const LabelVolume& pred, const LabelVolume& ref, const MaskVolume& flagged);

}  // namespace cmr::eval
