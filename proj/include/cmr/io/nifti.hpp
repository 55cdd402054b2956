#pragma once

#include <array>
#include <filesystem>
#include <vector>

namespace cmr::io {

/// Minimal NIfTI-1 single-file (.nii / .nii.gz) volume. Voxels are stored
/// x-fastest, matching the on-disk order.
struct NiftiVolume {
  std::array<int, 3> dims{0, 0, 0};          // nx, ny, nz
  std::array<double, 3> pixdim{1.0, 1.0, 1.0};  // mm
  std::vector<float> data;                   // scaled by scl_slope / scl_inter
};

enum class NiftiStorage { UInt8, Int16, Float32 };

NiftiVolume read_nifti(const std::filesystem::path& path);

/// Writes a 3D volume. ".gz" suffix selects gzip compression.
void write_nifti(const std::filesystem::path& path, const NiftiVolume& volume,
                 NiftiStorage storage = NiftiStorage::Float32);

}  // namespace cmr::io
