#pragma once

#include <cstdint>
#include <vector>

#include "cmr/volume.hpp"

namespace cmr {

/// Component labelling result: 0 = not in mask, 1..n = component id.
struct Components {
  std::vector<std::int32_t> labels;
  std::vector<std::int64_t> sizes;  // sizes[id - 1]
  int count() const { return static_cast<int>(sizes.size()); }
};

/// 3D labelling with 6- or 26-connectivity. `mask` non-zero = foreground.
Components label_components_3d(const std::vector<std::uint8_t>& mask, Shape3 shape, int connectivity = 26);

/// 2D labelling with 4- or 8-connectivity.
Components label_components_2d(const std::vector<std::uint8_t>& mask, int h, int w, int connectivity = 4);

/// Squared Euclidean distance from every cell to the nearest seed (seed != 0),
/// with per-axis spacing. Cells are +inf when there are no seeds.
/// Exact separable transform (lower envelope of parabolas).
std::vector<double> squared_distance_2d(const std::vector<std::uint8_t>& seeds, int h, int w, double sy = 1.0,
                                        double sx = 1.0);
std::vector<double> squared_distance_3d(const std::vector<std::uint8_t>& seeds, Shape3 shape, const Spacing& spacing);

}  // namespace cmr
