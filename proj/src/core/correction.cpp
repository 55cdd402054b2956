#include "cmr/eval/correction.hpp"

#include <fmt/format.h>

namespace cmr::eval {

LabelVolume simulate_correction(const LabelVolume& pred, const LabelVolume& ref,
                                const std::vector<detect::VoxelRegion>& regions) {
  if (!(pred.shape() == ref.shape())) throw Error(ErrorCode::ShapeMismatch, "prediction/reference shapes differ");
  const Shape3 s = pred.shape();
  for (const auto& r : regions) {
    if (r.z < 0 || r.z >= s.z || r.y0 < 0 || r.x0 < 0 || r.y1 > s.h || r.x1 > s.w || r.y0 > r.y1 || r.x0 > r.x1)
      throw Error(ErrorCode::OutOfBounds,
                  fmt::format("region z={} [{},{})x[{},{}) outside {}x{}x{}", r.z, r.y0, r.y1, r.x0, r.x1, s.z, s.h, s.w));
  }
  LabelVolume out = pred;
  for (const auto& r : regions)
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) out(r.z, y, x) = ref(r.z, y, x);
  return out;
}

LabelVolume simulate_correction(const LabelVolume& pred, const LabelVolume& ref, const MaskVolume& flagged) {
  if (!(pred.shape() == ref.shape()) || !(pred.shape() == flagged.shape()))
    throw Error(ErrorCode::ShapeMismatch, "correction inputs differ in shape");
  LabelVolume out = pred;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (flagged[i]) out[i] = ref[i];
  return out;
}

}  // namespace cmr::eval
