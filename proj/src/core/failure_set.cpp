#include "cmr/failure/failure_set.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "cmr/components.hpp"

namespace cmr::failure {

void ToleranceSpec::validate() const {
  if (!(outside_voxels >= inside_voxels && inside_voxels >= 0))
    throw Error(ErrorCode::InvalidArgument, "tolerance requires outside >= inside >= 0");
  if (min_cluster < 1) throw Error(ErrorCode::InvalidArgument, "min_cluster must be >= 1");
  if (connectivity != 4 && connectivity != 8) throw Error(ErrorCode::InvalidArgument, "connectivity must be 4 or 8");
}

int PatchGrid::positives() const {
  int n = 0;
  for (auto c : cells) n += c != 0;
  return n;
}

long long FailureSet::failure_voxels() const {
  long long n = 0;
  for (auto v : voxel_mask.data()) n += v != 0;
  return n;
}

Slice2D<double> boundary_distance_map(const Slice2D<std::uint8_t>& ref, std::uint8_t c) {
  std::vector<std::uint8_t> boundary(ref.data.size(), 0);
  bool any = false;
  for (int y = 0; y < ref.h; ++y)
    for (int x = 0; x < ref.w; ++x) {
      if (ref(y, x) != c) continue;
      any = true;
      const bool edge = y == 0 || x == 0 || y == ref.h - 1 || x == ref.w - 1 || ref(y - 1, x) != c ||
                        ref(y + 1, x) != c || ref(y, x - 1) != c || ref(y, x + 1) != c;
      if (edge) boundary[static_cast<std::size_t>(y) * ref.w + x] = 1;
    }
  Slice2D<double> out(ref.h, ref.w, std::numeric_limits<double>::infinity());
  if (!any) return out;
  const auto sq = squared_distance_2d(boundary, ref.h, ref.w);
  for (std::size_t i = 0; i < sq.size(); ++i) out.data[i] = std::sqrt(sq[i]);
  return out;
}

std::pair<int, int> reference_slice_range(const LabelVolume& ref) {
  int first = ref.depth();
  int last = -1;
  for (int z = 0; z < ref.depth(); ++z) {
    const auto s = ref.slice(z);
    if (std::any_of(s.begin(), s.end(), [](std::uint8_t v) { return v != 0; })) {
      first = std::min(first, z);
      last = std::max(last, z);
    }
  }
  return {first, last};
}

FailureSet compute_failure_set(const LabelVolume& pred, const LabelVolume& ref, const ToleranceSpec& spec,
                               int patch_size) {
  if (!(pred.shape() == ref.shape())) throw Error(ErrorCode::ShapeMismatch, "prediction/reference shapes differ");
  spec.validate();
  if (patch_size < 1) throw Error(ErrorCode::InvalidArgument, "patch_size must be positive");

  FailureSet fs;
  fs.spec = spec;
  fs.patch_size = patch_size;
  fs.voxel_mask = MaskVolume(pred.shape(), 0);

  const auto [apex, base] = reference_slice_range(ref);
  const int h = ref.height();
  const int w = ref.width();

  for (int z = 0; z < ref.depth(); ++z) {
    const auto ref_s = extract_slice(ref, z);
    const auto pred_s = extract_slice(pred, z);
    auto out = fs.voxel_mask.slice(z);

    if (z < apex || z > base) {
      // Beyond the covered range every error counts.
      for (std::size_t i = 0; i < ref_s.data.size(); ++i) out[i] = pred_s.data[i] != ref_s.data[i];
      continue;
    }
    const bool size_exempt = z == apex;

    for (std::uint8_t c = 1; c < kNumClasses; ++c) {
      const auto dist = boundary_distance_map(ref_s, c);
      std::vector<std::uint8_t> candidates(ref_s.data.size(), 0);
      bool any = false;
      for (std::size_t i = 0; i < ref_s.data.size(); ++i) {
        const std::uint8_t p = pred_s.data[i];
        const std::uint8_t r = ref_s.data[i];
        if (p == r) continue;
        const bool false_pos = p == c;  // outside class c's reference region
        const bool false_neg = r == c;  // inside it
        if ((false_pos && dist.data[i] > spec.outside_voxels) || (false_neg && dist.data[i] > spec.inside_voxels)) {
          candidates[i] = 1;
          any = true;
        }
      }
      if (!any) continue;
      if (size_exempt) {
        for (std::size_t i = 0; i < candidates.size(); ++i)
          if (candidates[i]) out[i] = 1;
        continue;
      }
      const auto comps = label_components_2d(candidates, h, w, spec.connectivity);
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        const int id = comps.labels[i];
        if (id != 0 && comps.sizes[id - 1] >= spec.min_cluster) out[i] = 1;
      }
    }
  }

  fs.patch_labels.reserve(ref.depth());
  for (int z = 0; z < ref.depth(); ++z)
    fs.patch_labels.push_back(patch_labels(pad_to_multiple(extract_slice(fs.voxel_mask, z), patch_size), patch_size));
  return fs;
}

PatchGrid patch_labels(const Slice2D<std::uint8_t>& mask, int patch_size) {
  if (patch_size < 1 || mask.h % patch_size != 0 || mask.w % patch_size != 0)
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("slice {}x{} not divisible by patch size {}", mask.h, mask.w, patch_size));
  PatchGrid g;
  g.rows = mask.h / patch_size;
  g.cols = mask.w / patch_size;
  g.patch_size = patch_size;
  g.cells.assign(static_cast<std::size_t>(g.rows) * g.cols, 0);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x)
      if (mask(y, x)) g.cells[static_cast<std::size_t>(y / patch_size) * g.cols + x / patch_size] = 1;
  return g;
}

Slice2D<std::uint8_t> pad_to_multiple(const Slice2D<std::uint8_t>& mask, int multiple) {
  const int ph = (mask.h + multiple - 1) / multiple * multiple;
  const int pw = (mask.w + multiple - 1) / multiple * multiple;
  Slice2D<std::uint8_t> out(ph, pw, 0);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) out(y, x) = mask(y, x);
  return out;
}

long long error_voxels(const LabelVolume& pred, const LabelVolume& ref) {
  if (!(pred.shape() == ref.shape())) throw Error(ErrorCode::ShapeMismatch, "prediction/reference shapes differ");
  long long n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) n += pred[i] != ref[i];
  return n;
}

double failure_fraction(const FailureSet& fs, const LabelVolume& pred, const LabelVolume& ref) {
  const auto errors = error_voxels(pred, ref);
  return errors == 0 ? 0.0 : static_cast<double>(fs.failure_voxels()) / static_cast<double>(errors);
}

}  // namespace cmr::failure
