#include "cmr/detect/geometry.hpp"

#include <algorithm>

namespace cmr::detect {
namespace {

int round_up(int v, int m) { return (v + m - 1) / m * m; }

// Places a crop of `size` covering [lo, hi) of an axis of length n.
int place(int lo, int hi, int size, int n) {
  if (size >= n) return -(size - n) / 2;
  const int start = lo - (size - (hi - lo)) / 2;
  return std::clamp(start, 0, n - size);
}

}  // namespace

CropRect detection_crop_rect(const Slice2D<std::uint8_t>& auto_seg, int min_size, int multiple) {
  int y0 = auto_seg.h, x0 = auto_seg.w, y1 = -1, x1 = -1;
  for (int y = 0; y < auto_seg.h; ++y)
    for (int x = 0; x < auto_seg.w; ++x)
      if (auto_seg(y, x)) {
        y0 = std::min(y0, y);
        x0 = std::min(x0, x);
        y1 = std::max(y1, y + 1);
        x1 = std::max(x1, x + 1);
      }
  CropRect r;
  if (y1 < 0) {
    r.height = r.width = round_up(min_size, multiple);
    r.row = (auto_seg.h - r.height) / 2;
    r.col = (auto_seg.w - r.width) / 2;
    return r;
  }
  r.height = std::max(min_size, round_up(y1 - y0, multiple));
  r.width = std::max(min_size, round_up(x1 - x0, multiple));
  r.row = place(y0, y1, r.height, auto_seg.h);
  r.col = place(x0, x1, r.width, auto_seg.w);
  return r;
}

DetectionCrop crop_for_detection(const Slice2D<float>& image, const Slice2D<float>& umap,
                                 const Slice2D<std::uint8_t>& auto_seg, int min_size, int multiple) {
  if (image.h != umap.h || image.w != umap.w || image.h != auto_seg.h || image.w != auto_seg.w)
    throw Error(ErrorCode::ShapeMismatch, "detection inputs are not aligned");
  DetectionCrop out;
  out.rect = detection_crop_rect(auto_seg, min_size, multiple);
  out.image = crop(image, out.rect, 0.0f);
  out.umap = crop(umap, out.rect, 0.0f);
  return out;
}

double compute_w_pos(const std::vector<std::pair<long long, long long>>& per_volume_counts) {
  double pos_pct = 0.0;
  double neg_pct = 0.0;
  int volumes = 0;
  for (const auto& [pos, total] : per_volume_counts) {
    if (total <= 0) continue;
    pos_pct += 100.0 * static_cast<double>(pos) / static_cast<double>(total);
    neg_pct += 100.0 * static_cast<double>(total - pos) / static_cast<double>(total);
    ++volumes;
  }
  if (volumes == 0 || pos_pct <= 0.0) throw Error(ErrorCode::NoPositives, "no positive patches in training set");
  return (neg_pct / volumes) / (pos_pct / volumes);
}

double compute_w_pos(const std::vector<failure::FailureSet>& failure_sets) {
  std::vector<std::pair<long long, long long>> counts;
  for (const auto& fs : failure_sets) {
    long long pos = 0, total = 0;
    for (const auto& g : fs.patch_labels) {
      pos += g.positives();
      total += static_cast<long long>(g.cells.size());
    }
    counts.emplace_back(pos, total);
  }
  return compute_w_pos(counts);
}

float SliceDetection::max_prob() const {
  return probs.empty() ? 0.0f : *std::max_element(probs.begin(), probs.end());
}

VoxelRegion region_extent(const DetectionResult& result, const FlaggedRegion& region) {
  const SliceDetection* sd = nullptr;
  for (const auto& s : result.slices)
    if (s.z == region.z) {
      sd = &s;
      break;
    }
  if (!sd) throw Error(ErrorCode::OutOfBounds, "region refers to a slice without detections");
  VoxelRegion v;
  v.z = region.z;
  v.y0 = std::clamp(sd->rect.row + region.grid_row * sd->patch_size, 0, result.volume_shape.h);
  v.x0 = std::clamp(sd->rect.col + region.grid_col * sd->patch_size, 0, result.volume_shape.w);
  v.y1 = std::clamp(sd->rect.row + (region.grid_row + 1) * sd->patch_size, 0, result.volume_shape.h);
  v.x1 = std::clamp(sd->rect.col + (region.grid_col + 1) * sd->patch_size, 0, result.volume_shape.w);
  return v;
}

void apply_threshold(DetectionResult& result, double threshold) {
  result.decision_threshold = threshold;
  result.flagged_regions.clear();
  for (const auto& s : result.slices)
    for (int r = 0; r < s.rows; ++r)
      for (int c = 0; c < s.cols; ++c) {
        if (s.prob(r, c) < threshold) continue;
        const FlaggedRegion fr{s.z, r, c};
        const auto ext = region_extent(result, fr);
        if (ext.y1 > ext.y0 && ext.x1 > ext.x0) result.flagged_regions.push_back(fr);
      }
}

std::vector<VoxelRegion> flagged_voxel_regions(const DetectionResult& result) {
  std::vector<VoxelRegion> out;
  out.reserve(result.flagged_regions.size());
  for (const auto& fr : result.flagged_regions) out.push_back(region_extent(result, fr));
  return out;
}

MaskVolume region_mask(const DetectionResult& result) {
  MaskVolume mask(result.volume_shape, 0);
  for (const auto& v : flagged_voxel_regions(result))
    for (int y = v.y0; y < v.y1; ++y)
      for (int x = v.x0; x < v.x1; ++x) mask(v.z, y, x) = 1;
  return mask;
}

}  // namespace cmr::detect
