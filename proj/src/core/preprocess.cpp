#include "cmr/io/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace cmr::io {

int resampled_extent(int n, double spacing, double target) {
  return std::max(1, static_cast<int>(std::lround(n * spacing / target)));
}

void rescale_intensity(ImageVolume& image) {
  if (image.empty()) throw Error(ErrorCode::DegenerateIntensity, "empty volume");
  const auto [lo, hi] = std::minmax_element(image.data().begin(), image.data().end());
  const float mn = *lo;
  const float mx = *hi;
  if (!(mx > mn)) throw Error(ErrorCode::DegenerateIntensity, fmt::format("constant intensity {}", mn));
  const double scale = 1.0 / (static_cast<double>(mx) - mn);
  for (auto& v : image.data()) v = static_cast<float>((static_cast<double>(v) - mn) * scale);
  // Guard the exact endpoints against rounding.
  *std::min_element(image.data().begin(), image.data().end()) = 0.0f;
  *std::max_element(image.data().begin(), image.data().end()) = 1.0f;
}

int nearest_source(int i, int src_n, int dst_n) {
  const auto s = static_cast<int>(std::floor((i + 0.5) * static_cast<double>(src_n) / dst_n));
  return std::clamp(s, 0, src_n - 1);
}

namespace {

// Pixel-centre aligned source coordinate for output index `i`.
double source_coord(int i, int src_n, int dst_n) {
  return (i + 0.5) * static_cast<double>(src_n) / dst_n - 0.5;
}

template <typename T>
Volume<T> nearest_impl(const Volume<T>& src, int out_h, int out_w) {
  Volume<T> out(Shape3{src.depth(), out_h, out_w});
  std::vector<int> ys(out_h), xs(out_w);
  for (int y = 0; y < out_h; ++y) ys[y] = nearest_source(y, src.height(), out_h);
  for (int x = 0; x < out_w; ++x) xs[x] = nearest_source(x, src.width(), out_w);
  for (int z = 0; z < src.depth(); ++z)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) out(z, y, x) = src(z, ys[y], xs[x]);
  return out;
}

}  // namespace

ImageVolume resample_bilinear(const ImageVolume& src, int out_h, int out_w) {
  ImageVolume out(Shape3{src.depth(), out_h, out_w});
  const int h = src.height();
  const int w = src.width();
  for (int y = 0; y < out_h; ++y) {
    const double sy = std::clamp(source_coord(y, h, out_h), 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double sx = std::clamp(source_coord(x, w, out_w), 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (int z = 0; z < src.depth(); ++z) {
        const double top = src(z, y0, x0) * (1 - fx) + src(z, y0, x1) * fx;
        const double bot = src(z, y1, x0) * (1 - fx) + src(z, y1, x1) * fx;
        out(z, y, x) = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

LabelVolume resample_nearest(const LabelVolume& src, int out_h, int out_w) { return nearest_impl(src, out_h, out_w); }

PatientStudy preprocess_volume(const PatientStudy& study) {
  validate_study(study);
  PatientStudy out = study;
  const Shape3 orig = study.phase(Phase::ED).image.shape();
  const int out_h = resampled_extent(orig.h, study.spacing.dy);
  const int out_w = resampled_extent(orig.w, study.spacing.dx);
  for (Phase p : kPhases) {
    auto image = study.phase(p).image;
    rescale_intensity(image);
    out.phase(p).image = resample_bilinear(image, out_h, out_w);
    // Bilinear blending cannot leave [0,1]; re-pin endpoints so the range stays exact.
    rescale_intensity(out.phase(p).image);
    out.phase(p).reference = resample_nearest(study.phase(p).reference, out_h, out_w);
  }
  out.geometry = ResampleGeometry{orig, study.spacing, Shape3{orig.z, out_h, out_w},
                                  Spacing{kWorkingSpacingMm, kWorkingSpacingMm, study.spacing.dz}};
  return out;
}

LabelVolume to_original_grid(const LabelVolume& working, const ResampleGeometry& geometry) {
  if (!(working.shape() == geometry.working_shape))
    throw Error(ErrorCode::ShapeMismatch, "label volume does not match working geometry");
  return nearest_impl(working, geometry.original_shape.h, geometry.original_shape.w);
}

ImageVolume image_to_original_grid(const ImageVolume& working, const ResampleGeometry& geometry) {
  if (!(working.shape() == geometry.working_shape))
    throw Error(ErrorCode::ShapeMismatch, "volume does not match working geometry");
  return nearest_impl(working, geometry.original_shape.h, geometry.original_shape.w);
}

MaskVolume mask_to_original_grid(const MaskVolume& working, const ResampleGeometry& geometry) {
  return to_original_grid(working, geometry);
}

std::vector<std::string> FoldSplit::test_patients(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignments)
    if (f == fold) ids.push_back(id);
  return ids;
}

std::vector<std::string> FoldSplit::train_patients(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignments)
    if (f != fold) ids.push_back(id);
  return ids;
}

FoldSplit make_stratified_folds(const std::vector<std::pair<std::string, DiseaseGroup>>& patients, int k,
                                std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "k must be >= 2");
  std::map<DiseaseGroup, std::vector<std::string>> by_group;
  for (const auto& [id, g] : patients) by_group[g].push_back(id);

  FoldSplit split;
  split.k = k;
  split.seed = seed;
  std::mt19937_64 rng(seed);
  int next_fold = 0;
  for (auto& [group, ids] : by_group) {
    if (static_cast<int>(ids.size()) < k)
      throw Error(ErrorCode::InsufficientGroupSize,
                  fmt::format("group {} has {} patients, needs >= {}", to_string(group), ids.size(), k));
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    // Continue the round-robin across groups so fold totals stay balanced.
    for (const auto& id : ids) {
      split.assignments[id] = next_fold;
      next_fold = (next_fold + 1) % k;
    }
  }
  return split;
}

FoldSplit make_stratified_folds(const std::vector<PatientStudy>& studies, int k, std::uint64_t seed) {
  std::vector<std::pair<std::string, DiseaseGroup>> patients;
  patients.reserve(studies.size());
  for (const auto& s : studies) patients.emplace_back(s.patient_id, s.group);
  return make_stratified_folds(patients, k, seed);
}

}  // namespace cmr::io
