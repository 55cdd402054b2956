#include "cmr/seg/probability.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "cmr/components.hpp"
#include "cmr/io/preprocess.hpp"

namespace cmr::seg {

ProbabilityVolume from_samples(Shape3 shape, int T, std::vector<float> samples, bool keep_samples) {
  const std::size_t per_sample = shape.size() * kNumClasses;
  if (T < 1 || samples.size() != per_sample * static_cast<std::size_t>(T))
    throw Error(ErrorCode::ShapeMismatch, "sample stack size does not match T x volume");
  ProbabilityVolume pv;
  pv.shape = shape;
  pv.T = T;
  pv.mc_enabled = T >= 2;
  pv.probs.assign(per_sample, 0.0f);
  std::vector<double> acc(per_sample, 0.0);
  for (int t = 0; t < T; ++t) {
    const float* s = samples.data() + per_sample * t;
    for (std::size_t i = 0; i < per_sample; ++i) acc[i] += s[i];
  }
  for (std::size_t i = 0; i < per_sample; ++i) pv.probs[i] = static_cast<float>(acc[i] / T);
  if (pv.mc_enabled && keep_samples) pv.samples = std::move(samples);
  return pv;
}

void validate(const ProbabilityVolume& pv) {
  const std::size_t n = pv.voxel_count();
  if (pv.probs.size() != n * pv.num_classes) throw Error(ErrorCode::ShapeMismatch, "probability payload size");
  for (std::size_t v = 0; v < n; ++v) {
    double sum = 0.0;
    for (float p : pv.voxel(v)) {
      if (!(p >= 0.0f && p <= 1.0f)) throw Error(ErrorCode::InvalidArgument, fmt::format("probability {} outside [0,1]", p));
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-5) throw Error(ErrorCode::InvalidArgument, fmt::format("voxel {} sums to {}", v, sum));
  }
  if (pv.mc_enabled) {
    if (pv.T < 2) throw Error(ErrorCode::InvalidArgument, "MC volume with T < 2");
    if (!pv.samples.empty()) {
      if (pv.samples.size() != n * pv.num_classes * pv.T) throw Error(ErrorCode::ShapeMismatch, "sample payload size");
      for (std::size_t i = 0; i < pv.probs.size(); ++i) {
        double mean = 0.0;
        for (int t = 0; t < pv.T; ++t) mean += pv.samples[static_cast<std::size_t>(t) * pv.probs.size() + i];
        mean /= pv.T;
        if (std::abs(mean - pv.probs[i]) > 1e-5) throw Error(ErrorCode::InvalidArgument, "probs differ from sample mean");
      }
    }
  }
}

LabelVolume argmax_labels(const ProbabilityVolume& pv) {
  LabelVolume out(pv.shape);
  for (std::size_t v = 0; v < pv.voxel_count(); ++v) {
    const auto p = pv.voxel(v);
    int best = 0;
    for (int c = 1; c < pv.num_classes; ++c)
      if (p[c] > p[best]) best = c;
    out[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

LabelVolume keep_largest_components(const LabelVolume& labels, int connectivity) {
  LabelVolume out = labels;
  std::vector<std::uint8_t> mask(labels.size());
  for (int c = 1; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) mask[i] = labels[i] == c;
    const auto comps = label_components_3d(mask, labels.shape(), connectivity);
    if (comps.count() <= 1) continue;
    // Largest wins; ties go to the first component in raster order.
    const auto largest =
        static_cast<int>(std::max_element(comps.sizes.begin(), comps.sizes.end()) - comps.sizes.begin()) + 1;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (comps.labels[i] != 0 && comps.labels[i] != largest) out[i] = kBackground;
  }
  return out;
}

LabelVolume postprocess_segmentation(const LabelVolume& labels, const io::ResampleGeometry& geometry,
                                     int connectivity) {
  return io::to_original_grid(keep_largest_components(labels, connectivity), geometry);
}

}  // namespace cmr::seg
