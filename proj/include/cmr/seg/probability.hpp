#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmr/io/study.hpp"
#include "cmr/volume.hpp"

namespace cmr::seg {

/// Per-voxel class probabilities, layout (Z, H, W, C). When MC sampling was
/// used, `samples` holds the T stochastic softmax outputs, layout
/// (T, Z, H, W, C), and `probs` is their per-voxel mean.
struct ProbabilityVolume {
  Shape3 shape;
  int num_classes = kNumClasses;
  std::vector<float> probs;
  std::vector<float> samples;
  int T = 1;
  bool mc_enabled = false;

  std::size_t voxel_count() const { return shape.size(); }
  std::span<const float> voxel(std::size_t v) const {
    return {probs.data() + v * num_classes, static_cast<std::size_t>(num_classes)};
  }
  std::span<const float> sample_voxel(int t, std::size_t v) const {
    return {samples.data() + (static_cast<std::size_t>(t) * voxel_count() + v) * num_classes,
            static_cast<std::size_t>(num_classes)};
  }
};

/// Builds a volume from stacked MC samples, computing the predictive mean.
ProbabilityVolume from_samples(Shape3 shape, int T, std::vector<float> samples, bool keep_samples = true);

/// Checks the simplex and mean-of-samples invariants (tolerance 1e-5).
void validate(const ProbabilityVolume& pv);

/// Argmax per voxel; ties resolve to the lowest class index.
LabelVolume argmax_labels(const ProbabilityVolume& pv);

/// Keeps only the largest connected component of each foreground class.
LabelVolume keep_largest_components(const LabelVolume& labels, int connectivity = 26);

/// Largest-component filtering on the working grid, then nearest-neighbour
/// resampling back to the original in-plane resolution.
LabelVolume postprocess_segmentation(const LabelVolume& labels, const io::ResampleGeometry& geometry,
                                     int connectivity = 26);

}  // namespace cmr::seg
