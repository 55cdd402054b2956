#pragma once

#include <array>
#include <optional>
#include <string_view>
#include <vector>

#include "cmr/seg/probability.hpp"
#include "cmr/seg/types.hpp"
#include "cmr/volume.hpp"

namespace cmr::unc {

enum class MapKind { Entropy, Bayesian };
std::string_view to_string(MapKind k);
MapKind parse_map_kind(std::string_view s);

struct MapSource {
  seg::Arch arch = seg::Arch::DRN;
  seg::LossKind loss = seg::LossKind::CrossEntropy;
  bool mc_enabled = false;
};

struct UncertaintyMap {
  ImageVolume values;  // in [0, 1]
  MapKind kind = MapKind::Entropy;
  MapSource source;
  std::optional<int> T;
};

/// Normalised entropy of the class distribution, -sum p log p / log C.
/// Uses the predictive mean when the volume holds MC samples.
UncertaintyMap entropy_map(const seg::ProbabilityVolume& probs);

/// Mean over classes of the per-class sample standard deviation (T - 1
/// denominator) of the MC softmax samples.
UncertaintyMap bayesian_map(const seg::ProbabilityVolume& probs);

/// Voxel-level map over raw sample stacks, layout (T, N, C).
std::vector<float> bayesian_values(std::span<const float> samples, int T, std::size_t voxels, int classes);

struct BoundingBox {
  int z0 = 0, y0 = 0, x0 = 0;
  int z1 = 0, y1 = 0, x1 = 0;  // exclusive
  bool empty() const { return z1 <= z0 || y1 <= y0 || x1 <= x0; }
};

/// Smallest box enclosing the non-zero voxels; empty box when there are none.
BoundingBox foreground_bbox(const LabelVolume& labels);

struct RiskCoverageCurve {
  static constexpr int kPoints = 101;
  std::array<double, kPoints> coverage{};    // 0..100 percent
  std::array<double, kPoints> risk{};        // error voxels retained
  std::array<double, kPoints> thresholds{};  // largest retained uncertainty
  BoundingBox bbox;
  long long total_errors = 0;
  long long voxels = 0;
};

/// Risk (count of mis-segmented voxels still segmented automatically) as a
/// function of coverage when the most uncertain voxels are referred first.
/// Evaluated inside the reference-foreground bounding box.
RiskCoverageCurve risk_coverage_curve(const ImageVolume& umap, const LabelVolume& pred, const LabelVolume& ref);

}  // namespace cmr::unc
