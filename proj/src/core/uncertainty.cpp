#include "cmr/unc/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cmr::unc {

std::string_view to_string(MapKind k) { return k == MapKind::Entropy ? "entropy" : "bayesian"; }

MapKind parse_map_kind(std::string_view s) {
  if (s == "entropy" || s == "e-map" || s == "emap") return MapKind::Entropy;
  if (s == "bayesian" || s == "b-map" || s == "bmap") return MapKind::Bayesian;
  throw Error(ErrorCode::InvalidArgument, "unknown uncertainty map kind: " + std::string(s));
}

UncertaintyMap entropy_map(const seg::ProbabilityVolume& probs) {
  UncertaintyMap out;
  out.kind = MapKind::Entropy;
  out.source.mc_enabled = probs.mc_enabled;
  if (probs.mc_enabled) out.T = probs.T;
  out.values = ImageVolume(probs.shape);
  const double norm = std::log(static_cast<double>(probs.num_classes));
  for (std::size_t v = 0; v < probs.voxel_count(); ++v) {
    double h = 0.0;
    for (float p : probs.voxel(v))
      if (p > 0.0f) h -= p * std::log(static_cast<double>(p));
    out.values[v] = static_cast<float>(std::clamp(h / norm, 0.0, 1.0));
  }
  return out;
}

std::vector<float> bayesian_values(std::span<const float> samples, int T, std::size_t voxels, int classes) {
  if (T < 2) throw Error(ErrorCode::InvalidArgument, "b-map needs T >= 2 samples");
  const std::size_t stride = voxels * classes;
  if (samples.size() != stride * T) throw Error(ErrorCode::ShapeMismatch, "sample stack size");
  std::vector<float> out(voxels);
  for (std::size_t v = 0; v < voxels; ++v) {
    double acc = 0.0;
    for (int c = 0; c < classes; ++c) {
      const std::size_t off = v * classes + c;
      double mean = 0.0;
      for (int t = 0; t < T; ++t) mean += samples[t * stride + off];
      mean /= T;
      double ss = 0.0;
      for (int t = 0; t < T; ++t) {
        const double d = samples[t * stride + off] - mean;
        ss += d * d;
      }
      acc += std::sqrt(ss / (T - 1));
    }
    out[v] = static_cast<float>(acc / classes);
  }
  return out;
}

UncertaintyMap bayesian_map(const seg::ProbabilityVolume& probs) {
  if (!probs.mc_enabled || probs.T < 2 || probs.samples.empty())
    throw Error(ErrorCode::InvalidArgument, "b-map requires retained MC samples with T >= 2");
  UncertaintyMap out;
  out.kind = MapKind::Bayesian;
  out.source.mc_enabled = true;
  out.T = probs.T;
  out.values = ImageVolume(probs.shape, bayesian_values(probs.samples, probs.T, probs.voxel_count(), probs.num_classes));
  return out;
}

BoundingBox foreground_bbox(const LabelVolume& labels) {
  BoundingBox b{labels.depth(), labels.height(), labels.width(), 0, 0, 0};
  for (int z = 0; z < labels.depth(); ++z)
    for (int y = 0; y < labels.height(); ++y)
      for (int x = 0; x < labels.width(); ++x) {
        if (!labels(z, y, x)) continue;
        b.z0 = std::min(b.z0, z);
        b.y0 = std::min(b.y0, y);
        b.x0 = std::min(b.x0, x);
        b.z1 = std::max(b.z1, z + 1);
        b.y1 = std::max(b.y1, y + 1);
        b.x1 = std::max(b.x1, x + 1);
      }
  if (b.z1 == 0) return BoundingBox{};
  return b;
}

RiskCoverageCurve risk_coverage_curve(const ImageVolume& umap, const LabelVolume& pred, const LabelVolume& ref) {
  if (!(umap.shape() == pred.shape()) || !(pred.shape() == ref.shape()))
    throw Error(ErrorCode::ShapeMismatch, "risk-coverage inputs differ in shape");
  RiskCoverageCurve curve;
  curve.bbox = foreground_bbox(ref);
  if (curve.bbox.empty()) throw Error(ErrorCode::EmptyReference, "reference has no foreground");

  struct Item {
    float u;
    std::size_t raster;
    bool error;
  };
  std::vector<Item> items;
  const auto& b = curve.bbox;
  for (int z = b.z0; z < b.z1; ++z)
    for (int y = b.y0; y < b.y1; ++y)
      for (int x = b.x0; x < b.x1; ++x) {
        const std::size_t i = umap.index(z, y, x);
        items.push_back({umap[i], i, pred[i] != ref[i]});
      }
  // Referral order: most uncertain first, equal values in raster order.
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& c) { return a.u > c.u; });

  const auto n = static_cast<long long>(items.size());
  // tail_errors[m] = errors among the m least uncertain (retained) voxels.
  std::vector<long long> tail_errors(items.size() + 1, 0);
  for (long long m = 1; m <= n; ++m) tail_errors[m] = tail_errors[m - 1] + items[n - m].error;
  curve.voxels = n;
  curve.total_errors = tail_errors.back();

  // Retained-set sizes at each percentile of the ranking, then linear
  // interpolation of risk onto the integer coverage grid.
  std::array<double, RiskCoverageCurve::kPoints> cov{}, risk{}, thr{};
  for (int p = 0; p < RiskCoverageCurve::kPoints; ++p) {
    const auto kept = static_cast<long long>(std::llround(static_cast<double>(p) * n / 100.0));
    cov[p] = 100.0 * static_cast<double>(kept) / n;
    risk[p] = static_cast<double>(tail_errors[kept]);
    thr[p] = kept > 0 ? items[n - kept].u : 0.0;
  }
  for (int g = 0; g < RiskCoverageCurve::kPoints; ++g) {
    const double target = g;
    curve.coverage[g] = target;
    // First percentile sample at or beyond the target coverage.
    int hi = 0;
    while (hi < RiskCoverageCurve::kPoints - 1 && cov[hi] < target) ++hi;
    if (hi == 0 || cov[hi] == target) {
      curve.risk[g] = risk[hi];
      curve.thresholds[g] = thr[hi];
      continue;
    }
    const int lo = hi - 1;
    const double f = (target - cov[lo]) / (cov[hi] - cov[lo]);
    curve.risk[g] = risk[lo] + f * (risk[hi] - risk[lo]);
    curve.thresholds[g] = thr[lo] + f * (thr[hi] - thr[lo]);
  }
  return curve;
}

}  // namespace cmr::unc
