#include "cmr/eval/curves.hpp"

#include <algorithm>
#include <numeric>

namespace cmr::eval {

PrCurve precision_recall(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "scores/labels length differ");
  const auto positives = std::count(labels.begin(), labels.end(), true);
  if (positives == 0) throw Error(ErrorCode::NoPositives, "no positive slices");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  PrCurve pr;
  long long tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (labels[order[i]]) ++tp;
    else ++fp;
    const bool last_of_score = i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]];
    if (!last_of_score) continue;
    pr.thresholds.push_back(scores[order[i]]);
    pr.precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    pr.recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
  }
  // Precision envelope from the right, then sum over recall increments.
  std::vector<double> envelope = pr.precision;
  for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    pr.average_precision += (pr.recall[i] - prev_recall) * envelope[i];
    prev_recall = pr.recall[i];
  }
  return pr;
}

PrCurve slice_detection_pr(const std::vector<detect::DetectionResult>& detections,
                           const std::vector<MaskVolume>& failure_masks) {
  if (detections.size() != failure_masks.size()) throw Error(ErrorCode::ShapeMismatch, "detections/masks differ");
  std::vector<double> scores;
  std::vector<bool> labels;
  for (std::size_t v = 0; v < detections.size(); ++v) {
    const auto& mask = failure_masks[v];
    for (const auto& s : detections[v].slices) {
      const auto sl = mask.slice(s.z);
      scores.push_back(s.max_prob());
      labels.push_back(std::any_of(sl.begin(), sl.end(), [](std::uint8_t m) { return m != 0; }));
    }
  }
  return precision_recall(scores, labels);
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 100; ++i) t.push_back(i / 100.0);
  t.push_back(1.01);
  return t;
}

std::vector<SensitivityPoint> voxel_sensitivity_vs_fp(const std::vector<detect::DetectionResult>& detections,
                                                      const std::vector<MaskVolume>& failure_masks,
                                                      const std::vector<double>& thresholds) {
  if (detections.size() != failure_masks.size()) throw Error(ErrorCode::ShapeMismatch, "detections/masks differ");
  // Per region: probability, failure voxels it holds.
  struct Region {
    float prob;
    long long failures;
  };
  std::vector<std::vector<Region>> regions(detections.size());
  long long total_failures = 0;
  for (std::size_t v = 0; v < detections.size(); ++v) {
    const auto& det = detections[v];
    const auto& mask = failure_masks[v];
    if (!(mask.shape() == det.volume_shape)) throw Error(ErrorCode::ShapeMismatch, "failure mask vs detection shape");
    for (auto m : mask.data()) total_failures += m != 0;
    for (const auto& s : det.slices)
      for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c) {
          const auto ext = detect::region_extent(det, {s.z, r, c});
          if (ext.y1 <= ext.y0 || ext.x1 <= ext.x0) continue;
          long long f = 0;
          for (int y = ext.y0; y < ext.y1; ++y)
            for (int x = ext.x0; x < ext.x1; ++x) f += mask(s.z, y, x) != 0;
          regions[v].push_back({s.prob(r, c), f});
        }
  }
  std::vector<SensitivityPoint> out;
  for (double t : thresholds) {
    SensitivityPoint p;
    p.threshold = t;
    long long caught = 0;
    long long fp = 0;
    for (const auto& vol : regions)
      for (const auto& reg : vol) {
        if (reg.prob < t) continue;
        caught += reg.failures;
        fp += reg.failures == 0;
      }
    if (total_failures > 0) p.sensitivity = static_cast<double>(caught) / static_cast<double>(total_failures);
    p.false_positive_regions = detections.empty() ? 0.0 : static_cast<double>(fp) / detections.size();
    out.push_back(p);
  }
  return out;
}

}  // namespace cmr::eval
