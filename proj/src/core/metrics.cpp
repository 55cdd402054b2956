#include "cmr/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "cmr/components.hpp"

namespace cmr::eval {

double dice_3d(const LabelVolume& pred, const LabelVolume& ref, std::uint8_t c) {
  if (!(pred.shape() == ref.shape())) throw Error(ErrorCode::ShapeMismatch, "dice inputs differ in shape");
  long long a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool pa = pred[i] == c;
    const bool pb = ref[i] == c;
    a += pa;
    b += pb;
    both += pa && pb;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::vector<std::uint8_t> boundary_voxels(const std::vector<std::uint8_t>& mask, Shape3 s) {
  std::vector<std::uint8_t> out(mask.size(), 0);
  auto at = [&](int z, int y, int x) -> bool {
    if (z < 0 || y < 0 || x < 0 || z >= s.z || y >= s.h || x >= s.w) return false;
    return mask[(static_cast<std::size_t>(z) * s.h + y) * s.w + x] != 0;
  };
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        if (!at(z, y, x)) continue;
        if (!at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) || !at(z, y + 1, x) || !at(z, y, x - 1) ||
            !at(z, y, x + 1))
          out[(static_cast<std::size_t>(z) * s.h + y) * s.w + x] = 1;
      }
  return out;
}

double hausdorff_3d(const LabelVolume& pred, const LabelVolume& ref, std::uint8_t c, const Spacing& spacing) {
  if (!(pred.shape() == ref.shape())) throw Error(ErrorCode::ShapeMismatch, "hausdorff inputs differ in shape");
  std::vector<std::uint8_t> a(pred.size()), b(pred.size());
  bool any_a = false, any_b = false;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    a[i] = pred[i] == c;
    b[i] = ref[i] == c;
    any_a |= a[i] != 0;
    any_b |= b[i] != 0;
  }
  if (!any_a || !any_b) throw Error(ErrorCode::UndefinedMetric, fmt::format("class {} empty in one mask", int(c)));
  const auto ba = boundary_voxels(a, pred.shape());
  const auto bb = boundary_voxels(b, pred.shape());
  const auto da = squared_distance_3d(ba, pred.shape(), spacing);
  const auto db = squared_distance_3d(bb, pred.shape(), spacing);
  double worst = 0.0;
  for (std::size_t i = 0; i < ba.size(); ++i) {
    if (ba[i]) worst = std::max(worst, db[i]);
    if (bb[i]) worst = std::max(worst, da[i]);
  }
  return std::sqrt(worst);
}

double structure_volume_ml(const LabelVolume& labels, std::uint8_t c, const Spacing& spacing) {
  const auto n = std::count(labels.data().begin(), labels.data().end(), c);
  return static_cast<double>(n) * spacing.voxel_volume_mm3() / 1000.0;
}

double ejection_fraction(double edv, double esv) {
  if (edv <= 0.0) throw Error(ErrorCode::UndefinedMetric, "EF undefined for zero EDV");
  return 100.0 * (edv - esv) / edv;
}

ClinicalMetrics clinical_metrics(const LabelVolume& ed, const LabelVolume& es, const Spacing& spacing) {
  ClinicalMetrics m;
  m.lv_edv = structure_volume_ml(ed, kLV, spacing);
  m.lv_esv = structure_volume_ml(es, kLV, spacing);
  m.rv_edv = structure_volume_ml(ed, kRV, spacing);
  m.rv_esv = structure_volume_ml(es, kRV, spacing);
  m.lv_ef = ejection_fraction(m.lv_edv, m.lv_esv);
  m.rv_ef = ejection_fraction(m.rv_edv, m.rv_esv);
  m.lvm_mass = structure_volume_ml(ed, kLVM, spacing) * kMyocardialDensity;
  return m;
}

Agreement agreement_stats(const std::vector<double>& automatic, const std::vector<double>& reference) {
  if (automatic.size() != reference.size()) throw Error(ErrorCode::ShapeMismatch, "unpaired samples");
  const std::size_t n = automatic.size();
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "agreement needs at least two pairs");
  const double ma = std::accumulate(automatic.begin(), automatic.end(), 0.0) / n;
  const double mr = std::accumulate(reference.begin(), reference.end(), 0.0) / n;
  double saa = 0, srr = 0, sar = 0, sd = 0, sad = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = automatic[i] - ma;
    const double dr = reference[i] - mr;
    saa += da * da;
    srr += dr * dr;
    sar += da * dr;
    const double diff = automatic[i] - reference[i];
    sd += diff;
    sad += std::abs(diff);
  }
  if (saa <= 0.0 || srr <= 0.0) throw Error(ErrorCode::UndefinedMetric, "Pearson correlation undefined for zero variance");
  Agreement out;
  out.pearson = std::clamp(sar / std::sqrt(saa * srr), -1.0, 1.0);
  out.bias = sd / n;
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = (automatic[i] - reference[i]) - out.bias;
    ss += e * e;
  }
  out.bias_sd = std::sqrt(ss / (n - 1));
  out.mae = sad / n;
  return out;
}

namespace {

// Number of orderings of m + n distinct values with statistic U = u, for all u.
std::vector<double> u_distribution(int m, int n) {
  // counts[i][u] for the current n as m grows; standard recursion
  // f(m, n, u) = f(m - 1, n, u - n) + f(m, n - 1, u).
  std::vector<std::vector<double>> prev(static_cast<std::size_t>(m) + 1);
  for (int i = 0; i <= m; ++i) prev[i] = {1.0};  // n = 0: only U = 0
  for (int j = 1; j <= n; ++j) {
    std::vector<std::vector<double>> cur(static_cast<std::size_t>(m) + 1);
    cur[0] = {1.0};
    for (int i = 1; i <= m; ++i) {
      cur[i].assign(static_cast<std::size_t>(i) * j + 1, 0.0);
      for (std::size_t u = 0; u < prev[i].size(); ++u) cur[i][u] += prev[i][u];
      for (std::size_t u = 0; u < cur[i - 1].size(); ++u) cur[i][u + j] += cur[i - 1][u];
    }
    prev = std::move(cur);
  }
  return prev[m];
}

}  // namespace

double mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::InvalidArgument, "Mann-Whitney needs two nonempty samples");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::vector<std::pair<double, int>> all;
  all.reserve(n);
  for (double v : a) all.emplace_back(v, 0);
  for (double v : b) all.emplace_back(v, 1);
  std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first < y.first; });

  double rank_sum_a = 0.0;
  double tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && all[j + 1].first == all[i].first) ++j;
    const double t = static_cast<double>(j - i + 1);
    const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (all[k].second == 0) rank_sum_a += avg_rank;
    if (t > 1) {
      ties = true;
      tie_term += t * t * t - t;
    }
    i = j + 1;
  }
  const double u = rank_sum_a - static_cast<double>(na) * (na + 1) / 2.0;
  const double mu = static_cast<double>(na) * nb / 2.0;

  if (!ties && na <= 20 && nb <= 20) {
    const auto dist = u_distribution(static_cast<int>(na), static_cast<int>(nb));
    const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    const auto ui = static_cast<std::size_t>(std::llround(u));
    double lower = 0.0, upper = 0.0;
    for (std::size_t k = 0; k < dist.size(); ++k) {
      if (k <= ui) lower += dist[k];
      if (k >= ui) upper += dist[k];
    }
    return std::min(1.0, 2.0 * std::min(lower, upper) / total);
  }

  const double nn = static_cast<double>(n);
  const double var = static_cast<double>(na) * nb / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (var <= 0.0) return 1.0;
  const double z = std::max(0.0, std::abs(u - mu) - 0.5) / std::sqrt(var);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

}  // namespace cmr::eval
