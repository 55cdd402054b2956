#include "cmr/io/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

namespace cmr::io {
namespace {

struct GroupParams {
  double lv_radius;   // ED cavity radius at the base, mm
  double wall;        // ED myocardial thickness, mm
  double rv_scale;    // RV size relative to normal
  double es_scale;    // ES/ED cavity radius ratio
  bool infarct;       // thinned wall sector
};

GroupParams params_for(DiseaseGroup g) {
  switch (g) {
    case DiseaseGroup::NOR: return {24.0, 8.0, 1.0, 0.72, false};
    case DiseaseGroup::DCM: return {31.0, 6.0, 1.0, 0.88, false};
    case DiseaseGroup::HCM: return {19.0, 13.0, 0.9, 0.60, false};
    case DiseaseGroup::MINF: return {28.0, 8.0, 1.0, 0.85, true};
    case DiseaseGroup::ARV: return {22.0, 8.0, 1.6, 0.75, false};
  }
  return {24.0, 8.0, 1.0, 0.72, false};
}

struct Ellipse {
  double cy, cx, ry, rx, angle;
  // Normalised radius: < 1 inside.
  double rho(double y, double x) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dy = y - cy, dx = x - cx;
    const double u = (c * dx + s * dy) / rx;
    const double v = (-s * dx + c * dy) / ry;
    return std::sqrt(u * u + v * v);
  }
  bool inside(double y, double x) const { return rho(y, x) < 1.0; }
};

struct Anatomy {
  double cy, cx;           // heart centre, mm
  double lv_radius, wall;  // ED, base
  double ellipticity, angle;
  double rv_scale, es_scale;
  bool infarct;
  double infarct_angle;
  double body_ry, body_rx;
  Ellipse lung_l, lung_r;
  Ellipse distractor;
  Ellipse atrium_l, atrium_r;
  double blood, myo, tissue, fat;
  double noise;
  double bias_gy, bias_gx;
  double papillary_angle[2];
  double lvot_angle;
  double ghost_amp;
};

void gaussian_blur(std::vector<float>& img, int h, int w, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  std::vector<float> tmp(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = static_cast<float>(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      img[y * w + x] = static_cast<float>(acc);
    }
}

}  // namespace

PatientStudy generate_phantom(int index, DiseaseGroup group, const PhantomOptions& options) {
  std::mt19937_64 rng(options.seed * 1000003ULL + static_cast<std::uint64_t>(index) * 7919ULL);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  const auto gp = params_for(group);

  PatientStudy study;
  study.patient_id = fmt::format("patient{:03d}", index);
  study.group = group;
  study.ed_frame = 1;
  study.es_frame = std::uniform_int_distribution<int>(8, 14)(rng);

  const double d_inplane = uni(1.37, 1.68);
  const double dz = std::round(uni(5.0, 10.0));
  study.spacing = {d_inplane, d_inplane, dz};
  const int n = std::max(16, static_cast<int>(std::lround(options.fov_mm / d_inplane)));
  const int nz = std::uniform_int_distribution<int>(options.min_slices, options.max_slices)(rng);
  const Shape3 shape{nz, n, n};
  study.original_shape = shape;

  const double fov = n * d_inplane;
  Anatomy a{};
  a.cy = fov / 2 + uni(-10, 10);
  a.cx = fov / 2 + uni(-10, 10) + 8.0;
  a.lv_radius = gp.lv_radius * uni(0.88, 1.12);
  a.wall = gp.wall * uni(0.85, 1.15);
  a.ellipticity = uni(0.85, 1.0);
  a.angle = uni(0, std::numbers::pi);
  a.rv_scale = gp.rv_scale * uni(0.85, 1.15);
  a.es_scale = gp.es_scale * uni(0.95, 1.05);
  a.infarct = gp.infarct;
  a.infarct_angle = uni(0, 2 * std::numbers::pi);
  a.body_ry = fov * uni(0.36, 0.42);
  a.body_rx = fov * uni(0.44, 0.48);
  a.lung_l = {fov / 2 + uni(-8, 8), fov / 2 - fov * 0.28, fov * 0.2, fov * 0.11, uni(-0.3, 0.3)};
  a.lung_r = {fov / 2 + uni(-8, 8), fov / 2 + fov * 0.3, fov * 0.2, fov * 0.1, uni(-0.3, 0.3)};
  // Bright round vessel near the heart that resembles a blood pool.
  const double dang = uni(0, 2 * std::numbers::pi);
  const double ddist = a.lv_radius + a.wall + uni(14, 24);
  const double drad = uni(6, 10);
  a.distractor = {a.cy + ddist * std::sin(dang), a.cx + ddist * std::cos(dang), drad, drad, 0};
  a.atrium_l = {a.cy + uni(-6, 6), a.cx + uni(-4, 4), a.lv_radius * 0.9, a.lv_radius * 1.05, uni(0, 3)};
  a.atrium_r = {a.cy + uni(-6, 6), a.cx - a.lv_radius * 1.6, a.lv_radius * 0.8, a.lv_radius * 0.7, uni(0, 3)};
  a.blood = uni(0.78, 0.92);
  a.myo = uni(0.22, 0.32);
  a.tissue = uni(0.3, 0.42);
  a.fat = uni(0.62, 0.75);
  a.noise = uni(options.noise_min, options.noise_max);
  a.bias_gy = uni(-0.25, 0.25);
  a.bias_gx = uni(-0.25, 0.25);
  a.papillary_angle[0] = uni(0, 2 * std::numbers::pi);
  a.papillary_angle[1] = a.papillary_angle[0] + uni(1.6, 2.6);
  a.lvot_angle = uni(0, 2 * std::numbers::pi);
  a.ghost_amp = uni(0.1, 0.3);

  // Heart spans [apex, base]; one or two empty slices beyond each end.
  const int below = std::uniform_int_distribution<int>(1, 2)(rng);
  const int above = std::uniform_int_distribution<int>(1, 2)(rng);
  const int apex = below;
  const int base = nz - 1 - above;

  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Phase phase : kPhases) {
    const bool es = phase == Phase::ES;
    auto& ph = study.phase(phase);
    ph.image = ImageVolume(shape, 0.0f);
    ph.reference = LabelVolume(shape, 0);
    for (int z = 0; z < nz; ++z) {
      std::vector<float> img(shape.slice_size(), 0.0f);
      const bool heart = z >= apex && z <= base;
      const double s = heart ? (base == apex ? 1.0 : static_cast<double>(z - apex) / (base - apex)) : 0.0;
      const double taper = 0.35 + 0.65 * std::sqrt(s);
      double r_cav = a.lv_radius * taper * (es ? a.es_scale : 1.0);
      double wall = a.wall * (0.8 + 0.2 * s) * (es ? 1.25 : 1.0);
      if (heart && z == apex) r_cav *= 0.6;
      const double r_epi = r_cav + wall;
      const Ellipse cavity{a.cy, a.cx, r_cav * a.ellipticity, r_cav, a.angle};
      const Ellipse epi{a.cy, a.cx, r_epi * a.ellipticity, r_epi, a.angle};
      // RV crescent on the left of the LV (image -x side).
      const double rv_w = (10.0 + 8.0 * s) * a.rv_scale * (es ? 0.75 : 1.0);
      const bool has_rv = heart && s > 0.15;
      const Ellipse rv_outer{a.cy + 2.0, a.cx - r_epi - rv_w * 0.35, (r_epi + 6.0) * (0.9 + 0.2 * a.rv_scale),
                             rv_w + r_epi * 0.45, 0.0};
      const Ellipse septum{a.cy, a.cx, r_epi * a.ellipticity + 2.5, r_epi + 2.5, a.angle};
      // Apical blood pool blends with the wall; contrast recovers towards the base.
      const double blood = heart ? a.myo + (a.blood - a.myo) * std::min(1.0, 0.35 + 1.3 * s) : a.blood;
      const bool atria = !heart && z > base;
      // Papillary muscles: myocardial signal inside the cavity, labelled as cavity.
      const bool papillary = heart && s > 0.15 && s < 0.85;
      Ellipse pap[2];
      for (int i = 0; i < 2; ++i) {
        const double r = r_cav * 0.68, ang = a.papillary_angle[i];
        pap[i] = {a.cy + r * std::sin(ang), a.cx + r * std::cos(ang), r_cav * 0.26, r_cav * 0.3, ang};
      }

      auto& ref = ph.reference;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const double py = (y + 0.5) * d_inplane;
          const double px = (x + 0.5) * d_inplane;
          const double by = (py - fov / 2) / a.body_ry;
          const double bx = (px - fov / 2) / a.body_rx;
          const double body_rho = std::sqrt(by * by + bx * bx);
          double v = 0.02;
          if (body_rho < 1.0) v = body_rho > 0.93 ? a.fat : a.tissue;
          if (a.lung_l.inside(py, px) || a.lung_r.inside(py, px)) v = 0.06;
          if (a.distractor.inside(py, px)) v = a.blood;

          std::uint8_t label = 0;
          if (heart) {
            if (has_rv && rv_outer.inside(py, px) && !septum.inside(py, px)) {
              label = kRV;
              v = blood;
            }
            if (epi.inside(py, px)) {
              label = kLVM;
              v = a.myo;
              const double ang = std::atan2(py - a.cy, px - a.cx);
              const bool outflow = z == base && std::abs(std::remainder(ang - a.lvot_angle, 2 * std::numbers::pi)) < 0.45;
              if (cavity.inside(py, px) || outflow) {
                label = kLV;
                v = blood;
                if (papillary && (pap[0].inside(py, px) || pap[1].inside(py, px))) v = a.myo * 1.1;
              } else if (a.infarct) {
                // Thinned, slightly brighter scar sector.
                const double diff = std::remainder(ang - a.infarct_angle, 2 * std::numbers::pi);
                if (std::abs(diff) < 0.6 && epi.rho(py, px) > 0.8 + 0.2 * (r_cav / r_epi)) {
                  label = kBackground;
                  v = a.tissue;
                }
              }
            } else if (z == base && label == 0) {
              const double ring = epi.rho(py, px);
              if (ring < 1.25 && std::abs(std::atan2(py - a.cy, px - a.cx) - 1.2) < 0.7) v = 0.5 * (blood + a.tissue);
            }
          } else if (atria) {
            if (a.atrium_l.inside(py, px) || a.atrium_r.inside(py, px)) v = a.blood * 0.95;
          }
          img[static_cast<std::size_t>(y) * n + x] = static_cast<float>(v);
          ref(z, y, x) = label;
        }
      gaussian_blur(img, n, n, 0.8);
      // Ghosting along the phase-encode direction on some slices.
      if (heart && uni(0, 1) < 0.35) {
        const int shift = n / 3 + static_cast<int>(uni(-4, 4));
        const auto src = img;
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            const auto i = static_cast<std::size_t>(y) * n + x;
            const auto j = static_cast<std::size_t>((y + shift) % n) * n + x;
            img[i] += static_cast<float>(a.ghost_amp * (src[j] - a.tissue) * (ref(z, (y + shift) % n, x) != 0));
          }
      }
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const double bias = 1.0 + a.bias_gy * (y / double(n) - 0.5) + a.bias_gx * (x / double(n) - 0.5);
          double v = img[static_cast<std::size_t>(y) * n + x] * bias + a.noise * gauss(rng);
          v = std::max(0.0, v);
          ph.image(z, y, x) = static_cast<float>(std::round(v * 1000.0 + 20.0));
        }
    }
  }
  validate_study(study);
  return study;
}

std::vector<PatientStudy> generate_phantom_set(int per_group, const PhantomOptions& options) {
  std::vector<PatientStudy> out;
  int index = 1;
  for (int i = 0; i < per_group; ++i)
    for (DiseaseGroup g : kAllGroups) out.push_back(generate_phantom(index++, g, options));
  return out;
}

std::vector<std::string> write_phantom_dataset(const std::filesystem::path& root, int per_group,
                                               const PhantomOptions& options) {
  std::vector<std::string> ids;
  for (const auto& s : generate_phantom_set(per_group, options)) {
    write_acdc_patient(root, s);
    ids.push_back(s.patient_id);
  }
  return ids;
}

}  // namespace cmr::io
