#include "cmr/eval/report.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace cmr::eval {
namespace {

constexpr std::array<const char*, 2> kPhaseNames{"ED", "ES"};

struct Summary {
  double mean = 0;
  double sd = 0;
  std::size_t n = 0;
};

Summary summary_of(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / (v.size() - 1));
  }
  return s;
}

nlohmann::json summary_json(const std::vector<double>& v) {
  const auto s = summary_of(v);
  return {{"mean", s.mean}, {"sd", s.sd}, {"n", s.n}};
}

nlohmann::json clinical_json(const ClinicalMetrics& c) {
  return {{"LV_EDV", c.lv_edv}, {"LV_ESV", c.lv_esv}, {"LV_EF", c.lv_ef}, {"RV_EDV", c.rv_edv},
          {"RV_ESV", c.rv_esv}, {"RV_EF", c.rv_ef},   {"LVM_mass", c.lvm_mass}};
}

using ClinicalField = double ClinicalMetrics::*;
const std::array<std::pair<const char*, ClinicalField>, 5> kClinicalFields{{
    {"LV_EDV", &ClinicalMetrics::lv_edv},
    {"LV_EF", &ClinicalMetrics::lv_ef},
    {"RV_EDV", &ClinicalMetrics::rv_edv},
    {"RV_EF", &ClinicalMetrics::rv_ef},
    {"LVM_mass", &ClinicalMetrics::lvm_mass},
}};

}  // namespace

std::string_view structure_name(std::uint8_t label) {
  switch (label) {
    case kLV: return "LV";
    case kRV: return "RV";
    case kLVM: return "LVM";
    default: return "BG";
  }
}

double CaseMetrics::mean_dice() const {
  double s = 0;
  for (const auto& phase : dice)
    for (double d : phase) s += d;
  return s / 6.0;
}

CaseMetrics evaluate_case(const std::string& patient_id, const LabelVolume& pred_ed, const LabelVolume& pred_es,
                          const LabelVolume& ref_ed, const LabelVolume& ref_es, const Spacing& spacing) {
  CaseMetrics m;
  m.patient_id = patient_id;
  const std::array<const LabelVolume*, 2> preds{&pred_ed, &pred_es};
  const std::array<const LabelVolume*, 2> refs{&ref_ed, &ref_es};
  for (int p = 0; p < 2; ++p)
    for (std::size_t s = 0; s < kStructures.size(); ++s) {
      m.dice[p][s] = dice_3d(*preds[p], *refs[p], kStructures[s]);
      try {
        m.hausdorff[p][s] = hausdorff_3d(*preds[p], *refs[p], kStructures[s], spacing);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::UndefinedMetric) throw;
      }
    }
  try {
    m.clinical = clinical_metrics(pred_ed, pred_es, spacing);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UndefinedMetric) throw;
  }
  try {
    m.reference_clinical = clinical_metrics(ref_ed, ref_es, spacing);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UndefinedMetric) throw;
  }
  return m;
}

nlohmann::json to_json(const CaseMetrics& m) {
  nlohmann::json j;
  j["patient_id"] = m.patient_id;
  for (int p = 0; p < 2; ++p)
    for (std::size_t s = 0; s < kStructures.size(); ++s) {
      const std::string key = std::string(structure_name(kStructures[s])) + "_" + kPhaseNames[p];
      j["dice"][key] = m.dice[p][s];
      j["hausdorff_mm"][key] = m.hausdorff[p][s] ? nlohmann::json(*m.hausdorff[p][s]) : nlohmann::json(nullptr);
    }
  j["clinical"] = m.clinical ? clinical_json(*m.clinical) : nlohmann::json(nullptr);
  j["reference_clinical"] = m.reference_clinical ? clinical_json(*m.reference_clinical) : nlohmann::json(nullptr);
  j["mean_dice"] = m.mean_dice();
  return j;
}

namespace {

std::vector<double> dice_values(const std::vector<CaseMetrics>& cases, int p, std::size_t s) {
  std::vector<double> v;
  for (const auto& c : cases) v.push_back(c.dice[p][s]);
  return v;
}

std::vector<double> hd_values(const std::vector<CaseMetrics>& cases, int p, std::size_t s) {
  std::vector<double> v;
  for (const auto& c : cases)
    if (c.hausdorff[p][s]) v.push_back(*c.hausdorff[p][s]);
  return v;
}

}  // namespace

nlohmann::json summarize(const std::vector<CaseMetrics>& cases) {
  nlohmann::json j;
  j["cases"] = cases.size();
  for (int p = 0; p < 2; ++p)
    for (std::size_t s = 0; s < kStructures.size(); ++s) {
      const std::string key = std::string(structure_name(kStructures[s])) + "_" + kPhaseNames[p];
      j["dice"][key] = summary_json(dice_values(cases, p, s));
      j["hausdorff_mm"][key] = summary_json(hd_values(cases, p, s));
    }
  std::vector<double> mean_dice;
  for (const auto& c : cases) mean_dice.push_back(c.mean_dice());
  j["mean_dice"] = summary_json(mean_dice);

  for (const auto& [name, field] : kClinicalFields) {
    std::vector<double> a, r;
    for (const auto& c : cases)
      if (c.clinical && c.reference_clinical) {
        a.push_back((*c.clinical).*field);
        r.push_back((*c.reference_clinical).*field);
      }
    try {
      const auto ag = agreement_stats(a, r);
      j["clinical"][name] = {{"pearson", ag.pearson}, {"bias", ag.bias}, {"bias_sd", ag.bias_sd}, {"mae", ag.mae}};
    } catch (const Error&) {
      j["clinical"][name] = nullptr;
    }
  }
  return j;
}

nlohmann::json compare(const std::vector<CaseMetrics>& before, const std::vector<CaseMetrics>& after) {
  nlohmann::json j;
  auto add = [&](const std::string& group, const std::string& key, const std::vector<double>& b,
                 const std::vector<double>& a) {
    if (b.empty() || a.empty()) {
      j[group][key] = nullptr;
      return;
    }
    const auto sb = summary_of(b);
    const auto sa = summary_of(a);
    j[group][key] = {{"before", sb.mean}, {"after", sa.mean}, {"delta", sa.mean - sb.mean},
                     {"p_value", mann_whitney_u(b, a)}};
  };
  for (int p = 0; p < 2; ++p)
    for (std::size_t s = 0; s < kStructures.size(); ++s) {
      const std::string key = std::string(structure_name(kStructures[s])) + "_" + kPhaseNames[p];
      add("dice", key, dice_values(before, p, s), dice_values(after, p, s));
      add("hausdorff_mm", key, hd_values(before, p, s), hd_values(after, p, s));
    }
  std::vector<double> mb, ma;
  for (const auto& c : before) mb.push_back(c.mean_dice());
  for (const auto& c : after) ma.push_back(c.mean_dice());
  add("summary", "mean_dice", mb, ma);
  for (const auto& [name, field] : kClinicalFields) {
    std::vector<double> b, a;
    for (const auto& c : before)
      if (c.clinical) b.push_back((*c.clinical).*field);
    for (const auto& c : after)
      if (c.clinical) a.push_back((*c.clinical).*field);
    add("clinical", name, b, a);
  }
  return j;
}

}  // namespace cmr::eval
