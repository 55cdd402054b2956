#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmr/eval/metrics.hpp"
#include "cmr/volume.hpp"

namespace cmr::eval {

/// Structures in reporting order with their label values.
inline constexpr std::array<std::uint8_t, 3> kStructures{kLV, kRV, kLVM};
std::string_view structure_name(std::uint8_t label);

struct CaseMetrics {
  std::string patient_id;
  // [phase ED=0/ES=1][structure index in kStructures]
  std::array<std::array<double, 3>, 2> dice{};
  std::array<std::array<std::optional<double>, 3>, 2> hausdorff{};
  std::optional<ClinicalMetrics> clinical;
  std::optional<ClinicalMetrics> reference_clinical;

  /// Mean Dice over the three structures and both phases.
  double mean_dice() const;
};

CaseMetrics evaluate_case(const std::string& patient_id, const LabelVolume& pred_ed, const LabelVolume& pred_es,
                          const LabelVolume& ref_ed, const LabelVolume& ref_es, const Spacing& spacing);

/// Per-structure/phase summaries plus clinical agreement across cases.
nlohmann::json summarize(const std::vector<CaseMetrics>& cases);

/// Deltas (after - before) and Mann-Whitney p-values per metric.
nlohmann::json compare(const std::vector<CaseMetrics>& before, const std::vector<CaseMetrics>& after);

nlohmann::json to_json(const CaseMetrics& m);

}  // namespace cmr::eval
