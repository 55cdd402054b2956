#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmr/volume.hpp"

namespace cmr::io {

enum class DiseaseGroup { NOR, DCM, HCM, MINF, ARV };
inline constexpr std::array<DiseaseGroup, 5> kAllGroups{DiseaseGroup::NOR, DiseaseGroup::DCM, DiseaseGroup::HCM,
                                                        DiseaseGroup::MINF, DiseaseGroup::ARV};

enum class Phase { ED = 0, ES = 1 };
inline constexpr std::array<Phase, 2> kPhases{Phase::ED, Phase::ES};

std::string_view to_string(DiseaseGroup g);
std::string_view to_string(Phase p);
DiseaseGroup parse_group(std::string_view s);
Phase parse_phase(std::string_view s);

struct PhaseData {
  ImageVolume image;
  LabelVolume reference;
};

/// Records how a study was resampled in-plane so the mapping can be inverted.
struct ResampleGeometry {
  Shape3 original_shape;
  Spacing original_spacing;
  Shape3 working_shape;
  Spacing working_spacing;
};

struct PatientStudy {
  std::string patient_id;
  DiseaseGroup group = DiseaseGroup::NOR;
  std::array<PhaseData, 2> phases;
  Spacing spacing;
  Shape3 original_shape;
  int ed_frame = 1;
  int es_frame = 1;
  std::optional<ResampleGeometry> geometry;  // set once preprocessed

  PhaseData& phase(Phase p) { return phases[static_cast<int>(p)]; }
  const PhaseData& phase(Phase p) const { return phases[static_cast<int>(p)]; }
};

/// Throws if labels fall outside {0,1,2,3} or image/reference shapes differ.
void validate_study(const PatientStudy& study);

/// Reads `{root}/{patient_id}/Info.cfg` and the ED/ES frame volumes with
/// their `_gt` reference masks.
PatientStudy load_acdc_patient(const std::filesystem::path& root, const std::string& patient_id);

/// Lists patient directories (those holding an Info.cfg), sorted by name.
std::vector<std::string> list_acdc_patients(const std::filesystem::path& root);

/// Writes a study in ACDC layout. Used by the phantom generator and fixtures.
void write_acdc_patient(const std::filesystem::path& root, const PatientStudy& study);

}  // namespace cmr::io
