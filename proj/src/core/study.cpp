#include "cmr/io/study.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "cmr/io/nifti.hpp"

namespace cmr::io {
namespace fs = std::filesystem;

std::string_view to_string(DiseaseGroup g) {
  switch (g) {
    case DiseaseGroup::NOR: return "NOR";
    case DiseaseGroup::DCM: return "DCM";
    case DiseaseGroup::HCM: return "HCM";
    case DiseaseGroup::MINF: return "MINF";
    case DiseaseGroup::ARV: return "RV";
  }
  return "NOR";
}

std::string_view to_string(Phase p) { return p == Phase::ED ? "ED" : "ES"; }

DiseaseGroup parse_group(std::string_view s) {
  if (s == "NOR") return DiseaseGroup::NOR;
  if (s == "DCM") return DiseaseGroup::DCM;
  if (s == "HCM") return DiseaseGroup::HCM;
  if (s == "MINF") return DiseaseGroup::MINF;
  if (s == "RV" || s == "ARV") return DiseaseGroup::ARV;
  throw Error(ErrorCode::MalformedHeader, fmt::format("unknown disease group '{}'", s));
}

Phase parse_phase(std::string_view s) {
  if (s == "ED") return Phase::ED;
  if (s == "ES") return Phase::ES;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown phase '{}'", s));
}

void validate_study(const PatientStudy& study) {
  for (Phase p : kPhases) {
    const auto& ph = study.phase(p);
    if (!(ph.image.shape() == ph.reference.shape()))
      throw Error(ErrorCode::ShapeMismatch, study.patient_id + " image/reference shape differ");
    for (auto v : ph.reference.data()) {
      if (v > 3) throw Error(ErrorCode::LabelOutOfRange, fmt::format("{} label {}", study.patient_id, int(v)));
    }
  }
  if (!(study.spacing.dx > 0 && study.spacing.dy > 0 && study.spacing.dz > 0))
    throw Error(ErrorCode::MalformedHeader, study.patient_id + " non-positive spacing");
}

namespace {

std::map<std::string, std::string> read_info(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::MissingFile, file.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, colon))] = trim(line.substr(colon + 1));
  }
  return kv;
}

fs::path find_volume(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    auto p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  throw Error(ErrorCode::MissingFile, (dir / (stem + ".nii.gz")).string());
}

int parse_int(const std::map<std::string, std::string>& kv, const std::string& key, const fs::path& file) {
  auto it = kv.find(key);
  if (it == kv.end()) throw Error(ErrorCode::MalformedHeader, fmt::format("{} lacks '{}'", file.string(), key));
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw Error(ErrorCode::MalformedHeader, fmt::format("{}: bad value for '{}'", file.string(), key));
  }
}

}  // namespace

PatientStudy load_acdc_patient(const fs::path& root, const std::string& patient_id) {
  const fs::path dir = root / patient_id;
  const fs::path info_file = dir / "Info.cfg";
  const auto info = read_info(info_file);

  PatientStudy study;
  study.patient_id = patient_id;
  study.ed_frame = parse_int(info, "ED", info_file);
  study.es_frame = parse_int(info, "ES", info_file);
  auto group = info.find("Group");
  if (group == info.end()) throw Error(ErrorCode::MalformedHeader, info_file.string() + " lacks 'Group'");
  study.group = parse_group(group->second);

  for (Phase p : kPhases) {
    const int frame = p == Phase::ED ? study.ed_frame : study.es_frame;
    const std::string stem = fmt::format("{}_frame{:02d}", patient_id, frame);
    const auto img = read_nifti(find_volume(dir, stem));
    const auto ref = read_nifti(find_volume(dir, stem + "_gt"));
    if (img.dims != ref.dims) throw Error(ErrorCode::ShapeMismatch, stem + " image/reference dims differ");

    const Shape3 shape{img.dims[2], img.dims[1], img.dims[0]};
    auto& ph = study.phase(p);
    ph.image = ImageVolume(shape, img.data);
    std::vector<std::uint8_t> labels(ref.data.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const float v = std::round(ref.data[i]);
      if (v < 0.0f || v > 3.0f)
        throw Error(ErrorCode::LabelOutOfRange, fmt::format("{}: label {}", stem, ref.data[i]));
      labels[i] = static_cast<std::uint8_t>(v);
    }
    ph.reference = LabelVolume(shape, std::move(labels));
    if (p == Phase::ED) {
      study.original_shape = shape;
      study.spacing = {img.pixdim[0], img.pixdim[1], img.pixdim[2]};
    } else if (!(shape == study.original_shape)) {
      throw Error(ErrorCode::ShapeMismatch, patient_id + " ED/ES shapes differ");
    }
  }
  validate_study(study);
  return study;
}

std::vector<std::string> list_acdc_patients(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::MissingFile, root.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "Info.cfg")) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void write_acdc_patient(const fs::path& root, const PatientStudy& study) {
  const fs::path dir = root / study.patient_id;
  fs::create_directories(dir);
  {
    std::ofstream info(dir / "Info.cfg");
    info << "ED: " << study.ed_frame << "\n"
         << "ES: " << study.es_frame << "\n"
         << "Group: " << to_string(study.group) << "\n"
         << "NbFrame: " << std::max(study.ed_frame, study.es_frame) << "\n";
  }
  for (Phase p : kPhases) {
    const int frame = p == Phase::ED ? study.ed_frame : study.es_frame;
    const std::string stem = fmt::format("{}_frame{:02d}", study.patient_id, frame);
    const auto& ph = study.phase(p);
    NiftiVolume img;
    img.dims = {ph.image.width(), ph.image.height(), ph.image.depth()};
    img.pixdim = {study.spacing.dx, study.spacing.dy, study.spacing.dz};
    img.data = ph.image.data();
    write_nifti(dir / (stem + ".nii.gz"), img, NiftiStorage::Float32);
    NiftiVolume ref = img;
    ref.data.assign(ph.reference.data().begin(), ph.reference.data().end());
    write_nifti(dir / (stem + "_gt.nii.gz"), ref, NiftiStorage::UInt8);
  }
}

}  // namespace cmr::io
