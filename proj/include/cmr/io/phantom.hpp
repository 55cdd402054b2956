#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cmr/io/study.hpp"

namespace cmr::io {

/// Synthetic short-axis cine phantoms: elliptical LV cavity, annular
/// myocardium, crescent RV, embedded in a body with lungs, a bright
/// distractor vessel and atria above the base. Disease groups change
/// chamber size, wall thickness and contraction.
struct PhantomOptions {
  double fov_mm = 179.2;
  int min_slices = 8;
  int max_slices = 10;
  double noise_min = 0.04;
  double noise_max = 0.10;
  std::uint64_t seed = 1;
};

PatientStudy generate_phantom(int index, DiseaseGroup group, const PhantomOptions& options = {});

/// `per_group` patients for each of the five groups, ids patient001...
std::vector<PatientStudy> generate_phantom_set(int per_group, const PhantomOptions& options = {});

/// Generates the set and writes it in ACDC layout under `root`.
std::vector<std::string> write_phantom_dataset(const std::filesystem::path& root, int per_group,
                                               const PhantomOptions& options = {});

}  // namespace cmr::io
