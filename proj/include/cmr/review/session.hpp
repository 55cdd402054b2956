#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmr/detect/geometry.hpp"
#include "cmr/eval/report.hpp"
#include "cmr/io/preprocess.hpp"
#include "cmr/unc/uncertainty.hpp"
#include "cmr/volume.hpp"

namespace cmr::review {

/// Everything the reviewer sees for one patient, on the original grid.
struct ReviewCase {
  std::string patient_id;
  int fold = 0;
  io::DiseaseGroup group = io::DiseaseGroup::NOR;
  Spacing spacing;
  std::array<ImageVolume, 2> image;        // intensities in [0, 1]
  std::array<LabelVolume, 2> auto_seg;
  std::array<LabelVolume, 2> reference;
  std::array<MaskVolume, 2> flagged;       // voxels inside flagged regions
  std::array<std::vector<detect::VoxelRegion>, 2> regions;
  std::array<ImageVolume, 2> uncertainty;  // optional overlay, may be empty
};

/// Voxel runs within one slice: (raster start, length) pairs.
using Runs = std::vector<std::pair<int, int>>;

/// Expands runs into raster indices; throws EditRejected on malformed or
/// out-of-slice runs.
std::vector<int> expand_runs(const Runs& runs, int slice_size);

/// Value runs of a label slice, [[value, length], ...].
nlohmann::json encode_label_rle(std::span<const std::uint8_t> values);
std::vector<std::uint8_t> decode_label_rle(const nlohmann::json& rle, std::size_t n);

struct AuditEntry {
  std::string timestamp;
  int z = 0;
  std::uint8_t label = 0;
  Runs runs;
  int voxels = 0;
};

enum class SessionStatus { Open, Submitted };

struct SessionReport {
  eval::CaseMetrics before;
  eval::CaseMetrics after;
  nlohmann::json to_json(io::Phase phase) const;
};

struct CorrectionSession {
  std::string session_id;
  std::string patient_id;
  io::Phase phase = io::Phase::ED;
  LabelVolume edited_mask;
  std::vector<AuditEntry> audit_log;
  SessionStatus status = SessionStatus::Open;
  long long version = 0;
  std::optional<SessionReport> report;
};

/// Applies the audit log to the automatic mask.
LabelVolume replay_audit(const LabelVolume& auto_seg, const std::vector<AuditEntry>& log);

/// Case catalogue plus session state. Thread-safe: reads share a lock,
/// each mutation takes it exclusively.
class ReviewService {
 public:
  /// `store_dir` receives submitted masks and audit logs; may be empty.
  ReviewService(std::vector<ReviewCase> cases, std::filesystem::path store_dir = {});

  nlohmann::json list_cases() const;
  nlohmann::json slice_payload(const std::string& patient_id, io::Phase phase, int z) const;

  CorrectionSession create_session(const std::string& patient_id, io::Phase phase);

  /// All-or-nothing: rejects the whole edit when any voxel lies outside the
  /// flagged regions. `expected_version` must equal the session version.
  CorrectionSession apply_manual_edit(const std::string& session_id, long long expected_version, int z,
                                      const Runs& runs, int label);

  SessionReport submit_session(const std::string& session_id);
  CorrectionSession session(const std::string& session_id) const;
  const ReviewCase& find_case(const std::string& patient_id) const;

 private:
  std::vector<ReviewCase> cases_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, CorrectionSession> sessions_;
  std::filesystem::path store_dir_;
  mutable std::shared_mutex mutex_;
  std::uint64_t next_id_ = 1;
};

/// Before/after metrics of one phase with the other phase left automatic.
SessionReport phase_report(const ReviewCase& c, io::Phase phase, const LabelVolume& corrected);

/// Review cases of an experiment (test patients of the configured folds).
std::vector<ReviewCase> load_review_cases(const std::filesystem::path& experiment_root,
                                          const std::vector<int>& folds, unc::MapKind umap_kind);

/// Maps a working-grid region to the original grid rectangle it covers.
detect::VoxelRegion region_to_original(const detect::VoxelRegion& r, const io::ResampleGeometry& g);

}  // namespace cmr::review
