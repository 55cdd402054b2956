#include "cmr/review/session.hpp"

#include <chrono>

#include <fmt/format.h>

#include "cmr/io/array_store.hpp"
#include "cmr/io/png.hpp"
#include "cmr/io/text_file.hpp"
#include "cmr/pipeline/pipeline.hpp"

namespace cmr::review {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int idx(io::Phase p) { return static_cast<int>(p); }

std::string now_iso() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  return fmt::format("{}.{:03d}Z", buf, ms);
}

json audit_json(const AuditEntry& e) {
  json runs = json::array();
  for (const auto& [s, n] : e.runs) runs.push_back({s, n});
  return {{"timestamp", e.timestamp}, {"z", e.z}, {"label", e.label}, {"runs", runs}, {"voxels", e.voxels}};
}

}  // namespace

std::vector<int> expand_runs(const Runs& runs, int slice_size) {
  std::vector<int> out;
  for (const auto& [start, len] : runs) {
    if (start < 0 || len <= 0 || start > slice_size - len)
      throw Error(ErrorCode::EditRejected, fmt::format("run ({}, {}) outside the slice", start, len));
    for (int i = 0; i < len; ++i) out.push_back(start + i);
  }
  return out;
}

json encode_label_rle(std::span<const std::uint8_t> values) {
  json out = json::array();
  std::size_t i = 0;
  while (i < values.size()) {
    std::size_t j = i;
    while (j < values.size() && values[j] == values[i]) ++j;
    out.push_back({values[i], j - i});
    i = j;
  }
  return out;
}

std::vector<std::uint8_t> decode_label_rle(const json& rle, std::size_t n) {
  std::vector<std::uint8_t> out;
  out.reserve(n);
  for (const auto& run : rle) {
    const auto v = run.at(0).get<int>();
    const auto len = run.at(1).get<long long>();
    if (v < 0 || v > 255 || len < 0 || out.size() + static_cast<std::size_t>(len) > n)
      throw Error(ErrorCode::InvalidArgument, "malformed label runs");
    out.insert(out.end(), static_cast<std::size_t>(len), static_cast<std::uint8_t>(v));
  }
  if (out.size() != n) throw Error(ErrorCode::InvalidArgument, "label runs do not cover the slice");
  return out;
}

LabelVolume replay_audit(const LabelVolume& auto_seg, const std::vector<AuditEntry>& log) {
  LabelVolume m = auto_seg;
  const int n = static_cast<int>(m.shape().slice_size());
  for (const auto& e : log) {
    auto s = m.slice(e.z);
    for (int i : expand_runs(e.runs, n)) s[i] = e.label;
  }
  return m;
}

json SessionReport::to_json(io::Phase phase) const {
  const int p = idx(phase);
  json delta;
  for (std::size_t s = 0; s < eval::kStructures.size(); ++s) {
    const auto name = std::string(eval::structure_name(eval::kStructures[s]));
    delta["dice"][name] = after.dice[p][s] - before.dice[p][s];
    const auto& hb = before.hausdorff[p][s];
    const auto& ha = after.hausdorff[p][s];
    delta["hausdorff_mm"][name] = hb && ha ? json(*ha - *hb) : json();
  }
  delta["mean_dice"] = after.mean_dice() - before.mean_dice();
  return {{"phase", io::to_string(phase)},
          {"before", eval::to_json(before)},
          {"after", eval::to_json(after)},
          {"delta", delta}};
}

SessionReport phase_report(const ReviewCase& c, io::Phase phase, const LabelVolume& corrected) {
  SessionReport r;
  r.before = eval::evaluate_case(c.patient_id, c.auto_seg[0], c.auto_seg[1], c.reference[0], c.reference[1], c.spacing);
  auto after = c.auto_seg;
  after[idx(phase)] = corrected;
  r.after = eval::evaluate_case(c.patient_id, after[0], after[1], c.reference[0], c.reference[1], c.spacing);
  return r;
}

ReviewService::ReviewService(std::vector<ReviewCase> cases, fs::path store_dir)
    : cases_(std::move(cases)), store_dir_(std::move(store_dir)) {
  for (std::size_t i = 0; i < cases_.size(); ++i) {
    const auto& c = cases_[i];
    for (io::Phase p : io::kPhases) {
      const auto shape = c.image[idx(p)].shape();
      if (!(c.auto_seg[idx(p)].shape() == shape) || !(c.reference[idx(p)].shape() == shape) ||
          !(c.flagged[idx(p)].shape() == shape))
        throw Error(ErrorCode::ShapeMismatch, "review case " + c.patient_id + " has inconsistent volumes");
    }
    if (!index_.emplace(c.patient_id, i).second)
      throw Error(ErrorCode::InvalidArgument, "duplicate review case " + c.patient_id);
  }
}

const ReviewCase& ReviewService::find_case(const std::string& patient_id) const {
  const auto it = index_.find(patient_id);
  if (it == index_.end()) throw Error(ErrorCode::NotFound, "unknown case " + patient_id);
  return cases_[it->second];
}

json ReviewService::list_cases() const {
  json out = json::array();
  for (const auto& c : cases_) {
    json phases;
    for (io::Phase p : io::kPhases) {
      const auto& s = c.image[idx(p)].shape();
      phases[std::string(io::to_string(p))] = {{"shape", {s.z, s.h, s.w}},
                                               {"flagged_regions", c.regions[idx(p)].size()}};
    }
    out.push_back({{"patient_id", c.patient_id},
                   {"fold", c.fold},
                   {"group", io::to_string(c.group)},
                   {"spacing", {c.spacing.dx, c.spacing.dy, c.spacing.dz}},
                   {"phases", phases}});
  }
  return out;
}

json ReviewService::slice_payload(const std::string& patient_id, io::Phase phase, int z) const {
  const auto& c = find_case(patient_id);
  const int p = idx(phase);
  const auto& img = c.image[p];
  if (z < 0 || z >= img.depth())
    throw Error(ErrorCode::NotFound, fmt::format("slice {} outside [0, {})", z, img.depth()));
  json regions = json::array();
  for (const auto& r : c.regions[p])
    if (r.z == z) regions.push_back({{"y0", r.y0}, {"x0", r.x0}, {"y1", r.y1}, {"x1", r.x1}});
  json out{{"patient_id", patient_id},
           {"phase", io::to_string(phase)},
           {"z", z},
           {"shape", {img.height(), img.width()}},
           {"image_png", io::base64_encode(io::encode_png_gray(extract_slice(img, z)))},
           {"mask", encode_label_rle(c.auto_seg[p].slice(z))},
           {"flagged", {{"mask", encode_label_rle(c.flagged[p].slice(z))}, {"regions", regions}}}};
  if (!c.uncertainty[p].empty())
    out["uncertainty_png"] = io::base64_encode(io::encode_png_gray(extract_slice(c.uncertainty[p], z)));
  return out;
}

CorrectionSession ReviewService::create_session(const std::string& patient_id, io::Phase phase) {
  std::unique_lock lock(mutex_);
  const auto& c = find_case(patient_id);
  CorrectionSession s;
  s.session_id = fmt::format("s{:06d}", next_id_++);
  s.patient_id = patient_id;
  s.phase = phase;
  s.edited_mask = c.auto_seg[idx(phase)];
  sessions_.emplace(s.session_id, s);
  return s;
}

CorrectionSession ReviewService::apply_manual_edit(const std::string& session_id, long long expected_version, int z,
                                                   const Runs& runs, int label) {
  std::unique_lock lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "unknown session " + session_id);
  auto& s = it->second;
  if (s.status == SessionStatus::Submitted) throw Error(ErrorCode::SessionClosed, session_id + " is submitted");
  if (expected_version != s.version)
    throw Error(ErrorCode::StaleVersion, fmt::format("session at version {}, edit based on {}", s.version, expected_version));
  if (label < 0 || label >= kNumClasses) throw Error(ErrorCode::EditRejected, fmt::format("label {} invalid", label));
  const auto& flagged = find_case(s.patient_id).flagged[idx(s.phase)];
  if (z < 0 || z >= flagged.depth()) throw Error(ErrorCode::EditRejected, fmt::format("slice {} outside volume", z));
  const auto voxels = expand_runs(runs, static_cast<int>(flagged.shape().slice_size()));
  if (voxels.empty()) throw Error(ErrorCode::EditRejected, "empty edit");
  const auto allowed = flagged.slice(z);
  for (int v : voxels)
    if (!allowed[v])
      throw Error(ErrorCode::EditRejected,
                  fmt::format("voxel ({}, {}) of slice {} lies outside the flagged regions", v / flagged.width(),
                              v % flagged.width(), z));
  auto target = s.edited_mask.slice(z);
  for (int v : voxels) target[v] = static_cast<std::uint8_t>(label);
  s.audit_log.push_back({now_iso(), z, static_cast<std::uint8_t>(label), runs, static_cast<int>(voxels.size())});
  ++s.version;
  return s;
}

SessionReport ReviewService::submit_session(const std::string& session_id) {
  std::unique_lock lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "unknown session " + session_id);
  auto& s = it->second;
  if (s.status == SessionStatus::Submitted) throw Error(ErrorCode::SessionClosed, session_id + " already submitted");
  const auto& c = find_case(s.patient_id);
  s.report = phase_report(c, s.phase, s.edited_mask);
  if (!store_dir_.empty()) {
    fs::create_directories(store_dir_);
    io::ArrayWriter w(store_dir_ / (session_id + ".h5"));
    w.write("corrected", s.edited_mask);
    w.set_attribute("meta", json{{"patient_id", s.patient_id}, {"phase", io::to_string(s.phase)}}.dump());
    w.commit();
    json audit = json::array();
    for (const auto& e : s.audit_log) audit.push_back(audit_json(e));
    io::write_text_atomic(store_dir_ / (session_id + "_audit.json"),
                          json{{"session_id", session_id},
                               {"patient_id", s.patient_id},
                               {"phase", io::to_string(s.phase)},
                               {"audit_log", audit},
                               {"report", s.report->to_json(s.phase)}}
                              .dump(2));
  }
  s.status = SessionStatus::Submitted;
  ++s.version;
  return *s.report;
}

CorrectionSession ReviewService::session(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "unknown session " + session_id);
  return it->second;
}

detect::VoxelRegion region_to_original(const detect::VoxelRegion& r, const io::ResampleGeometry& g) {
  auto range = [](int lo, int hi, int work_n, int orig_n) {
    int first = -1, last = -1;
    for (int i = 0; i < orig_n; ++i) {
      const int s = io::nearest_source(i, work_n, orig_n);
      if (s >= lo && s < hi) {
        if (first < 0) first = i;
        last = i;
      }
    }
    return first < 0 ? std::pair{0, 0} : std::pair{first, last + 1};
  };
  const auto [y0, y1] = range(r.y0, r.y1, g.working_shape.h, g.original_shape.h);
  const auto [x0, x1] = range(r.x0, r.x1, g.working_shape.w, g.original_shape.w);
  return {r.z, y0, x0, y1, x1};
}

std::vector<ReviewCase> load_review_cases(const fs::path& root, const std::vector<int>& folds, unc::MapKind umap_kind) {
  const pipeline::Layout layout{root};
  std::vector<ReviewCase> out;
  for (int f : folds) {
    for (const auto& pid : pipeline::fold_patients(layout, f)) {
      const auto s = pipeline::read_ingested(layout.ingest_file(pid));
      const auto labels = pipeline::read_labels(layout.labels_file(f, pid));
      const auto det = pipeline::read_detections(layout.detection_file(f, pid));
      const auto& g = *s.working.geometry;
      ReviewCase c;
      c.patient_id = pid;
      c.fold = f;
      c.group = s.original.group;
      c.spacing = s.original.spacing;
      for (io::Phase p : io::kPhases) {
        const int i = idx(p);
        c.image[i] = s.original.phase(p).image;
        io::rescale_intensity(c.image[i]);
        c.auto_seg[i] = labels.original[i];
        c.reference[i] = s.original.phase(p).reference;
        c.flagged[i] = io::mask_to_original_grid(detect::region_mask(det[i]), g);
        for (const auto& r : detect::flagged_voxel_regions(det[i])) c.regions[i].push_back(region_to_original(r, g));
        const auto umap_path = layout.umap_file(f, pid);
        if (fs::exists(umap_path))
          c.uncertainty[i] = io::image_to_original_grid(pipeline::read_umap(umap_path, p, umap_kind).values, g);
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace cmr::review
