#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <fmt/format.h>

#include "cmr/io/array_store.hpp"
#include "cmr/io/text_file.hpp"
#include "cmr/pipeline/pipeline.hpp"

namespace cmr::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string phase_key(io::Phase p, const char* what) { return fmt::format("{}_{}", io::to_string(p), what); }

json spacing_json(const Spacing& s) { return json::array({s.dx, s.dy, s.dz}); }
Spacing spacing_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
json shape_json(const Shape3& s) { return json::array({s.z, s.h, s.w}); }
Shape3 shape_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()}; }

}  // namespace

fs::path Layout::probs_file(int f, const std::string& pid) const { return fold_dir(f) / "pred_probs" / (pid + ".h5"); }
fs::path Layout::labels_file(int f, const std::string& pid) const { return fold_dir(f) / "pred_labels" / (pid + ".h5"); }
fs::path Layout::corrected_file(int f, const std::string& pid) const {
  return fold_dir(f) / "pred_labels" / (pid + "_corrected.h5");
}
fs::path Layout::umap_file(int f, const std::string& pid) const { return fold_dir(f) / "umaps" / (pid + ".h5"); }
fs::path Layout::failure_file(int f, const std::string& pid) const {
  return fold_dir(f) / "failure_sets" / (pid + ".h5");
}
fs::path Layout::detection_file(int f, const std::string& pid) const {
  return fold_dir(f) / "detections" / (pid + ".json");
}
fs::path Layout::marker(Stage s, std::optional<int> fold) const {
  const fs::path base = fold ? fold_dir(*fold) : root;
  return base / ".done" / (std::string(to_string(s)) + ".json");
}

ExperimentLock::ExperimentLock(const fs::path& root) : path_(root / ".lock") {
  fs::create_directories(root);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw Error(ErrorCode::IoError,
                  fmt::format("{} is locked by another run; remove {} if no run is active", root.string(),
                              path_.string()));
    throw Error(ErrorCode::IoError, fmt::format("cannot create {}: {}", path_.string(), std::strerror(errno)));
  }
  const auto pid = std::to_string(::getpid());
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

ExperimentLock::~ExperimentLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void write_ingested(const fs::path& path, const IngestedStudy& s) {
  fs::create_directories(path.parent_path());
  io::ArrayWriter w(path);
  for (io::Phase p : io::kPhases) {
    w.write(phase_key(p, "image"), s.working.phase(p).image);
    w.write(phase_key(p, "reference"), s.working.phase(p).reference);
    w.write(phase_key(p, "original_image"), s.original.phase(p).image);
    w.write(phase_key(p, "original_reference"), s.original.phase(p).reference);
  }
  const auto& g = *s.working.geometry;
  json meta{{"patient_id", s.original.patient_id},
            {"group", io::to_string(s.original.group)},
            {"spacing", spacing_json(s.original.spacing)},
            {"original_shape", shape_json(s.original.original_shape)},
            {"ed_frame", s.original.ed_frame},
            {"es_frame", s.original.es_frame},
            {"working_shape", shape_json(g.working_shape)},
            {"working_spacing", spacing_json(g.working_spacing)}};
  w.set_attribute("meta", meta.dump());
  w.commit();
}

IngestedStudy read_ingested(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingDependency, "missing ingested study " + path.string());
  io::ArrayReader r(path);
  const auto meta = json::parse(r.attribute("meta"));
  IngestedStudy s;
  auto& o = s.original;
  o.patient_id = meta.at("patient_id").get<std::string>();
  o.group = io::parse_group(meta.at("group").get<std::string>());
  o.spacing = spacing_from(meta.at("spacing"));
  o.original_shape = shape_from(meta.at("original_shape"));
  o.ed_frame = meta.at("ed_frame").get<int>();
  o.es_frame = meta.at("es_frame").get<int>();
  s.working = o;
  s.working.geometry =
      io::ResampleGeometry{o.original_shape, o.spacing, shape_from(meta.at("working_shape")),
                           spacing_from(meta.at("working_spacing"))};
  for (io::Phase p : io::kPhases) {
    s.working.phase(p).image = r.read_image(phase_key(p, "image"));
    s.working.phase(p).reference = r.read_labels(phase_key(p, "reference"));
    o.phase(p).image = r.read_image(phase_key(p, "original_image"));
    o.phase(p).reference = r.read_labels(phase_key(p, "original_reference"));
  }
  return s;
}

PredictedLabels read_labels(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingDependency, "missing predictions " + path.string());
  io::ArrayReader r(path);
  PredictedLabels out;
  for (io::Phase p : io::kPhases) {
    out.working[static_cast<int>(p)] = r.read_labels(phase_key(p, "working"));
    out.original[static_cast<int>(p)] = r.read_labels(phase_key(p, "original"));
  }
  return out;
}

std::array<LabelVolume, 2> read_corrected(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingDependency, "missing corrected labels " + path.string());
  io::ArrayReader r(path);
  return {r.read_labels(phase_key(io::Phase::ED, "corrected")), r.read_labels(phase_key(io::Phase::ES, "corrected"))};
}

unc::UncertaintyMap read_umap(const fs::path& path, io::Phase phase, unc::MapKind kind) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingDependency, "missing uncertainty maps " + path.string());
  io::ArrayReader r(path);
  const auto name = phase_key(phase, std::string(unc::to_string(kind)).c_str());
  if (!r.has(name))
    throw Error(ErrorCode::MissingDependency, fmt::format("{} holds no {} map", path.string(), unc::to_string(kind)));
  const auto meta = json::parse(r.attribute("meta"));
  unc::UncertaintyMap m;
  m.kind = kind;
  m.values = r.read_image(name);
  m.source.arch = seg::parse_arch(meta.at("arch").get<std::string>());
  m.source.loss = seg::parse_loss(meta.at("loss").get<std::string>());
  m.source.mc_enabled = meta.at("mc_enabled").get<bool>();
  if (m.source.mc_enabled) m.T = meta.at("T").get<int>();
  return m;
}

MaskVolume read_failure_mask(const fs::path& path, io::Phase phase) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingDependency, "missing failure set " + path.string());
  io::ArrayReader r(path);
  return r.read_labels(phase_key(phase, "failures"));
}

json to_json(const detect::DetectionResult& r) {
  json slices = json::array();
  for (const auto& s : r.slices)
    slices.push_back({{"z", s.z},
                      {"crop_offset", {s.rect.row, s.rect.col}},
                      {"crop_size", {s.rect.height, s.rect.width}},
                      {"patch_size", s.patch_size},
                      {"rows", s.rows},
                      {"cols", s.cols},
                      {"probs", s.probs}});
  json flagged = json::array();
  for (const auto& f : r.flagged_regions) flagged.push_back({f.z, f.grid_row, f.grid_col});
  return {{"volume_shape", shape_json(r.volume_shape)},
          {"decision_threshold", r.decision_threshold},
          {"slices", slices},
          {"flagged_regions", flagged}};
}

detect::DetectionResult detection_from_json(const json& j) {
  detect::DetectionResult r;
  r.volume_shape = shape_from(j.at("volume_shape"));
  r.decision_threshold = j.at("decision_threshold").get<double>();
  for (const auto& s : j.at("slices")) {
    detect::SliceDetection d;
    d.z = s.at("z").get<int>();
    d.rect = {s.at("crop_offset").at(0).get<int>(), s.at("crop_offset").at(1).get<int>(),
              s.at("crop_size").at(0).get<int>(), s.at("crop_size").at(1).get<int>()};
    d.patch_size = s.at("patch_size").get<int>();
    d.rows = s.at("rows").get<int>();
    d.cols = s.at("cols").get<int>();
    d.probs = s.at("probs").get<std::vector<float>>();
    if (d.probs.size() != static_cast<std::size_t>(d.rows) * d.cols)
      throw Error(ErrorCode::ShapeMismatch, "detection grid size");
    r.slices.push_back(std::move(d));
  }
  for (const auto& f : j.at("flagged_regions"))
    r.flagged_regions.push_back({f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>()});
  return r;
}

std::array<detect::DetectionResult, 2> read_detections(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingDependency, "missing detections " + path.string());
  const auto j = json::parse(io::read_text(path));
  return {detection_from_json(j.at("ED")), detection_from_json(j.at("ES"))};
}

io::FoldSplit read_folds(const Layout& layout) {
  if (!fs::exists(layout.folds_file()))
    throw Error(ErrorCode::MissingDependency, "missing " + layout.folds_file().string() + "; run ingest first");
  const auto j = json::parse(io::read_text(layout.folds_file()));
  io::FoldSplit split;
  split.k = j.at("k").get<int>();
  split.seed = j.at("seed").get<std::uint64_t>();
  split.assignments = j.at("assignments").get<std::map<std::string, int>>();
  return split;
}

std::vector<std::string> fold_patients(const Layout& layout, int fold) { return read_folds(layout).test_patients(fold); }

}  // namespace cmr::pipeline
