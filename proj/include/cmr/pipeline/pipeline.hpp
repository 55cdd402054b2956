#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmr/detect/geometry.hpp"
#include "cmr/eval/report.hpp"
#include "cmr/io/preprocess.hpp"
#include "cmr/pipeline/config.hpp"

namespace cmr::pipeline {

enum class Stage { Ingest, TrainSeg, Infer, Umap, Oracle, TrainDetect, Detect, Correct, Report };
inline constexpr std::array<Stage, 9> kAllStages{Stage::Ingest, Stage::TrainSeg,    Stage::Infer,
                                                 Stage::Umap,   Stage::Oracle,      Stage::TrainDetect,
                                                 Stage::Detect, Stage::Correct,     Stage::Report};

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

/// Direct prerequisites. TrainDetect of a fold needs Umap and Oracle of every
/// other fold as well as its own.
std::vector<Stage> dependencies(Stage s);

/// Hash of the configuration keys a stage (and its prerequisites) reads.
std::string stage_hash(const ExperimentConfig& c, Stage s);

/// Paths of the on-disk experiment layout.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path ingest_dir() const { return root / "ingest"; }
  std::filesystem::path ingest_file(const std::string& pid) const { return ingest_dir() / (pid + ".h5"); }
  std::filesystem::path folds_file() const { return root / "folds.json"; }
  std::filesystem::path fold_dir(int f) const { return root / ("fold" + std::to_string(f)); }
  std::filesystem::path seg_checkpoint(int f) const { return fold_dir(f) / "checkpoints" / "segmentation"; }
  std::filesystem::path detector_checkpoint(int f) const { return fold_dir(f) / "checkpoints" / "detector"; }
  std::filesystem::path probs_file(int f, const std::string& pid) const;
  std::filesystem::path labels_file(int f, const std::string& pid) const;
  std::filesystem::path corrected_file(int f, const std::string& pid) const;
  std::filesystem::path umap_file(int f, const std::string& pid) const;
  std::filesystem::path failure_file(int f, const std::string& pid) const;
  std::filesystem::path detection_file(int f, const std::string& pid) const;
  std::filesystem::path reports_dir(int f) const { return fold_dir(f) / "reports"; }
  std::filesystem::path report_file() const { return root / "report.json"; }
  std::filesystem::path marker(Stage s, std::optional<int> fold) const;
  std::filesystem::path lock_file() const { return root / ".lock"; }
  std::filesystem::path provenance_file() const { return root / "provenance.json"; }
};

/// Exclusive writer lock on an experiment directory (O_EXCL lock file).
class ExperimentLock {
 public:
  explicit ExperimentLock(const std::filesystem::path& root);
  ~ExperimentLock();
  ExperimentLock(const ExperimentLock&) = delete;
  ExperimentLock& operator=(const ExperimentLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// A preprocessed study plus the original-resolution data kept for
/// evaluation.
struct IngestedStudy {
  io::PatientStudy working;   // 1.4 mm grid, intensities in [0, 1]
  io::PatientStudy original;  // as loaded
};

void write_ingested(const std::filesystem::path& path, const IngestedStudy& s);
IngestedStudy read_ingested(const std::filesystem::path& path);

/// Per-phase automatic labels of one patient.
struct PredictedLabels {
  std::array<LabelVolume, 2> working;   // largest components on the working grid
  std::array<LabelVolume, 2> original;  // mapped back to the original grid
};
PredictedLabels read_labels(const std::filesystem::path& path);
std::array<LabelVolume, 2> read_corrected(const std::filesystem::path& path);

/// Uncertainty maps of one patient, per phase.
unc::UncertaintyMap read_umap(const std::filesystem::path& path, io::Phase phase, unc::MapKind kind);
MaskVolume read_failure_mask(const std::filesystem::path& path, io::Phase phase);

nlohmann::json to_json(const detect::DetectionResult& r);
detect::DetectionResult detection_from_json(const nlohmann::json& j);
std::array<detect::DetectionResult, 2> read_detections(const std::filesystem::path& path);

using LogFn = std::function<void(const std::string&)>;

struct RunOptions {
  bool force = false;
  LogFn log;
};

struct StageOutcome {
  Stage stage;
  std::optional<int> fold;
  bool skipped = false;
};

struct RunResult {
  std::vector<StageOutcome> outcomes;
  std::vector<std::filesystem::path> reports;
};

/// Runs the requested stages in dependency order. Completed stages whose
/// recorded hash matches are skipped unless forced. A requested stage whose
/// prerequisites are neither requested nor completed raises
/// MissingDependency. Takes the experiment lock for the duration.
RunResult run_pipeline(const ExperimentConfig& config, const std::set<Stage>& stages, const RunOptions& options = {});

enum class AblationKind { McSamples, PatchSize, Tolerance };
AblationKind parse_ablation(std::string_view s);
std::string_view to_string(AblationKind k);

/// Swept values: T in {1,3,5,7,10,20,30,60}, patch size in {4,8,16},
/// tolerance 0..10 voxels.
std::vector<int> ablation_values(AblationKind k);

/// Runs a sweep over `values` (defaults to ablation_values) on an experiment
/// whose prerequisite stages are complete. Writes
/// `{root}/ablation/{kind}.csv` and `.json`; returns the JSON.
nlohmann::json run_ablation(AblationKind kind, const ExperimentConfig& config, std::vector<int> values = {},
                            const RunOptions& options = {});

/// Patient ids of a fold's test set, from folds.json.
std::vector<std::string> fold_patients(const Layout& layout, int fold);
io::FoldSplit read_folds(const Layout& layout);

/// Mean Dice of automatic segmentations of `pids` re-inferred with T
/// samples. Shared by the T ablation and the acceptance run.
double mean_dice_with_samples(const ExperimentConfig& config, int fold, const std::vector<std::string>& pids, int T);

}  // namespace cmr::pipeline
