#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmr/detect/geometry.hpp"
#include "cmr/nn/networks.hpp"
#include "cmr/nn/segmentation.hpp"
#include "cmr/unc/uncertainty.hpp"

namespace cmr::nn {

struct DetectorConfig {
  int patch_size = 8;
  unc::MapKind umap_kind = unc::MapKind::Entropy;
  double w_pos = 0.0;  // 0: derive from the training failure sets
  int iterations = 20000;
  int batch_size = 32;
  double lr = 1e-4;
  int decay_step = 10000;
  double decay = 0.1;
  double dropout_p = 0.5;
  int crop = 80;
  double forced_positive_fraction = 1.0 / 3.0;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const DetectorConfig& c);
DetectorConfig detector_config_from_json(const nlohmann::json& j);

/// One training slice on the working grid.
struct DetectionSlice {
  Slice2D<float> image;
  Slice2D<float> umap;
  Slice2D<std::uint8_t> failures;  // failure-set voxel mask
};

struct DetectionBatch {
  torch::Tensor inputs;  // (N, 2, crop, crop)
  torch::Tensor labels;  // (N, crop/p, crop/p), 0/1
  int forced = 0;        // leading crops guaranteed to hold a failure
};

/// floor(batch * fraction) crops centred on a random failure voxel, the
/// rest uniformly placed. Offsets are multiples of the patch size so label
/// cells coincide with the slice's patch grid. Throws NoPositives when no
/// slice holds a failure.
DetectionBatch sample_training_batch(const std::vector<DetectionSlice>& data, int batch_size,
                                     double forced_positive_fraction, int crop, int patch_size, std::mt19937_64& rng);

struct DetectorTrainResult {
  std::filesystem::path checkpoint;
  double w_pos = 0;
  std::vector<double> loss_trace;
};

DetectorTrainResult train_detector(const DetectorConfig& config, const std::vector<DetectionSlice>& data,
                                   const std::filesystem::path& out_dir, const ProgressFn& progress = {});

struct Detector {
  DetectorConfig config;
  SResNet net{nullptr};
};

Detector load_detector(const std::filesystem::path& dir);

/// Per-slice failure probabilities inside the detection crop around the
/// automatic segmentation, thresholded into flagged regions. Throws
/// UmapKindMismatch when `umap` differs from the kind used in training.
detect::DetectionResult detect_failure_regions(Detector& detector, const ImageVolume& image,
                                               const unc::UncertaintyMap& umap, const LabelVolume& auto_seg,
                                               double threshold = 0.5);

}  // namespace cmr::nn
