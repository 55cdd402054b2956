#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmr/nn/networks.hpp"
#include "cmr/seg/probability.hpp"
#include "cmr/seg/types.hpp"
#include "cmr/volume.hpp"

namespace cmr::nn {

struct SegModelConfig {
  seg::Arch arch = seg::Arch::DRN;
  seg::LossKind loss = seg::LossKind::CrossEntropy;
  double dropout_p = 0.1;
  int num_classes = 4;
  int train_patch = 128;  // output patch; DN uses 151
  int iterations = 100000;
  int batch_size = 16;
  double lr = 1e-3;
  int decay_step = 25000;
  double decay = 0.1;
  double snapshot_lr = 0.02;  // DN cyclic schedule
  int snapshot_cycle = 10000;
  double weight_decay = 1e-4;
  double width = 1.0;
  std::uint64_t seed = 0;

  /// Published settings for an architecture and loss.
  static SegModelConfig defaults(seg::Arch arch, seg::LossKind loss);
  void validate() const;
  NetworkOptions network() const;
};

nlohmann::json to_json(const SegModelConfig& c);
SegModelConfig seg_config_from_json(const nlohmann::json& j);

/// Step decay for DRN / U-net; cosine-annealed cycles restarted at
/// snapshot_lr for DN.
double learning_rate(const SegModelConfig& c, int iteration);

struct TrainingSlice {
  Slice2D<float> image;
  Slice2D<std::uint8_t> labels;
};

struct TrainResult {
  std::vector<std::filesystem::path> checkpoints;  // one per DN cycle, else one
  std::vector<double> loss_trace;
};

using ProgressFn = std::function<void(int iteration, double loss, double lr)>;

/// Trains on random patches with random 90-degree rotations. Writes
/// checkpoints atomically plus `config.json` and `loss.csv` into `out_dir`.
/// Throws Divergence on a non-finite loss.
TrainResult train_segmentation(const SegModelConfig& config, const std::vector<TrainingSlice>& data,
                               const std::filesystem::path& out_dir, const ProgressFn& progress = {});

/// Models restored from a training directory (all DN snapshots).
struct SegModel {
  SegModelConfig config;
  std::vector<SegNet> members;
};

SegModel load_segmentation_model(const std::filesystem::path& dir);

/// Draws T stochastic (mc) or T deterministic forward passes per slice.
/// Snapshot members are averaged within each pass. Allows T = 1.
seg::ProbabilityVolume sample_predictions(const SegModel& model, const ImageVolume& image, int T, bool mc,
                                          std::uint64_t seed = 0);

/// MC-dropout inference: requires T >= 2 when mc_enabled. Without MC a
/// single deterministic pass is returned and no samples are kept.
seg::ProbabilityVolume mc_inference(const SegModel& model, const ImageVolume& image, int T = 10,
                                    bool mc_enabled = true, std::uint64_t seed = 0);

/// Softmax of one deterministic or stochastic pass on a (N, 1, H, W) batch,
/// returning probabilities at the input size.
torch::Tensor predict_batch(SegNetImpl& net, const torch::Tensor& images);

void save_atomic(const std::shared_ptr<torch::nn::Module>& module, const std::filesystem::path& path);

}  // namespace cmr::nn
