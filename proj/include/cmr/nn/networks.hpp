#pragma once

#include <memory>

#include <torch/torch.h>

#include "cmr/seg/types.hpp"

namespace cmr::nn {

struct NetworkOptions {
  seg::Arch arch = seg::Arch::DRN;
  double dropout_p = 0.1;
  int num_classes = 4;
  double width = 1.0;  // channel multiplier; 1.0 is the published size
};

/// Segmentation network producing per-class logits. `input_margin` is the
/// number of voxels lost on each side (valid convolutions) and
/// `size_multiple` the divisor required of the padded input.
class SegNetImpl : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(torch::Tensor x) = 0;
  virtual int input_margin() const { return 0; }
  virtual int size_multiple() const { return 1; }
  virtual seg::Arch arch() const = 0;
};
using SegNet = std::shared_ptr<SegNetImpl>;

/// Throws UnknownArchitecture for unsupported architectures and
/// InvalidArgument for bad options.
SegNet build_segmentation_model(const NetworkOptions& options);

/// Puts the model in inference mode; with `mc` the dropout layers stay
/// stochastic.
void set_inference_mode(torch::nn::Module& model, bool mc);

struct DetectorOptions {
  int patch_size = 8;  // 4, 8 or 16
  double dropout_p = 0.5;
  int in_channels = 2;
};

/// Patch-level failure classifier: maps (N, 2, H, W) with H, W multiples of
/// the patch size to (N, 2, H/p, W/p) logits.
class SResNetImpl : public torch::nn::Module {
 public:
  explicit SResNetImpl(const DetectorOptions& options = {});
  torch::Tensor forward(torch::Tensor x);
  int patch_size() const { return options_.patch_size; }

 private:
  DetectorOptions options_;
  torch::nn::Sequential features_{nullptr};
  torch::nn::Sequential classifier_{nullptr};
};
TORCH_MODULE(SResNet);

SResNet build_detector(const DetectorOptions& options = {});

}  // namespace cmr::nn
