#pragma once

#include <torch/torch.h>

#include "cmr/seg/types.hpp"

namespace cmr::nn {

enum class Reduction { Sum, Mean };

/// Per-class soft-Dice score over a batch, shape (C). `probs` is (N, C, H, W)
/// softmax output and `target` (N, H, W) integer labels.
/// score_c = (factor * sum p*r + eps) / (sum p + sum r + eps)
torch::Tensor soft_dice_score(const torch::Tensor& probs, const torch::Tensor& target, double factor = 2.0,
                              double eps = 1.0);

/// mean_c (1 - score_c).
torch::Tensor soft_dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double factor = 2.0,
                             double eps = 1.0);

/// -sum t log p with log clamped at 1e-7; Sum is over voxels and classes,
/// Mean divides by the voxel count.
torch::Tensor cross_entropy_loss(const torch::Tensor& probs, const torch::Tensor& target,
                                 Reduction reduction = Reduction::Sum);

/// sum (p - t)^2 over classes; reduced over voxels.
torch::Tensor brier_loss(const torch::Tensor& probs, const torch::Tensor& target, Reduction reduction = Reduction::Sum);

/// Training objective for the given loss kind (mean reductions).
torch::Tensor segmentation_loss(seg::LossKind kind, const torch::Tensor& probs, const torch::Tensor& target);

/// Weighted binary cross-entropy over region probabilities `p` of failure and
/// binary labels `t`: -sum [w t log p + (1 - t) log(1 - p)], logs clamped at 1e-7.
torch::Tensor detection_loss(const torch::Tensor& p, const torch::Tensor& t, double w_pos,
                             Reduction reduction = Reduction::Sum);

}  // namespace cmr::nn
