#include "cmr/nn/losses.hpp"

#include "cmr/error.hpp"

namespace cmr::nn {
namespace {

constexpr double kLogClamp = 1e-7;

torch::Tensor one_hot(const torch::Tensor& probs, const torch::Tensor& target) {
  if (probs.dim() != 4 || target.dim() != 3 || probs.size(0) != target.size(0) || probs.size(2) != target.size(1) ||
      probs.size(3) != target.size(2))
    throw Error(ErrorCode::ShapeMismatch, "probabilities (N,C,H,W) and labels (N,H,W) disagree");
  return torch::one_hot(target.to(torch::kLong), probs.size(1)).permute({0, 3, 1, 2}).to(probs.dtype());
}

torch::Tensor reduce(const torch::Tensor& per_voxel, Reduction r) {
  return r == Reduction::Sum ? per_voxel.sum() : per_voxel.mean();
}

}  // namespace

torch::Tensor soft_dice_score(const torch::Tensor& probs, const torch::Tensor& target, double factor, double eps) {
  const auto r = one_hot(probs, target);
  const std::vector<int64_t> dims{0, 2, 3};
  const auto inter = (probs * r).sum(dims);
  const auto denom = probs.sum(dims) + r.sum(dims);
  return (factor * inter + eps) / (denom + eps);
}

torch::Tensor soft_dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double factor, double eps) {
  return (1.0 - soft_dice_score(probs, target, factor, eps)).mean();
}

torch::Tensor cross_entropy_loss(const torch::Tensor& probs, const torch::Tensor& target, Reduction reduction) {
  const auto t = one_hot(probs, target);
  return reduce(-(t * torch::log(probs.clamp_min(kLogClamp))).sum(1), reduction);
}

torch::Tensor brier_loss(const torch::Tensor& probs, const torch::Tensor& target, Reduction reduction) {
  const auto t = one_hot(probs, target);
  return reduce((probs - t).pow(2).sum(1), reduction);
}

torch::Tensor segmentation_loss(seg::LossKind kind, const torch::Tensor& probs, const torch::Tensor& target) {
  switch (kind) {
    case seg::LossKind::SoftDice: return soft_dice_loss(probs, target);
    case seg::LossKind::CrossEntropy: return cross_entropy_loss(probs, target, Reduction::Mean);
    case seg::LossKind::Brier: return brier_loss(probs, target, Reduction::Mean);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown loss");
}

torch::Tensor detection_loss(const torch::Tensor& p, const torch::Tensor& t, double w_pos, Reduction reduction) {
  if (!p.sizes().equals(t.sizes())) throw Error(ErrorCode::ShapeMismatch, "detection probabilities and labels differ");
  const auto tt = t.to(p.dtype());
  const auto per = -(w_pos * tt * torch::log(p.clamp_min(kLogClamp)) +
                     (1.0 - tt) * torch::log((1.0 - p).clamp_min(kLogClamp)));
  return reduce(per, reduction);
}

}  // namespace cmr::nn
