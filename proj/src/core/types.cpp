#include "cmr/seg/types.hpp"

#include <string>

#include "cmr/error.hpp"

namespace cmr::seg {

std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::DN: return "DN";
    case Arch::DRN: return "DRN";
    case Arch::UNet: return "U-net";
  }
  return "DRN";
}

std::string_view to_string(LossKind l) {
  switch (l) {
    case LossKind::SoftDice: return "soft_dice";
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::Brier: return "brier";
  }
  return "cross_entropy";
}

Arch parse_arch(std::string_view s) {
  if (s == "DN" || s == "dn") return Arch::DN;
  if (s == "DRN" || s == "drn") return Arch::DRN;
  if (s == "U-net" || s == "unet" || s == "UNet" || s == "u-net") return Arch::UNet;
  throw Error(ErrorCode::UnknownArchitecture, std::string(s));
}

LossKind parse_loss(std::string_view s) {
  if (s == "soft_dice" || s == "soft-dice" || s == "SD" || s == "soft-Dice" || s == "dice") return LossKind::SoftDice;
  if (s == "cross_entropy" || s == "CE" || s == "ce") return LossKind::CrossEntropy;
  if (s == "brier" || s == "Brier") return LossKind::Brier;
  throw Error(ErrorCode::InvalidArgument, "unknown loss: " + std::string(s));
}

}  // namespace cmr::seg
