#pragma once

#include <string_view>

namespace cmr::seg {

enum class Arch { DN, DRN, UNet };
enum class LossKind { SoftDice, CrossEntropy, Brier };

std::string_view to_string(Arch a);
std::string_view to_string(LossKind l);
Arch parse_arch(std::string_view s);
LossKind parse_loss(std::string_view s);

}  // namespace cmr::seg
