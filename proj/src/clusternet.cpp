#include "aeromtl/clusternet.hpp"

namespace aeromtl {

std::string_view to_string(GateMode mode) noexcept { return mode == GateMode::Soft ? "soft" : "hard"; }

GateMode gate_mode_from_string(std::string_view name) {
  if (name == "soft") return GateMode::Soft;
  if (name == "hard") return GateMode::Hard;
  throw InvalidArgument("unknown gate mode '" + std::string(name) + "'");
}

}  // namespace aeromtl
