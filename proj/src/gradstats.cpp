#include "skpn/gradstats.hpp"

#include <stdexcept>

namespace skpn {

StrengthNorm parse_strength_norm(const std::string& name) {
  if (name == "raw") return StrengthNorm::kRaw;
  if (name == "sqrt-over-kr") return StrengthNorm::kSqrtOverPatch;
  throw std::invalid_argument("unknown strength normalisation '" + name + "' (raw | sqrt-over-kr)");
}

std::string to_string(StrengthNorm norm) {
  return norm == StrengthNorm::kRaw ? "raw" : "sqrt-over-kr";
}

}  // namespace skpn
