#pragma once

#include <cstdint>

namespace qdm {

// IEEE 754 binary16 conversion for weight storage. Round to nearest even,
// subnormals preserved, overflow goes to infinity. Compute never happens in
// half precision; loaders widen back to float.
std::uint16_t float_to_half(float f);
float half_to_float(std::uint16_t h);

}  // namespace qdm
