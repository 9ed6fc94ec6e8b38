#include "qdm/half.hpp"

#include <bit>

namespace qdm {

std::uint16_t float_to_half(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::uint32_t fexp = (x >> 23) & 0xffu;
  std::uint32_t mant = x & 0x7fffffu;

  if (fexp == 0xffu)  // inf / nan, keep a payload bit so nan stays nan
    return static_cast<std::uint16_t>(sign | 0x7c00u |
                                      (mant ? (0x200u | (mant >> 13)) : 0u));

  const int exp = static_cast<int>(fexp) - 127 + 15;
  if (exp >= 0x1f) return static_cast<std::uint16_t>(sign | 0x7c00u);
  if (exp <= 0) {
    if (exp < -10) return static_cast<std::uint16_t>(sign);  // below half of the smallest subnormal
    mant |= 0x800000u;
    const int shift = 14 - exp;  // 14..24
    std::uint32_t val = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (val & 1u))) ++val;
    // A carry out of the mantissa lands on the smallest normal, which is
    // exactly the right result.
    return static_cast<std::uint16_t>(sign | val);
  }
  std::uint32_t val = (static_cast<std::uint32_t>(exp) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (val & 1u))) ++val;  // may carry into the exponent; that is correct rounding
  if (val >= 0x7c00u) val = 0x7c00u;
  return static_cast<std::uint16_t>(sign | val);
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t x;
  if (exp == 0) {
    if (mant == 0) {
      x = sign;
    } else {
      int e = 0;
      while (!(mant & 0x400u)) {
        mant <<= 1;
        ++e;
      }
      mant &= 0x3ffu;
      // subnormal value = mant * 2^-24; after e shifts the exponent is -15 - e + 1
      x = sign | (static_cast<std::uint32_t>(127 - 14 - e) << 23) | (mant << 13);
    }
  } else if (exp == 0x1fu) {
    x = sign | 0x7f800000u | (mant << 13);
  } else {
    x = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(x);
}

}  // namespace qdm
