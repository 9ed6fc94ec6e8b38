#pragma once

#include <cstdint>
#include <stdexcept>

namespace qdm {

// Rounding policy for real -> raw conversion. nearest_even is the default
// everywhere; floor_scaled (floor(x * 2^n)) exists for replicating runs that
// used truncating conversion and costs up to a full lsb of error.
enum class QRound { nearest_even, floor_scaled };

// Thrown when a wide accumulator would wrap. Accumulation never wraps
// silently; saturation is applied only at the requantize step.
struct accumulator_overflow : std::runtime_error {
  accumulator_overflow() : std::runtime_error("accumulator overflow") {}
};

// Signed fixed-point format Qm.n: one sign bit, m integer bits, n fractional
// bits, word_bits = m + n + 1. Values live in [-2^m, 2^m - 2^-n] on a grid
// of step 2^-n.
struct QFormat {
  int m = 6;
  int n = 9;

  constexpr int word_bits() const { return m + n + 1; }
  constexpr std::int64_t raw_min() const { return -(std::int64_t(1) << (m + n)); }
  constexpr std::int64_t raw_max() const { return (std::int64_t(1) << (m + n)) - 1; }
  double lsb() const;
  double min_value() const;
  double max_value() const;
  bool operator==(const QFormat&) const = default;
};

// Validates m >= 0, n >= 0 and word_bits <= 32.
QFormat make_qformat(int m, int n);

// One quantized value: raw integer code plus its format.
struct QScalar {
  std::int32_t raw = 0;
  QFormat fmt;
};

// Nearest representable value, saturating at the range ends.
// Throws std::invalid_argument for non-finite x.
QScalar quantize(double x, QFormat fmt, QRound mode = QRound::nearest_even);

double dequantize(const QScalar& q);
double dequantize_raw(std::int64_t raw, int n);

// Smallest m >= 0 such that -2^m <= lo and hi < 2^m.
// Throws std::invalid_argument if lo > hi or either bound is non-finite.
int bits_for_range(double lo, double hi);

// acc + a.raw * b.raw. The product carries n_a + n_b fractional bits; both
// operands must share word_bits. Overflow of the 64-bit accumulator throws.
std::int64_t qmac(std::int64_t acc, const QScalar& a, const QScalar& b);
std::int64_t qmac_raw(std::int64_t acc, std::int64_t a_raw, std::int64_t b_raw);

// v / 2^shift with round-half-to-even, exact in integer arithmetic.
// Negative shift multiplies and throws on overflow.
std::int64_t shift_round_half_even(std::int64_t v, int shift);

// Clamp a wide raw value into fmt's word range.
std::int64_t saturate_raw(std::int64_t raw, QFormat fmt);

// Rescale an accumulator holding frac_bits fractional bits into fmt,
// rounding half to even and saturating.
QScalar requantize(std::int64_t acc, int frac_bits, QFormat fmt);

}  // namespace qdm
