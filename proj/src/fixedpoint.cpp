#include "qdm/fixedpoint.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace qdm {

double QFormat::lsb() const { return std::ldexp(1.0, -n); }
double QFormat::min_value() const { return -std::ldexp(1.0, m); }
double QFormat::max_value() const { return std::ldexp(1.0, m) - lsb(); }

QFormat make_qformat(int m, int n) {
  if (m < 0 || n < 0)
    throw std::invalid_argument("qformat: negative field width");
  if (m + n + 1 < 2 || m + n + 1 > 32)
    throw std::invalid_argument("qformat: word_bits must be in [2, 32], got " +
                                std::to_string(m + n + 1));
  return QFormat{m, n};
}

std::int64_t saturate_raw(std::int64_t raw, QFormat fmt) {
  if (raw < fmt.raw_min()) return fmt.raw_min();
  if (raw > fmt.raw_max()) return fmt.raw_max();
  return raw;
}

QScalar quantize(double x, QFormat fmt, QRound mode) {
  if (!std::isfinite(x)) throw std::invalid_argument("quantize: non-finite input");
  const double scaled = std::ldexp(x, fmt.n);
  // Saturate before the integer conversion; scaled may exceed any int64.
  if (scaled <= static_cast<double>(fmt.raw_min()))
    return {static_cast<std::int32_t>(fmt.raw_min()), fmt};
  if (scaled >= static_cast<double>(fmt.raw_max()))
    return {static_cast<std::int32_t>(fmt.raw_max()), fmt};
  // nearbyint rounds half to even under the default FE_TONEAREST mode,
  // which this library never changes.
  const double r = (mode == QRound::nearest_even) ? std::nearbyint(scaled)
                                                  : std::floor(scaled);
  const std::int64_t raw = saturate_raw(static_cast<std::int64_t>(r), fmt);
  return {static_cast<std::int32_t>(raw), fmt};
}

double dequantize(const QScalar& q) { return dequantize_raw(q.raw, q.fmt.n); }

double dequantize_raw(std::int64_t raw, int n) {
  return std::ldexp(static_cast<double>(raw), -n);
}

int bits_for_range(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi))
    throw std::invalid_argument("bits_for_range: non-finite bound");
  if (lo > hi) throw std::invalid_argument("bits_for_range: lo > hi");
  for (int m = 0; m <= 1024; ++m) {
    const double bound = std::ldexp(1.0, m);
    if (lo >= -bound && hi < bound) return m;
  }
  // Unreachable: every finite double fits below 2^1024.
  throw std::invalid_argument("bits_for_range: unrepresentable range");
}

std::int64_t qmac(std::int64_t acc, const QScalar& a, const QScalar& b) {
  if (a.fmt.word_bits() != b.fmt.word_bits())
    throw std::invalid_argument("qmac: operands must share word_bits");
  return qmac_raw(acc, a.raw, b.raw);
}

std::int64_t qmac_raw(std::int64_t acc, std::int64_t a_raw, std::int64_t b_raw) {
  std::int64_t prod = 0;
  std::int64_t out = 0;
  if (__builtin_mul_overflow(a_raw, b_raw, &prod)) throw accumulator_overflow();
  if (__builtin_add_overflow(acc, prod, &out)) throw accumulator_overflow();
  return out;
}

std::int64_t shift_round_half_even(std::int64_t v, int shift) {
  if (shift <= 0) {
    const int k = -shift;
    if (k == 0) return v;
    if (k >= 63) throw accumulator_overflow();
    if (v > (std::numeric_limits<std::int64_t>::max() >> k) ||
        v < (std::numeric_limits<std::int64_t>::min() >> k))
      throw accumulator_overflow();
    return v << k;
  }
  if (shift >= 64) return 0;  // |v| < 2^63, so |v / 2^shift| < 1/2
  // Arithmetic right shift floors, so the remainder is non-negative.
  std::int64_t q = v >> shift;
  const std::int64_t r = v - (q << shift);
  const std::int64_t half = std::int64_t(1) << (shift - 1);
  if (r > half || (r == half && (q & 1))) ++q;
  return q;
}

QScalar requantize(std::int64_t acc, int frac_bits, QFormat fmt) {
  const std::int64_t wide = shift_round_half_even(acc, frac_bits - fmt.n);
  return {static_cast<std::int32_t>(saturate_raw(wide, fmt)), fmt};
}

}  // namespace qdm
