#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace lct {

namespace detail {

// Rounds a double to a binary16-sized IEEE-like format with ExpBits exponent
// bits and ManBits stored mantissa bits, round-to-nearest-even, overflow to inf.
template <int ExpBits, int ManBits>
constexpr std::uint16_t narrow_rne(double x) noexcept {
  static_assert(1 + ExpBits + ManBits == 16);
  constexpr int bias = (1 << (ExpBits - 1)) - 1;
  constexpr int emin = 1 - bias;
  constexpr std::uint16_t exp_all_ones = (1u << ExpBits) - 1;
  constexpr std::uint16_t inf_bits = exp_all_ones << ManBits;

  const std::uint16_t sign = std::signbit(x) ? 0x8000u : 0u;
  if (std::isnan(x)) return sign | inf_bits | (1u << (ManBits - 1));
  const double a = std::fabs(x);
  if (std::isinf(a)) return sign | inf_bits;
  if (a == 0.0) return sign;

  int e = std::ilogb(a);
  const bool subnormal = e < emin;
  const int quantum_exp = (subnormal ? emin : e) - ManBits;
  double n = std::nearbyint(std::ldexp(a, -quantum_exp));
  if (subnormal) {
    // n == 2^ManBits lands exactly on the smallest normal's bit pattern.
    return sign | static_cast<std::uint16_t>(n);
  }
  if (n == std::ldexp(1.0, ManBits + 1)) {
    ++e;
    n = std::ldexp(1.0, ManBits);
  }
  if (e > bias) return sign | inf_bits;
  const auto mantissa = static_cast<std::uint16_t>(n - std::ldexp(1.0, ManBits));
  return sign | static_cast<std::uint16_t>((e + bias) << ManBits) | mantissa;
}

}  // namespace detail

inline double f16_to_double(std::uint16_t bits) noexcept {
  const bool negative = bits & 0x8000u;
  const int exp = (bits >> 10) & 0x1F;
  const int man = bits & 0x3FF;
  double v;
  if (exp == 0) {
    v = std::ldexp(static_cast<double>(man), -24);
  } else if (exp == 0x1F) {
    v = man ? std::nan("") : INFINITY;
  } else {
    v = std::ldexp(static_cast<double>(man | 0x400), exp - 25);
  }
  return negative ? -v : v;
}

inline double bf16_to_double(std::uint16_t bits) noexcept {
  return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

inline std::uint16_t double_to_f16(double x) noexcept { return detail::narrow_rne<5, 10>(x); }
inline std::uint16_t double_to_bf16(double x) noexcept { return detail::narrow_rne<8, 7>(x); }

}  // namespace lct
