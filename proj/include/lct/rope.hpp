#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lct/error.hpp"

namespace lct::rope {

/// Per-pair rotation frequencies: freqs[i] = theta^(-2i/head_dim).
///
/// Pairing convention is adjacent: (v[2i], v[2i+1]) rotates by position * freqs[i].
/// The split-half layout used by some model families is intentionally not supported.
struct RopeTable {
  int head_dim = 0;
  double theta = 0.0;
  std::vector<double> freqs;
};

inline RopeTable build_table(int head_dim, double theta) {
  if (head_dim < 2 || head_dim % 2 != 0) {
    throw Error(ErrorKind::OddHeadDim, "head_dim must be even and >= 2, got " + std::to_string(head_dim));
  }
  if (!(theta > 0.0) || !std::isfinite(theta)) throw Error(ErrorKind::NonPositiveTheta, "theta must be positive");
  RopeTable t{head_dim, theta, std::vector<double>(static_cast<std::size_t>(head_dim / 2))};
  for (int i = 0; i < head_dim / 2; ++i) {
    t.freqs[static_cast<std::size_t>(i)] = std::pow(theta, -2.0 * i / head_dim);
  }
  return t;
}

/// Rotation angle of pair `pair` at `position`, always in double.
inline double angle(const RopeTable& table, std::int64_t position, int pair) {
  return static_cast<double>(position) * table.freqs[static_cast<std::size_t>(pair)];
}

template <std::floating_point T>
void apply_inplace(std::span<T> v, std::int64_t position, const RopeTable& table) {
  if (static_cast<int>(v.size()) != table.head_dim) {
    throw Error(ErrorKind::DimensionMismatch,
                "vector has " + std::to_string(v.size()) + " elements, table expects " + std::to_string(table.head_dim));
  }
  if (position == 0) return;
  for (int i = 0; i < table.head_dim / 2; ++i) {
    const double a = angle(table, position, i);
    const double c = std::cos(a), s = std::sin(a);
    const double x = v[2 * i], y = v[2 * i + 1];
    v[2 * i] = static_cast<T>(x * c - y * s);
    v[2 * i + 1] = static_cast<T>(x * s + y * c);
  }
}

template <std::floating_point T>
std::vector<T> apply(std::span<const T> v, std::int64_t position, const RopeTable& table) {
  std::vector<T> out(v.begin(), v.end());
  apply_inplace(std::span<T>(out), position, table);
  return out;
}

/// Precomputed cos/sin for positions [0, length), laid out [position][pair].
/// Used by the toy transformer, which rotates every head at every position.
template <std::floating_point T>
struct RotationCache {
  int length = 0;
  int pairs = 0;
  std::vector<T> cos;
  std::vector<T> sin;

  RotationCache() = default;
  RotationCache(const RopeTable& table, int len)
      : length(len), pairs(table.head_dim / 2),
        cos(static_cast<std::size_t>(len) * pairs), sin(static_cast<std::size_t>(len) * pairs) {
    for (int p = 0; p < len; ++p) {
      for (int i = 0; i < pairs; ++i) {
        const double a = angle(table, p, i);
        cos[static_cast<std::size_t>(p) * pairs + i] = static_cast<T>(std::cos(a));
        sin[static_cast<std::size_t>(p) * pairs + i] = static_cast<T>(std::sin(a));
      }
    }
  }

  /// Rotates one head vector at `position`; `inverse` rotates by the negative angle
  /// (the adjoint, used when backpropagating through the rotation).
  void rotate(T* v, int position, bool inverse = false) const {
    const T* c = cos.data() + static_cast<std::size_t>(position) * pairs;
    const T* s = sin.data() + static_cast<std::size_t>(position) * pairs;
    for (int i = 0; i < pairs; ++i) {
      const T x = v[2 * i], y = v[2 * i + 1];
      const T si = inverse ? -s[i] : s[i];
      v[2 * i] = x * c[i] - y * si;
      v[2 * i + 1] = x * si + y * c[i];
    }
  }
};

}  // namespace lct::rope
