#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>

#include "svdscope/error.hpp"

namespace svdscope {

enum class DType { F64, F32, F16, BF16 };

inline std::string_view dtype_name(DType t) {
  switch (t) {
    case DType::F64: return "F64";
    case DType::F32: return "F32";
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
  }
  return "?";
}

inline std::optional<DType> parse_dtype(std::string_view s) {
  if (s == "F64") return DType::F64;
  if (s == "F32") return DType::F32;
  if (s == "F16") return DType::F16;
  if (s == "BF16") return DType::BF16;
  return std::nullopt;
}

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F64: return 8;
    case DType::F32: return 4;
    case DType::F16:
    case DType::BF16: return 2;
  }
  return 0;
}

namespace detail {

// Binary16: 11-bit significand, normal exponents in [-14, 15].
inline double half_to_double(std::uint16_t h) {
  const int sign = (h >> 15) & 1;
  const int exp = (h >> 10) & 0x1f;
  const int frac = h & 0x3ff;
  double v;
  if (exp == 0) {
    v = std::ldexp(static_cast<double>(frac), -24);
  } else if (exp == 0x1f) {
    v = frac == 0 ? INFINITY : NAN;
  } else {
    v = std::ldexp(static_cast<double>(frac | 0x400), exp - 25);
  }
  return sign ? -v : v;
}

inline double bf16_to_double(std::uint16_t b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b) << 16;
  return static_cast<double>(std::bit_cast<float>(bits));
}

/// Rounds |x| to a binary format with `precision` significand bits and
/// minimum normal exponent `emin`, ties to even. Returns the rounded
/// magnitude, which is exactly representable in that format (or exceeds its
/// largest finite value, which the caller treats as overflow).
inline double round_to_format(double x, int precision, int emin) {
  const double ax = std::fabs(x);
  if (ax == 0.0) return 0.0;
  int e = std::ilogb(ax);
  if (e < emin) e = emin;
  const double quantum = std::ldexp(1.0, e - precision + 1);
  return std::nearbyint(ax / quantum) * quantum;
}

inline std::uint16_t double_to_half(double x, const std::string& what) {
  constexpr double kMax = 65504.0;
  const double r = round_to_format(x, 11, -14);
  if (!std::isfinite(x) || r > kMax) {
    throw FormatError(what + ": value " + std::to_string(x) + " overflows F16");
  }
  const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
  if (r == 0.0) return sign;
  if (r < std::ldexp(1.0, -14)) {
    return sign | static_cast<std::uint16_t>(std::ldexp(r, 24));
  }
  const int e = std::ilogb(r);
  const auto frac = static_cast<std::uint16_t>(std::ldexp(r, 10 - e) - 1024.0);
  return sign | static_cast<std::uint16_t>((e + 15) << 10) | frac;
}

inline std::uint16_t double_to_bf16(double x, const std::string& what) {
  constexpr double kMax = 0x1.fep127;
  const double r = round_to_format(x, 8, -126);
  if (!std::isfinite(x) || r > kMax) {
    throw FormatError(what + ": value " + std::to_string(x) + " overflows BF16");
  }
  // r is exactly representable in BF16 and hence in binary32.
  const float f = std::signbit(x) ? -static_cast<float>(r) : static_cast<float>(r);
  return static_cast<std::uint16_t>(std::bit_cast<std::uint32_t>(f) >> 16);
}

inline float double_to_f32(double x, const std::string& what) {
  const auto f = static_cast<float>(x);
  if (!std::isfinite(f)) {
    throw FormatError(what + ": value " + std::to_string(x) + " overflows F32");
  }
  return f;
}

template <class T>
T load_le(const unsigned char* p) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <class T>
void store_le(unsigned char* p, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::memcpy(p, &v, sizeof(T));
}

}  // namespace detail

/// Decodes one element of `t` stored at `p`.
inline double decode_element(DType t, const unsigned char* p) {
  switch (t) {
    case DType::F64: return detail::load_le<double>(p);
    case DType::F32: return static_cast<double>(detail::load_le<float>(p));
    case DType::F16: return detail::half_to_double(detail::load_le<std::uint16_t>(p));
    case DType::BF16: return detail::bf16_to_double(detail::load_le<std::uint16_t>(p));
  }
  return NAN;
}

/// Narrows `x` to `t` with round-to-nearest-even and writes it at `p`.
/// Overflow raises FormatError; it never saturates.
inline void encode_element(DType t, double x, unsigned char* p, const std::string& what) {
  switch (t) {
    case DType::F64:
      if (!std::isfinite(x)) throw FormatError(what + ": non-finite value");
      detail::store_le<double>(p, x);
      return;
    case DType::F32: detail::store_le<float>(p, detail::double_to_f32(x, what)); return;
    case DType::F16: detail::store_le<std::uint16_t>(p, detail::double_to_half(x, what)); return;
    case DType::BF16: detail::store_le<std::uint16_t>(p, detail::double_to_bf16(x, what)); return;
  }
}

}  // namespace svdscope
