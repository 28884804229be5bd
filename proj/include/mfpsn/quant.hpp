#pragma once

// Power-of-two weight quantization and the shift arithmetic that replaces
// multiplication by such weights.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <vector>

#include "mfpsn/matrix.hpp"

namespace mfpsn {

inline constexpr int kExponentMin = -16;
inline constexpr int kExponentMax = 15;

// W_q = sign * 2^exponent, elementwise over a rows x cols grid.
struct ShiftWeights {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> sign;     // -1, 0, +1
  std::vector<std::int8_t> exponent; // [kExponentMin, kExponentMax]

  ShiftWeights() = default;
  ShiftWeights(std::size_t r, std::size_t c)
      : rows(r), cols(c), sign(r * c, 0), exponent(r * c, 0) {}

  std::size_t index(std::size_t r, std::size_t c) const { return r * cols + c; }
  double value(std::size_t r, std::size_t c) const {
    const std::size_t i = index(r, c);
    return sign[i] == 0 ? 0.0 : sign[i] * std::ldexp(1.0, exponent[i]);
  }
  // Throws if any entry is outside its legal range.
  void validate() const;

  bool operator==(const ShiftWeights &) const = default;
};

enum class QuantGradMode { WholeSTE, RoundSTE };

const char *to_string(QuantGradMode mode);

// round(log2|w|) clamped to the exponent range. Exact: the rounding
// midpoint 2^(n+1/2) is irrational, so the decision reduces to comparing the
// frexp mantissa against sqrt(1/2).
int pow2_exponent(double w);

// Q(w) = sign(w) * 2^round(log2|w|), with Q(0) = 0.
double quantize_value(double w);

ShiftWeights quantize_pow2(const Matrix &w);
Matrix dequantize(const ShiftWeights &q);

// sign * x * 2^e by adjusting the binary exponent of x. Exact whenever the
// result is a normal number, which holds for |e| <= 15 and normal x away
// from the overflow/underflow edges.
template <std::floating_point F> F shift_mul_float(F x, int sign, int e) {
  if (sign == 0)
    return F{0};
  const F shifted = std::ldexp(x, e);
  return sign < 0 ? -shifted : shifted;
}

struct SaturationCounter {
  std::uint64_t saturations = 0;
};

// Integer path: left shift for e >= 0 (saturating to int32), arithmetic
// right shift (floor) for e < 0. The sign is applied after shifting.
std::int32_t shift_mul_int(std::int32_t x, int sign, int e,
                           SaturationCounter *counter = nullptr);

// Gradient of the loss w.r.t. the float weights given the gradient w.r.t.
// the quantized weights. WholeSTE passes it through unchanged; RoundSTE
// scales by 2^round(log2|w|)/|w| and zeroes (and counts) w == 0 entries.
Matrix quantize_backward(const Matrix &upstream_grad, const Matrix &w,
                         QuantGradMode mode,
                         std::uint64_t *instability_count = nullptr);

} // namespace mfpsn
