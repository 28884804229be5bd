#include "mfpsn/quant.hpp"

#include <algorithm>
#include <limits>
#include <numbers>

namespace mfpsn {

const char *to_string(QuantGradMode mode) {
  return mode == QuantGradMode::WholeSTE ? "whole_ste" : "round_ste";
}

void ShiftWeights::validate() const {
  if (sign.size() != rows * cols || exponent.size() != rows * cols)
    throw Error(ErrorCode::ShapeMismatch, "shift weight arrays have wrong length");
  for (std::size_t i = 0; i < sign.size(); ++i) {
    if (sign[i] < -1 || sign[i] > 1)
      throw Error(ErrorCode::InvalidArgument, "shift weight sign out of range");
    if (exponent[i] < kExponentMin || exponent[i] > kExponentMax)
      throw Error(ErrorCode::InvalidArgument, "shift weight exponent out of range");
  }
}

int pow2_exponent(double w) {
  int p = 0;
  const double m = std::frexp(std::fabs(w), &p); // |w| = m * 2^p, m in [0.5, 1)
  const int e = m >= std::numbers::sqrt2 / 2.0 ? p : p - 1;
  return std::clamp(e, kExponentMin, kExponentMax);
}

double quantize_value(double w) {
  if (w == 0.0)
    return 0.0;
  const double magnitude = std::ldexp(1.0, pow2_exponent(w));
  return std::signbit(w) ? -magnitude : magnitude;
}

ShiftWeights quantize_pow2(const Matrix &w) {
  ShiftWeights q(w.rows, w.cols);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double v = w.values[i];
    if (!std::isfinite(v))
      throw Error(ErrorCode::NumericFailure, "cannot quantize a non-finite weight");
    if (v == 0.0)
      continue;
    q.sign[i] = v < 0.0 ? -1 : 1;
    q.exponent[i] = static_cast<std::int8_t>(pow2_exponent(v));
  }
  return q;
}

Matrix dequantize(const ShiftWeights &q) {
  Matrix out(q.rows, q.cols);
  for (std::size_t r = 0; r < q.rows; ++r)
    for (std::size_t c = 0; c < q.cols; ++c)
      out(r, c) = q.value(r, c);
  return out;
}

std::int32_t shift_mul_int(std::int32_t x, int sign, int e,
                           SaturationCounter *counter) {
  if (sign == 0)
    return 0;
  std::int64_t v = x;
  v = e >= 0 ? v << e : v >> -e;
  if (sign < 0)
    v = -v;
  constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
  constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
  if (v < lo || v > hi) {
    if (counter != nullptr)
      ++counter->saturations;
    v = std::clamp(v, lo, hi);
  }
  return static_cast<std::int32_t>(v);
}

Matrix quantize_backward(const Matrix &upstream_grad, const Matrix &w,
                         QuantGradMode mode, std::uint64_t *instability_count) {
  if (upstream_grad.rows != w.rows || upstream_grad.cols != w.cols)
    throw Error(ErrorCode::ShapeMismatch, "gradient and weight shapes differ");
  if (mode == QuantGradMode::WholeSTE)
    return upstream_grad;
  Matrix out(w.rows, w.cols);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double v = w.values[i];
    if (v == 0.0) {
      if (instability_count != nullptr)
        ++*instability_count;
      continue;
    }
    const double factor = std::ldexp(1.0, pow2_exponent(v)) / std::fabs(v);
    out.values[i] = upstream_grad.values[i] * factor;
  }
  return out;
}

} // namespace mfpsn
