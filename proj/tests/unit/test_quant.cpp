#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "mfpsn/quant.hpp"

using namespace mfpsn;

namespace {

// Exponent by brute force: the integer n in range minimizing |log2|w| - n|.
int brute_exponent(double w) {
  const double l = std::log2(std::abs(w));
  int best = kExponentMin;
  for (int n = kExponentMin; n <= kExponentMax; ++n)
    if (std::abs(l - n) < std::abs(l - best))
      best = n;
  return best;
}

} // namespace

TEST_SUITE("quant") {

TEST_CASE("quantize examples") {
  Matrix w(1, 4, {0.5, -0.3, 0.75, 0.0});
  const ShiftWeights q = quantize_pow2(w);
  CHECK(q.sign == std::vector<std::int8_t>{1, -1, 1, 0});
  CHECK(q.exponent == std::vector<std::int8_t>{-1, -2, 0, 0});
  CHECK(q.value(0, 0) == 0.5);
  CHECK(q.value(0, 1) == -0.25);
  CHECK(q.value(0, 2) == 1.0);
  CHECK(q.value(0, 3) == 0.0);
}

TEST_CASE("dequantize examples") {
  ShiftWeights q(1, 2);
  q.sign = {1, 0};
  q.exponent = {-1, 7};
  const Matrix m = dequantize(q);
  CHECK(m(0, 0) == 0.5);
  CHECK(m(0, 1) == 0.0);
}

TEST_CASE("exponent matches brute-force rounding") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> e(-17.0, 16.0);
  for (int i = 0; i < 20000; ++i) {
    const double w = std::exp2(e(rng));
    CHECK(pow2_exponent(w) == brute_exponent(w));
  }
}

TEST_CASE("exponent clamps to its range") {
  CHECK(pow2_exponent(1e9) == kExponentMax);
  CHECK(pow2_exponent(1e-9) == kExponentMin);
  CHECK(quantize_value(-1e9) == -std::ldexp(1.0, kExponentMax));
}

TEST_CASE("values near the rounding midpoint") {
  const double mid = std::sqrt(0.5); // 2^-1/2
  CHECK(quantize_value(std::nextafter(mid, 1.0)) == 1.0);
  CHECK(quantize_value(std::nextafter(mid, 0.0)) == 0.5);
}

TEST_CASE("idempotence, symmetry, error bound") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> e(-15.5, 14.5);
  std::bernoulli_distribution neg(0.5);
  const double lo = std::sqrt(0.5), hi = std::sqrt(2.0);
  for (int i = 0; i < 100000; ++i) {
    const double w = (neg(rng) ? -1.0 : 1.0) * std::exp2(e(rng));
    const double q = quantize_value(w);
    REQUIRE(quantize_value(q) == q);
    REQUIRE(quantize_value(-w) == -q);
    const double r = q / w;
    REQUIRE(r >= lo);
    REQUIRE(r <= hi);
  }
}

TEST_CASE("validate rejects bad entries") {
  ShiftWeights q(1, 1);
  q.sign = {2};
  CHECK_THROWS_AS(q.validate(), Error);
  q.sign = {1};
  q.exponent = {16};
  CHECK_THROWS_AS(q.validate(), Error);
}

TEST_CASE("shift_mul_float examples") {
  CHECK(shift_mul_float(3.5, 1, 1) == 7.0);
  CHECK(shift_mul_float(3.5, -1, -1) == -1.75);
  CHECK(shift_mul_float(0.0, 1, 5) == 0.0);
  CHECK(shift_mul_float(3.5f, 0, 5) == 0.0f);
}

TEST_CASE("shift_mul_float is exact for f32") {
  std::mt19937 rng(13);
  std::uniform_real_distribution<float> u(-1000.0f, 1000.0f);
  for (int i = 0; i < 2000; ++i) {
    const float x = u(rng);
    for (int e = -15; e <= 15; ++e) {
      const float expect = x * std::ldexp(1.0f, e);
      REQUIRE(shift_mul_float(x, 1, e) == expect);
      REQUIRE(shift_mul_float(x, -1, e) == -expect);
    }
  }
}

TEST_CASE("shift_mul_int examples") {
  CHECK(shift_mul_int(8, 1, -2) == 2);
  CHECK(shift_mul_int(-8, 1, -2) == -2);
  CHECK(shift_mul_int(3, -1, 2) == -12);
  CHECK(shift_mul_int(-7, 1, -1) == -4); // floor(-3.5)
  CHECK(shift_mul_int(5, 0, 3) == 0);
}

TEST_CASE("shift_mul_int saturates and counts") {
  SaturationCounter sat;
  CHECK(shift_mul_int(std::numeric_limits<std::int32_t>::max(), 1, 1, &sat) ==
        std::numeric_limits<std::int32_t>::max());
  CHECK(shift_mul_int(std::numeric_limits<std::int32_t>::min(), 1, 3, &sat) ==
        std::numeric_limits<std::int32_t>::min());
  CHECK(sat.saturations == 2);
  CHECK(shift_mul_int(1 << 20, 1, 4, &sat) == (1 << 24));
  CHECK(sat.saturations == 2);
}

TEST_CASE("shift_mul_int truncation bound") {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<std::int32_t> u(-(1 << 30), 1 << 30);
  for (int i = 0; i < 20000; ++i) {
    const std::int32_t x = u(rng);
    for (int e = -15; e < 0; ++e) {
      const double exact = std::ldexp(static_cast<double>(x), e);
      const double got = shift_mul_int(x, 1, e);
      REQUIRE(got == std::floor(exact));
      REQUIRE(std::abs(got - exact) < 1.0);
    }
  }
}

TEST_CASE("quantize_backward modes") {
  Matrix g(1, 3, {2.0, -1.0, 3.0});
  Matrix w(1, 3, {0.75, 0.5, 0.0});
  CHECK(quantize_backward(g, w, QuantGradMode::WholeSTE) == g);
  std::uint64_t unstable = 0;
  const Matrix r = quantize_backward(g, w, QuantGradMode::RoundSTE, &unstable);
  CHECK(r(0, 0) == doctest::Approx(2.0 * 4.0 / 3.0));
  CHECK(r(0, 1) == -1.0);
  CHECK(r(0, 2) == 0.0);
  CHECK(unstable == 1);
}

} // TEST_SUITE
