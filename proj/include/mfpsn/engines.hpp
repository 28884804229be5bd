#pragma once

// Interchangeable kernels for the dilated causal channel-wise temporal
// convolution
//
//   H[t][c] = sum_i W[c][i] * X[t - (k-1-i)*d][c] (+ b[c]),  X[j<0] = 0
//
// and its gradients. Every kernel traverses both layouts natively through
// the tensor strides; none of them converts layouts.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfpsn/matrix.hpp"
#include "mfpsn/quant.hpp"
#include "mfpsn/tensor.hpp"

namespace mfpsn {

enum class EngineKind { DirectLoop, MatMul, ShiftInt, BlockedDirect };

const char *to_string(EngineKind kind);
EngineKind engine_from_string(const std::string &name);

inline constexpr std::size_t kBlockSizes[] = {8, 16, 32, 64};
inline constexpr std::size_t kDefaultBlockSize = 32;

struct OpCounters {
  std::uint64_t adds = 0;
  std::uint64_t muls = 0;
  std::uint64_t shifts = 0;
  std::uint64_t copies = 0;

  OpCounters &operator+=(const OpCounters &o) {
    adds += o.adds;
    muls += o.muls;
    shifts += o.shifts;
    copies += o.copies;
    return *this;
  }
  bool operator==(const OpCounters &) const = default;
};

// Number of in-range taps summed over one lane of length T: the
// multiplication count of a single channel/batch element.
std::uint64_t in_range_taps(std::size_t T, std::size_t k, std::size_t d);

// --- forward -------------------------------------------------------------

// `bias` may be empty (no bias). Weights are C x k. Accumulation is f64.
template <typename F>
TemporalTensor<F> conv_forward_direct(const TemporalTensor<F> &x,
                                      const Matrix &w,
                                      std::span<const double> bias,
                                      std::size_t d,
                                      OpCounters *counters = nullptr);

// Multiplication-free variant: each tap is sign * ldexp(x, e).
template <typename F>
TemporalTensor<F> conv_forward_direct(const TemporalTensor<F> &x,
                                      const ShiftWeights &w,
                                      std::span<const double> bias,
                                      std::size_t d,
                                      OpCounters *counters = nullptr);

// Integer carrier; accumulates in i64 and saturates the result to i32.
TensorI conv_forward_shift_int(const TensorI &x, const ShiftWeights &w,
                               std::span<const std::int32_t> bias,
                               std::size_t d, OpCounters *counters = nullptr,
                               SaturationCounter *saturation = nullptr);

// Materializes the per-channel Toeplitz matrices A[c] (T x T) and computes
// H[c] = A[c] X[c] densely.
template <typename F>
TemporalTensor<F> conv_forward_matmul(const TemporalTensor<F> &x,
                                      const Matrix &w,
                                      std::span<const double> bias,
                                      std::size_t d,
                                      OpCounters *counters = nullptr);

// Tiled over lanes and time with block_size x block_size accumulator tiles.
template <typename F>
TemporalTensor<F> conv_forward_blocked(const TemporalTensor<F> &x,
                                       const Matrix &w,
                                       std::span<const double> bias,
                                       std::size_t d, std::size_t block_size,
                                       OpCounters *counters = nullptr);

// A[c] for a single channel in time-first orientation: entry (i, j) holds
// W[c][k-1-(i-j)/d] when i-d(k-1) <= j <= i and d | (i-j), else 0.
Matrix toeplitz_matrix(std::span<const double> weights, std::size_t T,
                       std::size_t d);

// Number of distinct (T, k, d) tap structures cached by the MatMul engine.
std::size_t matmul_cache_size();

// --- backward ------------------------------------------------------------

// dL/dX: correlation of the right-padded upstream gradient with the flipped
// kernel, taps at stride d.
TensorD conv_backward_input(const TensorD &grad_out, const Matrix &w,
                            std::size_t d);
TensorD conv_backward_input(const TensorD &grad_out, const ShiftWeights &w,
                            std::size_t d);
// A[c]^T dH[c] through the dense matrices.
TensorD conv_backward_input_matmul(const TensorD &grad_out, const Matrix &w,
                                   std::size_t d);
TensorD conv_backward_input_blocked(const TensorD &grad_out, const Matrix &w,
                                    std::size_t d, std::size_t block_size);

// dL/dW[c][i] = sum over lanes of c and t of X[t-(k-1-i)d] * dH[t].
Matrix conv_backward_weight(const TensorD &x, const TensorD &grad_out,
                            std::size_t k, std::size_t d);
Matrix conv_backward_weight_blocked(const TensorD &x, const TensorD &grad_out,
                                    std::size_t k, std::size_t d,
                                    std::size_t block_size);

// dL/db[c]: sum of the upstream gradient over every axis but C.
std::vector<double> conv_backward_bias(const TensorD &grad_out);

// --- dispatch ------------------------------------------------------------

struct EngineChoice {
  EngineKind kind = EngineKind::DirectLoop;
  std::size_t block_size = kDefaultBlockSize;

  bool operator==(const EngineChoice &) const = default;
};

std::string to_string(const EngineChoice &choice);

// Forward through the chosen engine. ShiftInt requires `shift` weights and
// uses the float carrier; the float engines use `w`.
TensorD conv_forward(const EngineChoice &engine, const TensorD &x,
                     const Matrix &w, std::span<const double> bias,
                     std::size_t d, OpCounters *counters = nullptr,
                     const ShiftWeights *shift = nullptr);

TensorD conv_backward_input(const EngineChoice &engine, const TensorD &grad_out,
                            const Matrix &w, std::size_t d,
                            const ShiftWeights *shift = nullptr);

Matrix conv_backward_weight(const EngineChoice &engine, const TensorD &x,
                            const TensorD &grad_out, std::size_t k,
                            std::size_t d);

} // namespace mfpsn
