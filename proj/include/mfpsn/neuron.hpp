#pragma once

// Channel-wise parallel spiking neuron: dilated causal charge, channel-wise
// batch-norm threshold, and the conv/BN fusion used at inference time.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mfpsn/engines.hpp"
#include "mfpsn/matrix.hpp"
#include "mfpsn/quant.hpp"
#include "mfpsn/tensor.hpp"

namespace mfpsn {

enum class WeightSharing { ChannelWise, SharedAcrossChannels };

const char *to_string(WeightSharing sharing);

struct NeuronConfig {
  std::size_t channels = 1;
  std::size_t order = 2; // k
  std::size_t dilation = 1;
  WeightSharing sharing = WeightSharing::ChannelWise;
  bool quantized = true;
  QuantGradMode grad_mode = QuantGradMode::WholeSTE;

  void validate() const;
  // Rows of the stored weight matrix: C, or 1 when shared.
  std::size_t weight_rows() const {
    return sharing == WeightSharing::ChannelWise ? channels : 1;
  }
};

struct NeuronParams {
  Matrix weights; // weight_rows() x k
};

inline constexpr double kDefaultBnEps = 1e-5;
inline constexpr double kDefaultBnMomentum = 0.1;

struct ThresholdParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = kDefaultBnEps;
  double momentum = kDefaultBnMomentum;

  // gamma = 1, beta = -1, running stats (0, 1).
  static ThresholdParams initial(std::size_t channels);
  std::size_t channels() const { return gamma.size(); }
  void validate() const;
};

struct FusedParams {
  Matrix weights; // C x k
  std::vector<double> bias;
};

// d^0 = 1, d^{l+1} = (d^l mod 3) + 1.
std::vector<std::size_t> sawtooth_schedule(std::size_t num_layers);

// 1 + sum_l (k_l - 1) * d_l.
std::size_t receptive_field(std::span<const std::size_t> orders,
                            std::span<const std::size_t> dilations);

// Broadcasts a shared 1 x k kernel to C x k; channel-wise weights pass
// through unchanged.
Matrix expand_weights(const Matrix &weights, const NeuronConfig &cfg);

TensorD charge(const TensorD &x, const NeuronParams &params,
               const NeuronConfig &cfg, const EngineChoice &engine = {},
               OpCounters *counters = nullptr);
TensorD charge(const TensorD &x, const FusedParams &params,
               const NeuronConfig &cfg, const EngineChoice &engine = {},
               OpCounters *counters = nullptr);
// Multiplication-free charge with quantized weights and an optional bias.
TensorD charge(const TensorD &x, const ShiftWeights &weights,
               std::span<const double> bias, const NeuronConfig &cfg,
               OpCounters *counters = nullptr);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var; // biased
  std::size_t count = 0;   // elements per channel
};

// Per-channel mean and biased variance over T, N and spatial axes.
ChannelStats channel_stats(const TensorD &h);

// S = Theta(gamma (H - mu) / sqrt(var + eps) + beta), Theta(0) = 1. In
// training mode mu/var are the batch statistics and the running statistics
// are updated with the unbiased variance; otherwise running stats are used.
TensorD fire(const TensorD &h, ThresholdParams &thr, bool training,
             OpCounters *counters = nullptr);
TensorD fire(const TensorD &h, const ThresholdParams &thr,
             OpCounters *counters = nullptr);

// Theta(h) elementwise.
TensorD heaviside(const TensorD &h);

// W_f = gamma / sqrt(var + eps) * W, b_f = beta - gamma * mu / sqrt(var + eps)
// using the running statistics.
FusedParams fuse_bn(const NeuronParams &params, const ThresholdParams &thr,
                    const NeuronConfig &cfg);
FusedParams fuse_bn(const Matrix &weights, std::span<const double> gamma,
                    std::span<const double> beta, std::span<const double> mean,
                    std::span<const double> var, double eps);

enum class WeightInit { LifKernel, Uniform };

// Last k taps of the reset-free LIF kernel tau^-1 (1 - tau^-1)^lag.
std::vector<double> lif_kernel(std::size_t k, double tau_m = 2.0);

NeuronParams init_neuron_params(const NeuronConfig &cfg, WeightInit init,
                                std::mt19937_64 &rng);

} // namespace mfpsn
