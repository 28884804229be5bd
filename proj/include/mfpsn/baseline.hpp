#pragma once

// Reference neurons: the full-sequence PSN (H = W X with W in R^{T x T}) and
// the sliding PSN (a shared length-k causal kernel).

#include <span>
#include <vector>

#include "mfpsn/matrix.hpp"
#include "mfpsn/tensor.hpp"

namespace mfpsn {

inline constexpr double kDefaultPsnThreshold = 1.0;

struct PSNParams {
  Matrix weights;                // T x T
  std::vector<double> threshold; // T

  // Given weights with the default per-step threshold.
  static PSNParams with_default_threshold(Matrix weights);
};

struct SpikeOutput {
  TensorD membrane;
  TensorD spikes;
};

// H[t] = sum_i W[t][i] X[i] per lane, S = Theta(H - V_th).
SpikeOutput psn_forward(const TensorD &x, const PSNParams &p);

// W[t][i] = tau^-1 (1 - tau^-1)^(t-i) for t >= i, else 0.
Matrix lif_weight_init(std::size_t T, double tau_m);

// H[t] = sum_i W[i] X[t-k+1+i] with X[j<0] = 0, same W for every channel.
TensorD sliding_psn_charge(const TensorD &x, std::span<const double> weights);
SpikeOutput sliding_psn_forward(const TensorD &x,
                                std::span<const double> weights, double v_th);

} // namespace mfpsn
