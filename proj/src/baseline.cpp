#include "mfpsn/baseline.hpp"

#include <cmath>

namespace mfpsn {

PSNParams PSNParams::with_default_threshold(Matrix weights) {
  const std::size_t T = weights.rows;
  return {std::move(weights), std::vector<double>(T, kDefaultPsnThreshold)};
}

SpikeOutput psn_forward(const TensorD &x, const PSNParams &p) {
  const std::size_t T = x.shape().T;
  if (p.weights.rows != T || p.weights.cols != T || p.threshold.size() != T)
    throw Error(ErrorCode::ShapeMismatch,
                "PSN parameters are sized for T=" + std::to_string(p.weights.rows) +
                    ", input has T=" + std::to_string(T));
  SpikeOutput out{TensorD(x.shape(), x.layout()), TensorD(x.shape(), x.layout())};
  const std::size_t S = x.shape().spatial_size();
  std::vector<double> column(T);
  for (std::size_t n = 0; n < x.shape().N; ++n)
    for (std::size_t c = 0; c < x.shape().C; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t i = 0; i < T; ++i)
          column[i] = x.at(i, n, c, s);
        for (std::size_t t = 0; t < T; ++t) {
          double h = 0.0;
          for (std::size_t i = 0; i < T; ++i)
            h += p.weights(t, i) * column[i];
          out.membrane.at(t, n, c, s) = h;
          out.spikes.at(t, n, c, s) = h - p.threshold[t] >= 0.0 ? 1.0 : 0.0;
        }
      }
  return out;
}

Matrix lif_weight_init(std::size_t T, double tau_m) {
  if (!(tau_m > 1.0))
    throw Error(ErrorCode::InvalidArgument, "tau_m must exceed 1");
  Matrix w(T, T);
  const double inv = 1.0 / tau_m;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i <= t; ++i)
      w(t, i) = inv * std::pow(1.0 - inv, static_cast<double>(t - i));
  return w;
}

TensorD sliding_psn_charge(const TensorD &x, std::span<const double> weights) {
  const std::size_t k = weights.size();
  if (k == 0)
    throw Error(ErrorCode::InvalidArgument, "sliding PSN needs k >= 1");
  TensorD h(x.shape(), x.layout());
  const std::size_t S = x.shape().spatial_size();
  for (std::size_t n = 0; n < x.shape().N; ++n)
    for (std::size_t c = 0; c < x.shape().C; ++c)
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t t = 0; t < x.shape().T; ++t) {
          double acc = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            // index t - k + 1 + i, skipped when negative
            if (t + 1 + i < k)
              continue;
            acc += weights[i] * x.at(t + 1 + i - k, n, c, s);
          }
          h.at(t, n, c, s) = acc;
        }
  return h;
}

SpikeOutput sliding_psn_forward(const TensorD &x,
                                std::span<const double> weights, double v_th) {
  TensorD h = sliding_psn_charge(x, weights);
  TensorD s(h.shape(), h.layout());
  const auto hs = h.data();
  auto ss = s.data();
  for (std::size_t i = 0; i < hs.size(); ++i)
    ss[i] = hs[i] - v_th >= 0.0 ? 1.0 : 0.0;
  return {std::move(h), std::move(s)};
}

} // namespace mfpsn
