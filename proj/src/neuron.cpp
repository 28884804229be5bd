#include "mfpsn/neuron.hpp"

#include <cmath>

namespace mfpsn {

const char *to_string(WeightSharing sharing) {
  return sharing == WeightSharing::ChannelWise ? "channel_wise" : "shared";
}

void NeuronConfig::validate() const {
  if (channels == 0 || order == 0 || dilation == 0)
    throw Error(ErrorCode::InvalidArgument,
                "neuron channels, order and dilation must be >= 1");
}

ThresholdParams ThresholdParams::initial(std::size_t channels) {
  ThresholdParams p;
  p.gamma.assign(channels, 1.0);
  p.beta.assign(channels, -1.0);
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  return p;
}

void ThresholdParams::validate() const {
  const std::size_t C = gamma.size();
  if (beta.size() != C || running_mean.size() != C || running_var.size() != C)
    throw Error(ErrorCode::ShapeMismatch, "threshold parameter lengths differ");
  if (!(eps > 0.0))
    throw Error(ErrorCode::InvalidArgument, "batch-norm eps must be positive");
  if (!(momentum > 0.0 && momentum < 1.0))
    throw Error(ErrorCode::InvalidArgument, "momentum must lie in (0, 1)");
  for (double v : running_var)
    if (v < 0.0)
      throw Error(ErrorCode::InvalidArgument, "running variance is negative");
}

std::vector<std::size_t> sawtooth_schedule(std::size_t num_layers) {
  if (num_layers == 0)
    throw Error(ErrorCode::InvalidArgument, "need at least one layer");
  std::vector<std::size_t> d(num_layers);
  d[0] = 1;
  for (std::size_t l = 1; l < num_layers; ++l)
    d[l] = d[l - 1] % 3 + 1;
  return d;
}

std::size_t receptive_field(std::span<const std::size_t> orders,
                            std::span<const std::size_t> dilations) {
  if (orders.size() != dilations.size())
    throw Error(ErrorCode::InvalidArgument,
                "orders and dilations must have equal length");
  std::size_t rf = 1;
  for (std::size_t l = 0; l < orders.size(); ++l) {
    if (orders[l] == 0 || dilations[l] == 0)
      throw Error(ErrorCode::InvalidArgument, "order and dilation must be >= 1");
    rf += (orders[l] - 1) * dilations[l];
  }
  return rf;
}

Matrix expand_weights(const Matrix &weights, const NeuronConfig &cfg) {
  if (weights.cols != cfg.order || weights.rows != cfg.weight_rows())
    throw Error(ErrorCode::ShapeMismatch, "neuron weights do not match config");
  if (cfg.sharing == WeightSharing::ChannelWise)
    return weights;
  Matrix out(cfg.channels, cfg.order);
  for (std::size_t c = 0; c < cfg.channels; ++c)
    for (std::size_t i = 0; i < cfg.order; ++i)
      out(c, i) = weights(0, i);
  return out;
}

namespace {
void check_channels(const TensorD &x, const NeuronConfig &cfg) {
  cfg.validate();
  if (x.shape().C != cfg.channels)
    throw Error(ErrorCode::ShapeMismatch,
                "input has " + std::to_string(x.shape().C) +
                    " channels, neuron expects " + std::to_string(cfg.channels));
}
} // namespace

TensorD charge(const TensorD &x, const NeuronParams &params,
               const NeuronConfig &cfg, const EngineChoice &engine,
               OpCounters *counters) {
  check_channels(x, cfg);
  const Matrix w = expand_weights(params.weights, cfg);
  if (engine.kind == EngineKind::ShiftInt)
    return conv_forward_direct(x, quantize_pow2(w), {}, cfg.dilation, counters);
  return conv_forward(engine, x, w, {}, cfg.dilation, counters);
}

TensorD charge(const TensorD &x, const FusedParams &params,
               const NeuronConfig &cfg, const EngineChoice &engine,
               OpCounters *counters) {
  check_channels(x, cfg);
  if (engine.kind == EngineKind::ShiftInt)
    return conv_forward_direct(x, quantize_pow2(params.weights), params.bias,
                               cfg.dilation, counters);
  return conv_forward(engine, x, params.weights, params.bias, cfg.dilation,
                      counters);
}

TensorD charge(const TensorD &x, const ShiftWeights &weights,
               std::span<const double> bias, const NeuronConfig &cfg,
               OpCounters *counters) {
  check_channels(x, cfg);
  return conv_forward_direct(x, weights, bias, cfg.dilation, counters);
}

ChannelStats channel_stats(const TensorD &h) {
  const std::size_t C = h.shape().C;
  const std::size_t T = h.shape().T;
  const std::size_t S = h.shape().spatial_size();
  ChannelStats st;
  st.count = T * h.shape().N * S;
  st.mean.assign(C, 0.0);
  st.var.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t n = 0; n < h.shape().N; ++n)
        for (std::size_t s = 0; s < S; ++s)
          sum += h.at(t, n, c, s);
    const double mean = sum / static_cast<double>(st.count);
    double sq = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t n = 0; n < h.shape().N; ++n)
        for (std::size_t s = 0; s < S; ++s) {
          const double dv = h.at(t, n, c, s) - mean;
          sq += dv * dv;
        }
    st.mean[c] = mean;
    st.var[c] = sq / static_cast<double>(st.count);
  }
  return st;
}

namespace {
TensorD threshold(const TensorD &h, const ThresholdParams &thr,
                  std::span<const double> mean, std::span<const double> var,
                  OpCounters *counters) {
  TensorD out(h.shape(), h.layout());
  const std::size_t S = h.shape().spatial_size();
  for (std::size_t c = 0; c < h.shape().C; ++c) {
    const double scale = thr.gamma[c] / std::sqrt(var[c] + thr.eps);
    for (std::size_t t = 0; t < h.shape().T; ++t)
      for (std::size_t n = 0; n < h.shape().N; ++n)
        for (std::size_t s = 0; s < S; ++s) {
          const double v = scale * (h.at(t, n, c, s) - mean[c]) + thr.beta[c];
          out.at(t, n, c, s) = v >= 0.0 ? 1.0 : 0.0;
        }
  }
  if (counters != nullptr)
    counters->adds += h.numel();
  return out;
}
} // namespace

TensorD fire(const TensorD &h, ThresholdParams &thr, bool training,
             OpCounters *counters) {
  thr.validate();
  if (h.shape().C != thr.channels())
    throw Error(ErrorCode::ShapeMismatch, "threshold channel count mismatch");
  if (!training)
    return threshold(h, thr, thr.running_mean, thr.running_var, counters);
  const ChannelStats st = channel_stats(h);
  const double m = thr.momentum;
  const double unbias = st.count > 1 ? static_cast<double>(st.count) /
                                           static_cast<double>(st.count - 1)
                                     : 1.0;
  for (std::size_t c = 0; c < thr.channels(); ++c) {
    thr.running_mean[c] = (1.0 - m) * thr.running_mean[c] + m * st.mean[c];
    thr.running_var[c] = (1.0 - m) * thr.running_var[c] + m * st.var[c] * unbias;
  }
  return threshold(h, thr, st.mean, st.var, counters);
}

TensorD fire(const TensorD &h, const ThresholdParams &thr,
             OpCounters *counters) {
  thr.validate();
  if (h.shape().C != thr.channels())
    throw Error(ErrorCode::ShapeMismatch, "threshold channel count mismatch");
  return threshold(h, thr, thr.running_mean, thr.running_var, counters);
}

TensorD heaviside(const TensorD &h) {
  TensorD out(h.shape(), h.layout());
  const auto src = h.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = src[i] >= 0.0 ? 1.0 : 0.0;
  return out;
}

FusedParams fuse_bn(const Matrix &weights, std::span<const double> gamma,
                    std::span<const double> beta, std::span<const double> mean,
                    std::span<const double> var, double eps) {
  const std::size_t C = weights.rows;
  if (gamma.size() != C || beta.size() != C || mean.size() != C ||
      var.size() != C)
    throw Error(ErrorCode::ShapeMismatch, "batch-norm vectors do not match C");
  FusedParams f{Matrix(C, weights.cols), std::vector<double>(C)};
  for (std::size_t c = 0; c < C; ++c) {
    const double scale = gamma[c] / std::sqrt(var[c] + eps);
    for (std::size_t i = 0; i < weights.cols; ++i)
      f.weights(c, i) = scale * weights(c, i);
    f.bias[c] = beta[c] - scale * mean[c];
  }
  return f;
}

FusedParams fuse_bn(const NeuronParams &params, const ThresholdParams &thr,
                    const NeuronConfig &cfg) {
  thr.validate();
  if (thr.channels() != cfg.channels)
    throw Error(ErrorCode::ShapeMismatch, "threshold channel count mismatch");
  return fuse_bn(expand_weights(params.weights, cfg), thr.gamma, thr.beta,
                 thr.running_mean, thr.running_var, thr.eps);
}

std::vector<double> lif_kernel(std::size_t k, double tau_m) {
  if (!(tau_m > 1.0))
    throw Error(ErrorCode::InvalidArgument, "tau_m must exceed 1");
  std::vector<double> w(k);
  const double inv = 1.0 / tau_m;
  for (std::size_t i = 0; i < k; ++i)
    w[i] = inv * std::pow(1.0 - inv, static_cast<double>(k - 1 - i));
  return w;
}

NeuronParams init_neuron_params(const NeuronConfig &cfg, WeightInit init,
                                std::mt19937_64 &rng) {
  cfg.validate();
  Matrix w(cfg.weight_rows(), cfg.order);
  if (init == WeightInit::LifKernel) {
    const auto kernel = lif_kernel(cfg.order);
    for (std::size_t r = 0; r < w.rows; ++r)
      for (std::size_t i = 0; i < w.cols; ++i)
        w(r, i) = kernel[i];
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.order));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double &v : w.values)
      v = dist(rng);
  }
  return {std::move(w)};
}

} // namespace mfpsn
