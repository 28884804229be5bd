#pragma once

// Trainable layers and the feed-forward network built from them:
//
//   input -> {Linear -> channel-wise PSN} x L -> Linear readout
//
// Parameters and running statistics are kept f32-representable (stored in
// f64) so that a model saved with f32 payloads reloads bit-identically while
// all arithmetic runs in f64.

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfpsn/autoselect.hpp"
#include "mfpsn/engines.hpp"
#include "mfpsn/neuron.hpp"
#include "mfpsn/tensor.hpp"

namespace mfpsn {

enum class SurrogateKind { Arctan, RationalSigmoidDeriv };

struct SurrogateConfig {
  SurrogateKind kind = SurrogateKind::Arctan;
  double alpha = 2.0;

  // Arctan: alpha / (2 (1 + (pi/2 alpha x)^2)); rational: 1 / (1 + alpha x^2).
  double derivative(double x) const;
  // A smooth step whose derivative is derivative(x); used in place of the
  // Heaviside when certifying gradients numerically.
  double primitive(double x) const;
};

const char *to_string(SurrogateKind kind);

// Elementwise surrogate derivative of the spike function.
TensorD spike_backward(const TensorD &x_minus_thresh, const SurrogateConfig &cfg);

enum class SpikeMode { Heaviside, Smooth };

// Where the fused quantized pass takes mu/var from during training.
enum class StatsSource { SameStep, Running };

struct ParamRef {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
};

inline double round_to_f32(double v) {
  return static_cast<double>(static_cast<float>(v));
}
void round_to_f32(std::span<double> values);

class Layer : public BenchLayer {
public:
  virtual TensorD forward(const TensorD &x, bool training,
                          OpCounters *counters = nullptr) = 0;
  // Accumulates parameter gradients and returns dL/dx.
  virtual TensorD backward(const TensorD &grad_out) = 0;
  virtual std::vector<ParamRef> parameters() { return {}; }
  virtual void zero_grad() {}
  virtual bool is_neuron() const { return false; }
  virtual std::unique_ptr<Layer> clone() const = 0;

  std::vector<EngineChoice> candidates() const override {
    return {EngineChoice{}};
  }
  TensorD bench_forward(const TensorD &x, const EngineChoice &) override {
    return forward(x, true);
  }
  void bench_backward(const TensorD &grad_out, const EngineChoice &) override {
    backward(grad_out);
    zero_grad();
  }
  void select(const EngineChoice &) override {}
};

// Fully connected over the channel axis, applied independently at every
// (t, n, s). Zero inputs are skipped, inputs equal to 1 cost one addition.
class LinearLayer final : public Layer {
public:
  LinearLayer(std::size_t in, std::size_t out);
  LinearLayer(Matrix weight, std::vector<double> bias);

  static LinearLayer initialized(std::size_t in, std::size_t out,
                                 std::mt19937_64 &rng);

  std::string label() const override;
  TensorD forward(const TensorD &x, bool training,
                  OpCounters *counters = nullptr) override;
  TensorD backward(const TensorD &grad_out) override;
  std::vector<ParamRef> parameters() override;
  void zero_grad() override;
  std::unique_ptr<Layer> clone() const override;

  std::size_t in_features() const { return weight_.cols; }
  std::size_t out_features() const { return weight_.rows; }
  const Matrix &weight() const { return weight_; }
  const std::vector<double> &bias() const { return bias_; }

private:
  Matrix weight_; // out x in
  std::vector<double> bias_;
  Matrix grad_weight_;
  std::vector<double> grad_bias_;
  TensorD input_;
};

// Channel-wise PSN with batch-norm threshold. Training runs two passes: an
// unquantized convolution whose batch statistics feed the fused weights
// W_f = gamma/sqrt(var+eps) W and bias b_f, then the quantized fused
// convolution H = Q(W_f) * X + b_f that produces the spikes S = Theta(H).
// Gradients flow through Q with the configured straight-through rule.
class NeuronLayer final : public Layer {
public:
  NeuronLayer(NeuronConfig cfg, NeuronParams params, ThresholdParams thr);

  std::string label() const override;
  TensorD forward(const TensorD &x, bool training,
                  OpCounters *counters = nullptr) override;
  TensorD backward(const TensorD &grad_out) override;
  std::vector<ParamRef> parameters() override;
  void zero_grad() override;
  bool is_neuron() const override { return true; }
  std::unique_ptr<Layer> clone() const override;

  // Benchmark runs leave parameters, gradients and running statistics as
  // they were.
  std::vector<EngineChoice> candidates() const override;
  void select(const EngineChoice &choice) override { engine_ = choice; }
  TensorD bench_forward(const TensorD &x, const EngineChoice &choice) override;
  void bench_backward(const TensorD &grad_out, const EngineChoice &choice) override;

  const NeuronConfig &config() const { return cfg_; }
  const NeuronParams &params() const { return params_; }
  const ThresholdParams &threshold() const { return thr_; }
  ThresholdParams &threshold() { return thr_; }
  const EngineChoice &engine() const { return engine_; }

  // Fused parameters from the running statistics (C x k weights).
  FusedParams fused() const;
  // Q(W_f) and b_f rounded to f32: the deployed multiplication-free neuron.
  ShiftWeights deployed_weights() const;
  std::vector<double> deployed_bias() const;

  void set_spike_mode(SpikeMode mode) { spike_mode_ = mode; }
  void set_surrogate(const SurrogateConfig &s) { surrogate_ = s; }
  void set_stats_source(StatsSource s) { stats_source_ = s; }
  void set_grad_mode(QuantGradMode m) { cfg_.grad_mode = m; }
  std::uint64_t instability_count() const { return instability_; }

private:
  EngineChoice float_engine() const;
  TensorD spike(const TensorD &h) const;

  NeuronConfig cfg_;
  NeuronParams params_;
  ThresholdParams thr_;
  EngineChoice engine_;
  SurrogateConfig surrogate_;
  SpikeMode spike_mode_ = SpikeMode::Heaviside;
  StatsSource stats_source_ = StatsSource::SameStep;

  Matrix grad_weights_;
  std::vector<double> grad_gamma_;
  std::vector<double> grad_beta_;
  std::uint64_t instability_ = 0;

  struct Cache {
    bool training = false;
    TensorD input;
    TensorD float_charge; // P, unquantized pass
    TensorD membrane;     // H
    Matrix expanded;      // C x k
    Matrix fused;         // W_f
    Matrix applied;       // Q(W_f) or W_f
    ShiftWeights shift;
    std::vector<double> mean, var, scale;
  } cache_;
};

// Inference-only neuron loaded from a quantized model: sign/exponent taps
// plus the fused bias, executed with shifts and additions only.
class QuantNeuronLayer final : public Layer {
public:
  QuantNeuronLayer(NeuronConfig cfg, ShiftWeights weights,
                   std::vector<double> bias);

  std::string label() const override;
  TensorD forward(const TensorD &x, bool training,
                  OpCounters *counters = nullptr) override;
  TensorD backward(const TensorD &grad_out) override;
  bool is_neuron() const override { return true; }
  std::unique_ptr<Layer> clone() const override;

  const NeuronConfig &config() const { return cfg_; }
  const ShiftWeights &weights() const { return weights_; }
  const std::vector<double> &bias() const { return bias_; }

private:
  NeuronConfig cfg_;
  ShiftWeights weights_;
  std::vector<double> bias_;
};

enum class DilationSchedule { Fixed, Sawtooth };

struct NetworkSpec {
  std::size_t input_channels = 1;
  std::size_t hidden_channels = 32;
  std::size_t classes = 2;
  std::size_t num_layers = 3;
  std::size_t order = 2;
  DilationSchedule dilation = DilationSchedule::Sawtooth;
  std::size_t fixed_dilation = 1;
  WeightSharing sharing = WeightSharing::ChannelWise;
  bool quantized = true;
  QuantGradMode grad_mode = QuantGradMode::WholeSTE;
  WeightInit init = WeightInit::LifKernel;
  SurrogateConfig surrogate;

  std::vector<std::size_t> dilations() const;
};

struct ForwardTrace {
  std::vector<OpCounters> counters; // per layer
  std::vector<TensorD> spikes;      // per neuron layer
  std::vector<TensorD> inputs;      // per layer input
};

class Network {
public:
  Network() = default;
  Network(const Network &other);
  Network &operator=(const Network &other);
  Network(Network &&) = default;
  Network &operator=(Network &&) = default;

  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  Layer &layer(std::size_t i) { return *layers_[i]; }
  const Layer &layer(std::size_t i) const { return *layers_[i]; }

  Layout layout() const { return layout_; }
  void set_layout(Layout layout) { layout_ = layout; }

  // Converts x to the network layout first if needed.
  TensorD forward(const TensorD &x, bool training,
                  ForwardTrace *trace = nullptr);
  TensorD backward(const TensorD &grad_out);
  std::vector<ParamRef> parameters();
  void zero_grad();

  std::vector<BenchLayer *> bench_layers();
  void apply(const BenchReport &report);

  void set_spike_mode(SpikeMode mode);
  void set_stats_source(StatsSource source);
  void set_grad_mode(QuantGradMode mode);
  std::uint64_t instability_count() const;
  bool has_trainable_neurons() const;
  bool has_quantized_neurons() const;
  std::size_t input_channels() const;

  // Replaces every trainable neuron by its deployed multiplication-free form.
  // Neurons trained without quantization are quantized after the fact.
  Network export_quantized() const;

private:
  std::vector<std::unique_ptr<Layer>> layers_;
  Layout layout_ = Layout::TimeFirst;
};

Network build_network(const NetworkSpec &spec, std::uint64_t seed);

} // namespace mfpsn
