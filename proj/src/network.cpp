#include "mfpsn/network.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace mfpsn {

// --- surrogate -------------------------------------------------------------

const char *to_string(SurrogateKind kind) {
  return kind == SurrogateKind::Arctan ? "arctan" : "rational";
}

double SurrogateConfig::derivative(double x) const {
  if (kind == SurrogateKind::Arctan) {
    const double u = std::numbers::pi / 2.0 * alpha * x;
    return alpha / (2.0 * (1.0 + u * u));
  }
  return 1.0 / (1.0 + alpha * x * x);
}

double SurrogateConfig::primitive(double x) const {
  if (kind == SurrogateKind::Arctan)
    return 0.5 + std::atan(std::numbers::pi / 2.0 * alpha * x) / std::numbers::pi;
  const double r = std::sqrt(alpha);
  return std::atan(r * x) / r;
}

TensorD spike_backward(const TensorD &x_minus_thresh, const SurrogateConfig &cfg) {
  if (!(cfg.alpha > 0.0))
    throw Error(ErrorCode::InvalidArgument, "surrogate alpha must be positive");
  TensorD out(x_minus_thresh.shape(), x_minus_thresh.layout());
  const auto src = x_minus_thresh.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = cfg.derivative(src[i]);
  return out;
}

void round_to_f32(std::span<double> values) {
  for (double &v : values)
    v = round_to_f32(v);
}

namespace {

Shape with_channels(Shape s, std::size_t C) {
  s.C = C;
  return s;
}

void require_same(const TensorD &a, const TensorD &b, const char *what) {
  if (!(a.shape() == b.shape()) || a.layout() != b.layout())
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("{}: {} vs {}", what, to_string(a.shape()),
                            to_string(b.shape())));
}

} // namespace

// --- LinearLayer -------------------------------------------------------------

LinearLayer::LinearLayer(std::size_t in, std::size_t out)
    : LinearLayer(Matrix(out, in), std::vector<double>(out, 0.0)) {}

LinearLayer::LinearLayer(Matrix weight, std::vector<double> bias)
    : weight_(std::move(weight)), bias_(std::move(bias)),
      grad_weight_(weight_.rows, weight_.cols), grad_bias_(bias_.size(), 0.0) {
  if (weight_.rows == 0 || weight_.cols == 0)
    throw Error(ErrorCode::InvalidArgument, "linear layer needs non-empty weights");
  if (bias_.size() != weight_.rows)
    throw Error(ErrorCode::ShapeMismatch, "linear bias length != out features");
}

LinearLayer LinearLayer::initialized(std::size_t in, std::size_t out,
                                     std::mt19937_64 &rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(out, in);
  for (double &v : w.values)
    v = round_to_f32(dist(rng));
  std::vector<double> b(out);
  for (double &v : b)
    v = round_to_f32(dist(rng));
  return LinearLayer(std::move(w), std::move(b));
}

std::string LinearLayer::label() const {
  return fmt::format("linear[{}x{}]", in_features(), out_features());
}

TensorD LinearLayer::forward(const TensorD &x, bool, OpCounters *counters) {
  if (x.shape().C != in_features())
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("linear layer expects {} channels, got {}",
                            in_features(), x.shape().C));
  input_ = x;
  TensorD y(with_channels(x.shape(), out_features()), x.layout());
  const std::size_t S = x.shape().spatial_size();
  const std::size_t in = in_features();
  std::vector<double> column(in);
  std::vector<std::size_t> active;
  OpCounters local;
  for (std::size_t t = 0; t < x.shape().T; ++t)
    for (std::size_t n = 0; n < x.shape().N; ++n)
      for (std::size_t s = 0; s < S; ++s) {
        active.clear();
        for (std::size_t i = 0; i < in; ++i) {
          column[i] = x.at(t, n, i, s);
          if (column[i] != 0.0)
            active.push_back(i);
        }
        for (std::size_t o = 0; o < out_features(); ++o) {
          const auto row = weight_.row(o);
          double acc = 0.0;
          for (std::size_t i : active) {
            if (column[i] == 1.0) {
              acc += row[i];
            } else {
              acc += row[i] * column[i];
              ++local.muls;
            }
          }
          local.adds += active.size() + 1;
          y.at(t, n, o, s) = acc + bias_[o];
        }
      }
  if (counters != nullptr)
    *counters += local;
  return y;
}

TensorD LinearLayer::backward(const TensorD &grad_out) {
  if (grad_out.shape().C != out_features() ||
      grad_out.shape().T != input_.shape().T ||
      grad_out.shape().N != input_.shape().N)
    throw Error(ErrorCode::ShapeMismatch, "linear backward shape mismatch");
  TensorD gx(input_.shape(), input_.layout());
  const std::size_t S = input_.shape().spatial_size();
  const std::size_t in = in_features();
  for (std::size_t t = 0; t < input_.shape().T; ++t)
    for (std::size_t n = 0; n < input_.shape().N; ++n)
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t o = 0; o < out_features(); ++o) {
          const double g = grad_out.at(t, n, o, s);
          if (g == 0.0)
            continue;
          grad_bias_[o] += g;
          auto grow = grad_weight_.row(o);
          const auto wrow = weight_.row(o);
          for (std::size_t i = 0; i < in; ++i) {
            grow[i] += g * input_.at(t, n, i, s);
            gx.at(t, n, i, s) += wrow[i] * g;
          }
        }
  return gx;
}

std::vector<ParamRef> LinearLayer::parameters() {
  return {{label() + ".weight", weight_.values, grad_weight_.values},
          {label() + ".bias", bias_, grad_bias_}};
}

void LinearLayer::zero_grad() {
  std::fill(grad_weight_.values.begin(), grad_weight_.values.end(), 0.0);
  std::fill(grad_bias_.begin(), grad_bias_.end(), 0.0);
}

std::unique_ptr<Layer> LinearLayer::clone() const {
  return std::make_unique<LinearLayer>(weight_, bias_);
}

// --- NeuronLayer -------------------------------------------------------------

NeuronLayer::NeuronLayer(NeuronConfig cfg, NeuronParams params,
                         ThresholdParams thr)
    : cfg_(cfg), params_(std::move(params)), thr_(std::move(thr)),
      grad_weights_(cfg_.weight_rows(), cfg_.order),
      grad_gamma_(cfg_.channels, 0.0), grad_beta_(cfg_.channels, 0.0) {
  cfg_.validate();
  thr_.validate();
  if (params_.weights.rows != cfg_.weight_rows() ||
      params_.weights.cols != cfg_.order)
    throw Error(ErrorCode::ShapeMismatch, "neuron weights do not match config");
  if (thr_.channels() != cfg_.channels)
    throw Error(ErrorCode::ShapeMismatch, "threshold channel count mismatch");
}

std::string NeuronLayer::label() const {
  return fmt::format("neuron[C={},k={},d={}]", cfg_.channels, cfg_.order,
                     cfg_.dilation);
}

std::vector<EngineChoice> NeuronLayer::candidates() const {
  std::vector<EngineChoice> out{{EngineKind::DirectLoop, kDefaultBlockSize},
                                {EngineKind::MatMul, kDefaultBlockSize}};
  for (std::size_t b : kBlockSizes)
    out.push_back({EngineKind::BlockedDirect, b});
  if (cfg_.quantized)
    out.push_back({EngineKind::ShiftInt, kDefaultBlockSize});
  return out;
}

TensorD NeuronLayer::bench_forward(const TensorD &x, const EngineChoice &choice) {
  const EngineChoice saved = engine_;
  const ThresholdParams saved_thr = thr_;
  engine_ = choice;
  TensorD y = forward(x, true);
  engine_ = saved;
  thr_ = saved_thr;
  return y;
}

void NeuronLayer::bench_backward(const TensorD &grad_out,
                                 const EngineChoice &choice) {
  const EngineChoice saved = engine_;
  engine_ = choice;
  backward(grad_out);
  engine_ = saved;
  zero_grad();
}

EngineChoice NeuronLayer::float_engine() const {
  if (engine_.kind == EngineKind::ShiftInt)
    return {EngineKind::DirectLoop, engine_.block_size};
  return engine_;
}

TensorD NeuronLayer::spike(const TensorD &h) const {
  if (spike_mode_ == SpikeMode::Heaviside)
    return heaviside(h);
  TensorD out(h.shape(), h.layout());
  const auto src = h.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = surrogate_.primitive(src[i]);
  return out;
}

FusedParams NeuronLayer::fused() const { return fuse_bn(params_, thr_, cfg_); }

ShiftWeights NeuronLayer::deployed_weights() const {
  return quantize_pow2(fused().weights);
}

std::vector<double> NeuronLayer::deployed_bias() const {
  std::vector<double> b = fused().bias;
  round_to_f32(b);
  return b;
}

TensorD NeuronLayer::forward(const TensorD &x, bool training,
                             OpCounters *counters) {
  if (x.shape().C != cfg_.channels)
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("{} got {} channels", label(), x.shape().C));
  cache_.training = training;
  cache_.input = x;

  if (!training) {
    if (cfg_.quantized) {
      cache_.shift = deployed_weights();
      cache_.applied = dequantize(cache_.shift);
      const std::vector<double> bias = deployed_bias();
      cache_.membrane =
          conv_forward_direct(x, cache_.shift, bias, cfg_.dilation, counters);
    } else {
      const FusedParams f = fused();
      cache_.applied = f.weights;
      cache_.membrane = conv_forward(float_engine(), x, f.weights, f.bias,
                                     cfg_.dilation, counters);
    }
    return spike(cache_.membrane);
  }

  const std::size_t C = cfg_.channels;
  cache_.expanded = expand_weights(params_.weights, cfg_);
  if (stats_source_ == StatsSource::SameStep) {
    cache_.float_charge = conv_forward(float_engine(), x, cache_.expanded, {},
                                       cfg_.dilation);
    const ChannelStats st = channel_stats(cache_.float_charge);
    const double m = thr_.momentum;
    const double unbias =
        st.count > 1 ? static_cast<double>(st.count) / (st.count - 1) : 1.0;
    for (std::size_t c = 0; c < C; ++c) {
      thr_.running_mean[c] =
          round_to_f32((1.0 - m) * thr_.running_mean[c] + m * st.mean[c]);
      thr_.running_var[c] = round_to_f32((1.0 - m) * thr_.running_var[c] +
                                         m * st.var[c] * unbias);
    }
    cache_.mean = st.mean;
    cache_.var = st.var;
  } else {
    cache_.mean = thr_.running_mean;
    cache_.var = thr_.running_var;
  }

  cache_.scale.assign(C, 0.0);
  cache_.fused = Matrix(C, cfg_.order);
  std::vector<double> bias(C);
  for (std::size_t c = 0; c < C; ++c) {
    const double a = thr_.gamma[c] / std::sqrt(cache_.var[c] + thr_.eps);
    cache_.scale[c] = a;
    for (std::size_t i = 0; i < cfg_.order; ++i)
      cache_.fused(c, i) = a * cache_.expanded(c, i);
    bias[c] = thr_.beta[c] - a * cache_.mean[c];
  }

  if (cfg_.quantized) {
    cache_.shift = quantize_pow2(cache_.fused);
    cache_.applied = dequantize(cache_.shift);
    if (engine_.kind == EngineKind::ShiftInt)
      cache_.membrane =
          conv_forward_direct(x, cache_.shift, bias, cfg_.dilation, counters);
    else
      cache_.membrane = conv_forward(engine_, x, cache_.applied, bias,
                                     cfg_.dilation, counters);
  } else {
    cache_.applied = cache_.fused;
    cache_.membrane = conv_forward(float_engine(), x, cache_.applied, bias,
                                   cfg_.dilation, counters);
  }
  return spike(cache_.membrane);
}

TensorD NeuronLayer::backward(const TensorD &grad_out) {
  require_same(grad_out, cache_.membrane, "neuron backward");
  if (!cache_.training)
    throw Error(ErrorCode::InvalidArgument,
                "neuron backward requires a training-mode forward");
  const std::size_t C = cfg_.channels;
  const std::size_t k = cfg_.order;
  const std::size_t d = cfg_.dilation;
  const EngineChoice fe = float_engine();

  TensorD delta = spike_backward(cache_.membrane, surrogate_);
  {
    auto dv = delta.data();
    const auto g = grad_out.data();
    for (std::size_t i = 0; i < dv.size(); ++i)
      dv[i] *= g[i];
  }

  const Matrix grad_applied = conv_backward_weight(fe, cache_.input, delta, k, d);
  TensorD grad_x =
      engine_.kind == EngineKind::ShiftInt
          ? conv_backward_input(delta, cache_.shift, d)
          : conv_backward_input(fe, delta, cache_.applied, d);
  const std::vector<double> grad_bias = conv_backward_bias(delta);
  const Matrix grad_fused =
      cfg_.quantized ? quantize_backward(grad_applied, cache_.fused,
                                         cfg_.grad_mode, &instability_)
                     : grad_applied;

  Matrix grad_expanded(C, k);
  std::vector<double> grad_mean(C, 0.0), grad_var(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const double a = cache_.scale[c];
    const double r = 1.0 / std::sqrt(cache_.var[c] + thr_.eps);
    double grad_a = -cache_.mean[c] * grad_bias[c];
    for (std::size_t i = 0; i < k; ++i) {
      grad_expanded(c, i) = a * grad_fused(c, i);
      grad_a += grad_fused(c, i) * cache_.expanded(c, i);
    }
    grad_beta_[c] += grad_bias[c];
    grad_gamma_[c] += r * grad_a;
    grad_mean[c] = -a * grad_bias[c];
    grad_var[c] = -0.5 * r * r * r * thr_.gamma[c] * grad_a;
  }

  if (stats_source_ == StatsSource::SameStep) {
    // mu and var are functions of P = W * X; route their gradients back
    // through the unquantized pass.
    const TensorD &p = cache_.float_charge;
    TensorD grad_p(p.shape(), p.layout());
    const std::size_t S = p.shape().spatial_size();
    const double count =
        static_cast<double>(p.shape().T * p.shape().N * S);
    for (std::size_t t = 0; t < p.shape().T; ++t)
      for (std::size_t n = 0; n < p.shape().N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t s = 0; s < S; ++s)
            grad_p.at(t, n, c, s) =
                grad_mean[c] / count +
                grad_var[c] * 2.0 * (p.at(t, n, c, s) - cache_.mean[c]) / count;
    const Matrix gw = conv_backward_weight(fe, cache_.input, grad_p, k, d);
    for (std::size_t e = 0; e < gw.size(); ++e)
      grad_expanded.values[e] += gw.values[e];
    const TensorD gx = conv_backward_input(fe, grad_p, cache_.expanded, d);
    auto dst = grad_x.data();
    const auto src = gx.data();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] += src[i];
  }

  if (cfg_.sharing == WeightSharing::ChannelWise) {
    for (std::size_t e = 0; e < grad_expanded.size(); ++e)
      grad_weights_.values[e] += grad_expanded.values[e];
  } else {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < k; ++i)
        grad_weights_(0, i) += grad_expanded(c, i);
  }
  return grad_x;
}

std::vector<ParamRef> NeuronLayer::parameters() {
  return {{label() + ".weight", params_.weights.values, grad_weights_.values},
          {label() + ".gamma", thr_.gamma, grad_gamma_},
          {label() + ".beta", thr_.beta, grad_beta_}};
}

void NeuronLayer::zero_grad() {
  std::fill(grad_weights_.values.begin(), grad_weights_.values.end(), 0.0);
  std::fill(grad_gamma_.begin(), grad_gamma_.end(), 0.0);
  std::fill(grad_beta_.begin(), grad_beta_.end(), 0.0);
}

std::unique_ptr<Layer> NeuronLayer::clone() const {
  auto out = std::make_unique<NeuronLayer>(cfg_, params_, thr_);
  out->engine_ = engine_;
  out->surrogate_ = surrogate_;
  out->spike_mode_ = spike_mode_;
  out->stats_source_ = stats_source_;
  return out;
}

// --- QuantNeuronLayer --------------------------------------------------------

QuantNeuronLayer::QuantNeuronLayer(NeuronConfig cfg, ShiftWeights weights,
                                   std::vector<double> bias)
    : cfg_(cfg), weights_(std::move(weights)), bias_(std::move(bias)) {
  cfg_.validate();
  weights_.validate();
  if (weights_.rows != cfg_.channels || weights_.cols != cfg_.order ||
      bias_.size() != cfg_.channels)
    throw Error(ErrorCode::ShapeMismatch,
                "quantized neuron payload does not match its config");
}

std::string QuantNeuronLayer::label() const {
  return fmt::format("qneuron[C={},k={},d={}]", cfg_.channels, cfg_.order,
                     cfg_.dilation);
}

TensorD QuantNeuronLayer::forward(const TensorD &x, bool, OpCounters *counters) {
  if (x.shape().C != cfg_.channels)
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("{} got {} channels", label(), x.shape().C));
  return heaviside(
      conv_forward_direct(x, weights_, bias_, cfg_.dilation, counters));
}

TensorD QuantNeuronLayer::backward(const TensorD &) {
  throw Error(ErrorCode::InvalidArgument,
              "quantized neuron layers are inference-only");
}

std::unique_ptr<Layer> QuantNeuronLayer::clone() const {
  return std::make_unique<QuantNeuronLayer>(cfg_, weights_, bias_);
}

// --- Network -----------------------------------------------------------------

Network::Network(const Network &other) : layout_(other.layout_) {
  for (const auto &l : other.layers_)
    layers_.push_back(l->clone());
}

Network &Network::operator=(const Network &other) {
  if (this != &other) {
    Network tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

TensorD Network::forward(const TensorD &x, bool training, ForwardTrace *trace) {
  if (layers_.empty())
    throw Error(ErrorCode::InvalidArgument, "network has no layers");
  TensorD h = convert_layout(x, layout_).tensor;
  if (trace != nullptr) {
    trace->counters.assign(layers_.size(), OpCounters{});
    trace->spikes.clear();
    trace->inputs.clear();
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (trace != nullptr)
      trace->inputs.push_back(h);
    h = layers_[l]->forward(h, training,
                            trace != nullptr ? &trace->counters[l] : nullptr);
    if (trace != nullptr && layers_[l]->is_neuron())
      trace->spikes.push_back(h);
  }
  return h;
}

TensorD Network::backward(const TensorD &grad_out) {
  TensorD g = grad_out;
  for (std::size_t l = layers_.size(); l-- > 0;)
    g = layers_[l]->backward(g);
  return g;
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t l = 0; l < layers_.size(); ++l)
    for (auto &p : layers_[l]->parameters()) {
      p.name = fmt::format("{}:{}", l, p.name);
      out.push_back(std::move(p));
    }
  return out;
}

void Network::zero_grad() {
  for (auto &l : layers_)
    l->zero_grad();
}

std::vector<BenchLayer *> Network::bench_layers() {
  std::vector<BenchLayer *> out;
  for (auto &l : layers_)
    out.push_back(l.get());
  return out;
}

void Network::apply(const BenchReport &report) {
  if (report.chosen.size() != layers_.size())
    throw Error(ErrorCode::InvalidArgument,
                "benchmark report does not match the network");
  layout_ = report.chosen_layout;
  for (std::size_t l = 0; l < layers_.size(); ++l)
    layers_[l]->select(report.chosen[l]);
}

void Network::set_spike_mode(SpikeMode mode) {
  for (auto &l : layers_)
    if (auto *n = dynamic_cast<NeuronLayer *>(l.get()))
      n->set_spike_mode(mode);
}

void Network::set_stats_source(StatsSource source) {
  for (auto &l : layers_)
    if (auto *n = dynamic_cast<NeuronLayer *>(l.get()))
      n->set_stats_source(source);
}

void Network::set_grad_mode(QuantGradMode mode) {
  for (auto &l : layers_)
    if (auto *n = dynamic_cast<NeuronLayer *>(l.get()))
      n->set_grad_mode(mode);
}

std::uint64_t Network::instability_count() const {
  std::uint64_t total = 0;
  for (const auto &l : layers_)
    if (const auto *n = dynamic_cast<const NeuronLayer *>(l.get()))
      total += n->instability_count();
  return total;
}

bool Network::has_trainable_neurons() const {
  for (const auto &l : layers_)
    if (dynamic_cast<const NeuronLayer *>(l.get()) != nullptr)
      return true;
  return false;
}

bool Network::has_quantized_neurons() const {
  for (const auto &l : layers_)
    if (dynamic_cast<const QuantNeuronLayer *>(l.get()) != nullptr)
      return true;
  return false;
}

std::size_t Network::input_channels() const {
  if (layers_.empty())
    throw Error(ErrorCode::InvalidArgument, "network has no layers");
  const Layer *first = layers_.front().get();
  if (const auto *lin = dynamic_cast<const LinearLayer *>(first))
    return lin->in_features();
  if (const auto *n = dynamic_cast<const NeuronLayer *>(first))
    return n->config().channels;
  return dynamic_cast<const QuantNeuronLayer &>(*first).config().channels;
}

Network Network::export_quantized() const {
  Network out;
  out.layout_ = layout_;
  for (const auto &l : layers_) {
    if (const auto *n = dynamic_cast<const NeuronLayer *>(l.get())) {
      NeuronConfig cfg = n->config();
      cfg.quantized = true;
      cfg.sharing = WeightSharing::ChannelWise;
      out.add(std::make_unique<QuantNeuronLayer>(cfg, n->deployed_weights(),
                                                 n->deployed_bias()));
    } else {
      out.add(l->clone());
    }
  }
  return out;
}

std::vector<std::size_t> NetworkSpec::dilations() const {
  if (dilation == DilationSchedule::Sawtooth)
    return sawtooth_schedule(num_layers);
  return std::vector<std::size_t>(num_layers, fixed_dilation);
}

Network build_network(const NetworkSpec &spec, std::uint64_t seed) {
  if (spec.num_layers == 0 || spec.hidden_channels == 0 ||
      spec.input_channels == 0 || spec.classes == 0)
    throw Error(ErrorCode::InvalidArgument, "network dimensions must be positive");
  std::mt19937_64 rng(seed);
  const auto dilations = spec.dilations();
  Network net;
  std::size_t in = spec.input_channels;
  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    net.add(std::make_unique<LinearLayer>(
        LinearLayer::initialized(in, spec.hidden_channels, rng)));
    NeuronConfig cfg;
    cfg.channels = spec.hidden_channels;
    cfg.order = spec.order;
    cfg.dilation = dilations[l];
    cfg.sharing = spec.sharing;
    cfg.quantized = spec.quantized;
    cfg.grad_mode = spec.grad_mode;
    NeuronParams params = init_neuron_params(cfg, spec.init, rng);
    round_to_f32(params.weights.values);
    auto neuron = std::make_unique<NeuronLayer>(
        cfg, std::move(params), ThresholdParams::initial(spec.hidden_channels));
    neuron->set_surrogate(spec.surrogate);
    net.add(std::move(neuron));
    in = spec.hidden_channels;
  }
  net.add(std::make_unique<LinearLayer>(
      LinearLayer::initialized(in, spec.classes, rng)));
  return net;
}

} // namespace mfpsn
