#include "mfpsn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace mfpsn {

const char *to_string(TaskKind kind) {
  return kind == TaskKind::DelayedXor ? "delayed_xor" : "temporal_parity";
}

TaskKind task_from_string(const std::string &name) {
  if (name == "delayed_xor")
    return TaskKind::DelayedXor;
  if (name == "temporal_parity")
    return TaskKind::TemporalParity;
  throw Error(ErrorCode::InvalidArgument, "unknown task '" + name + "'");
}

void ToyTask::validate() const {
  if (T == 0 || train_size == 0 || test_size == 0)
    throw Error(ErrorCode::InvalidArgument, "task sizes must be positive");
  if (lag >= T)
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("lag {} leaves no labelled step in T={}", lag, T));
}

namespace {

SequenceBatch make_split(const ToyTask &task, std::size_t count,
                         std::mt19937_64 &rng) {
  const std::size_t C = task.input_channels();
  Shape shape{task.T, count, C, {}};
  SequenceBatch out{TensorD(shape, Layout::TimeFirst),
                    std::vector<int>(task.T * count, kUnlabeled)};
  std::bernoulli_distribution coin(0.5);
  for (std::size_t n = 0; n < count; ++n)
    for (std::size_t t = 0; t < task.T; ++t)
      for (std::size_t c = 0; c < C; ++c)
        out.inputs.at(t, n, c) = coin(rng) ? 1.0 : 0.0;
  for (std::size_t n = 0; n < count; ++n)
    for (std::size_t t = task.lag; t < task.T; ++t) {
      int y = 0;
      if (task.kind == TaskKind::DelayedXor) {
        y = static_cast<int>(out.inputs.at(t - task.lag, n, 0)) ^
            static_cast<int>(out.inputs.at(t, n, 1));
      } else {
        for (std::size_t j = t - task.lag; j <= t; ++j)
          y ^= static_cast<int>(out.inputs.at(j, n, 0));
      }
      out.labels[t * count + n] = y;
    }
  return out;
}

} // namespace

TaskData generate_task(const ToyTask &task) {
  task.validate();
  std::mt19937_64 rng(task.seed);
  TaskData data;
  data.train = make_split(task, task.train_size, rng);
  data.test = make_split(task, task.test_size, rng);
  return data;
}

SequenceBatch select_sequences(const SequenceBatch &batch,
                               std::span<const std::size_t> indices) {
  const Shape &src = batch.inputs.shape();
  if (indices.empty())
    throw Error(ErrorCode::InvalidArgument, "empty sequence selection");
  Shape shape = src;
  shape.N = indices.size();
  SequenceBatch out{TensorD(shape, Layout::TimeFirst),
                    std::vector<int>(src.T * indices.size(), kUnlabeled)};
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::size_t n = indices[j];
    if (n >= src.N)
      throw Error(ErrorCode::InvalidArgument, "sequence index out of range");
    for (std::size_t t = 0; t < src.T; ++t) {
      for (std::size_t c = 0; c < src.C; ++c)
        out.inputs.at(t, j, c) = batch.inputs.at(t, n, c);
      out.labels[t * indices.size() + j] = batch.label(t, n);
    }
  }
  return out;
}

LossResult cross_entropy(const TensorD &logits, const SequenceBatch &batch) {
  const Shape &s = logits.shape();
  if (s.T != batch.inputs.shape().T || s.N != batch.inputs.shape().N ||
      s.spatial_size() != 1)
    throw Error(ErrorCode::ShapeMismatch,
                "logits " + to_string(s) + " do not match the batch");
  LossResult out;
  out.grad = TensorD(s, logits.layout());
  std::vector<double> p(s.C);
  for (std::size_t t = 0; t < s.T; ++t)
    for (std::size_t n = 0; n < s.N; ++n) {
      const int y = batch.label(t, n);
      if (y == kUnlabeled)
        continue;
      if (y < 0 || static_cast<std::size_t>(y) >= s.C)
        throw Error(ErrorCode::InvalidArgument, "label outside class range");
      double mx = logits.at(t, n, 0);
      std::size_t arg = 0;
      for (std::size_t c = 1; c < s.C; ++c)
        if (logits.at(t, n, c) > mx) {
          mx = logits.at(t, n, c);
          arg = c;
        }
      double z = 0.0;
      for (std::size_t c = 0; c < s.C; ++c) {
        p[c] = std::exp(logits.at(t, n, c) - mx);
        z += p[c];
      }
      out.loss += std::log(z) + mx - logits.at(t, n, y);
      for (std::size_t c = 0; c < s.C; ++c)
        out.grad.at(t, n, c) = p[c] / z - (c == static_cast<std::size_t>(y));
      out.correct += arg == static_cast<std::size_t>(y);
      ++out.scored;
    }
  if (out.scored == 0)
    throw Error(ErrorCode::InvalidArgument, "batch has no labelled steps");
  const double inv = 1.0 / static_cast<double>(out.scored);
  out.loss *= inv;
  for (double &g : out.grad.data())
    g *= inv;
  return out;
}

const char *to_string(OptimizerKind kind) {
  return kind == OptimizerKind::SGD ? "sgd" : "adam";
}

OptimizerKind optimizer_from_string(const std::string &name) {
  if (name == "sgd")
    return OptimizerKind::SGD;
  if (name == "adam")
    return OptimizerKind::AdamLike;
  throw Error(ErrorCode::InvalidArgument, "unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate)
    : kind_(kind), lr_(learning_rate) {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
}

void Optimizer::step(const std::vector<ParamRef> &params) {
  ++steps_;
  if (kind_ == OptimizerKind::AdamLike && m_.empty()) {
    for (const auto &p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  if (kind_ == OptimizerKind::AdamLike && m_.size() != params.size())
    throw Error(ErrorCode::InvalidArgument, "parameter set changed between steps");
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(steps_));
  for (std::size_t j = 0; j < params.size(); ++j) {
    auto value = params[j].value;
    const auto grad = params[j].grad;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      if (kind_ == OptimizerKind::SGD) {
        value[i] -= lr_ * g;
      } else {
        double &m = m_[j][i];
        double &v = v_[j][i];
        m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
        v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g * g;
        value[i] -= lr_ * (m / c1) / (std::sqrt(v / c2) + kAdamEps);
      }
      value[i] = round_to_f32(value[i]);
    }
  }
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0)
    throw Error(ErrorCode::InvalidArgument, "epochs and batch size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
}

std::string to_text(const EpochMetrics &m) {
  return fmt::format("{} {:.6f} {:.4f} {:.4f}", m.epoch, m.loss, m.train_acc,
                     m.test_acc);
}

double evaluate(Network &net, const SequenceBatch &batch) {
  const TensorD logits = net.forward(batch.inputs, false);
  const LossResult r =
      cross_entropy(convert_layout(logits, Layout::TimeFirst).tensor, batch);
  return static_cast<double>(r.correct) / static_cast<double>(r.scored);
}

namespace {

// Runs one epoch of updates; returns the mean batch loss.
double run_epoch(Network &net, const SequenceBatch &train_set,
                 const TrainConfig &cfg, Optimizer &opt, std::mt19937_64 &rng,
                 std::size_t epoch) {
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto params = net.parameters();
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    const SequenceBatch batch = select_sequences(
        train_set, std::span<const std::size_t>(order).subspan(begin, end - begin));
    net.zero_grad();
    TensorD logits;
    try {
      logits = net.forward(batch.inputs, true);
    } catch (const Error &e) {
      if (e.code() != ErrorCode::NumericFailure)
        throw;
      throw Error(ErrorCode::NumericFailure,
                  fmt::format("{} at epoch {} batch {}", e.detail(), epoch, batches));
    }
    const TensorD tf = convert_layout(logits, Layout::TimeFirst).tensor;
    LossResult r = cross_entropy(tf, batch);
    if (!std::isfinite(r.loss))
      throw Error(ErrorCode::NumericFailure,
                  fmt::format("non-finite loss at epoch {} batch {}", epoch,
                              batches));
    net.backward(convert_layout(r.grad, net.layout()).tensor);
    for (const auto &p : params)
      for (double g : p.grad)
        if (!std::isfinite(g))
          throw Error(ErrorCode::NumericFailure,
                      fmt::format("non-finite gradient in {} at epoch {} batch {}",
                                  p.name, epoch, batches));
    opt.step(params);
    for (const auto &p : params)
      for (double v : p.value)
        if (!std::isfinite(v))
          throw Error(ErrorCode::NumericFailure,
                      fmt::format("non-finite parameter in {} after epoch {} batch {}",
                                  p.name, epoch, batches));
    total += r.loss;
    ++batches;
  }
  return total / static_cast<double>(batches);
}

} // namespace

std::vector<EpochMetrics>
train(Network &net, const TaskData &data, const TrainConfig &cfg,
      const std::function<void(const EpochMetrics &)> &on_epoch) {
  cfg.validate();
  if (net.input_channels() != data.train.inputs.shape().C)
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("network expects {} input channels, task has {}",
                            net.input_channels(), data.train.inputs.shape().C));
  net.set_grad_mode(cfg.grad_mode);
  net.set_stats_source(cfg.stats_source);
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  std::mt19937_64 rng(cfg.seed);
  std::vector<EpochMetrics> history;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    EpochMetrics m;
    m.epoch = e;
    m.loss = run_epoch(net, data.train, cfg, opt, rng, e);
    m.train_acc = evaluate(net, data.train);
    m.test_acc = evaluate(net, data.test);
    history.push_back(m);
    if (on_epoch)
      on_epoch(m);
  }
  return history;
}

double time_training_epoch(Network &net, const TaskData &data,
                           const TrainConfig &cfg, Clock &clock) {
  cfg.validate();
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  std::mt19937_64 rng(cfg.seed);
  const double t0 = clock.now();
  run_epoch(net, data.train, cfg, opt, rng, 1);
  return clock.now() - t0;
}

// --- gradient certification ---------------------------------------------

std::string FdReport::to_text() const {
  std::string out = fmt::format(
      "checked {} max_rel_error {:.3e} passed {} flagged {} nonfinite {}\n",
      checked, max_rel_error, passed ? "yes" : "no", flagged.size(),
      nonfinite.size());
  if (checked > 0)
    out += fmt::format("worst {}[{}] analytic {:.12g} numeric {:.12g}\n",
                       worst.param, worst.index, worst.analytic, worst.numeric);
  for (const auto &m : nonfinite)
    out += fmt::format("nonfinite {}[{}] analytic {} numeric {}\n", m.param,
                       m.index, m.analytic, m.numeric);
  return out;
}

FdReport finite_diff_check(const std::vector<ParamRef> &params,
                           const std::function<double()> &loss,
                           const std::function<void()> &gradients,
                           const FdOptions &options) {
  if (!(options.h > 0.0))
    throw Error(ErrorCode::InvalidArgument, "finite-difference step must be positive");
  for (const auto &p : params)
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
  gradients();
  std::vector<std::vector<double>> analytic;
  for (const auto &p : params)
    analytic.emplace_back(p.grad.begin(), p.grad.end());

  FdReport report;
  for (std::size_t j = 0; j < params.size(); ++j) {
    auto value = params[j].value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + options.h;
      const double up = loss();
      value[i] = saved - options.h;
      const double down = loss();
      value[i] = saved;
      FdMismatch m{params[j].name, i, analytic[j][i],
                   (up - down) / (2.0 * options.h), 0.0};
      ++report.checked;
      if (!std::isfinite(m.analytic) || !std::isfinite(m.numeric)) {
        report.nonfinite.push_back(m);
        continue;
      }
      m.rel_error = std::abs(m.analytic - m.numeric) /
                    std::max({std::abs(m.analytic), std::abs(m.numeric),
                              options.floor});
      if (m.rel_error > options.tol && options.flag_only)
        report.flagged.push_back(m);
      if (m.rel_error >= report.max_rel_error) {
        report.max_rel_error = m.rel_error;
        report.worst = m;
      }
    }
  }
  report.passed = report.nonfinite.empty() &&
                  (options.flag_only || report.max_rel_error <= options.tol);
  return report;
}

FdReport check_network_gradients(Network &net, const TensorD &x,
                                 const TensorD &upstream,
                                 const FdOptions &options) {
  TensorD input = x.clone();
  std::vector<double> input_grad(input.numel(), 0.0);
  std::vector<ParamRef> params = net.parameters();
  params.push_back({"input", input.data(), input_grad});

  auto loss = [&] {
    const TensorD y = net.forward(input, true);
    const TensorD g = convert_layout(upstream, y.layout()).tensor;
    if (!(g.shape() == y.shape()))
      throw Error(ErrorCode::ShapeMismatch, "upstream gradient shape mismatch");
    double total = 0.0;
    const auto yd = y.data();
    const auto gd = g.data();
    for (std::size_t i = 0; i < yd.size(); ++i)
      total += yd[i] * gd[i];
    return total;
  };
  auto gradients = [&] {
    net.zero_grad();
    const TensorD y = net.forward(input, true);
    const TensorD gx =
        net.backward(convert_layout(upstream, y.layout()).tensor);
    const TensorD gx_in = convert_layout(gx, input.layout()).tensor;
    std::copy(gx_in.data().begin(), gx_in.data().end(), input_grad.begin());
  };
  return finite_diff_check(params, loss, gradients, options);
}

} // namespace mfpsn
