#pragma once

// Desk-scale surrogate-gradient training: synthetic long-dependency tasks,
// per-step cross-entropy, SGD/Adam, and a central-difference gradient check.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mfpsn/autoselect.hpp"
#include "mfpsn/network.hpp"

namespace mfpsn {

enum class TaskKind { DelayedXor, TemporalParity };

const char *to_string(TaskKind kind);
TaskKind task_from_string(const std::string &name);

// DelayedXor: two binary streams a, b; y[t] = a[t-L] XOR b[t].
// TemporalParity: one stream; y[t] = parity of x[t-L..t].
// Only steps t >= L carry a label.
struct ToyTask {
  TaskKind kind = TaskKind::DelayedXor;
  std::size_t lag = 6;
  std::size_t T = 20;
  std::size_t train_size = 512;
  std::size_t test_size = 256;
  std::uint64_t seed = 1;

  std::size_t input_channels() const {
    return kind == TaskKind::DelayedXor ? 2 : 1;
  }
  void validate() const;
};

inline constexpr int kUnlabeled = -1;

struct SequenceBatch {
  TensorD inputs;          // (T, N, C) time-first, values in {0, 1}
  std::vector<int> labels; // index t * N + n, kUnlabeled where unscored

  std::size_t size() const { return inputs.shape().N; }
  int label(std::size_t t, std::size_t n) const {
    return labels[t * inputs.shape().N + n];
  }
};

struct TaskData {
  SequenceBatch train;
  SequenceBatch test;
};

TaskData generate_task(const ToyTask &task);

// Sequences at the given indices, in order.
SequenceBatch select_sequences(const SequenceBatch &batch,
                               std::span<const std::size_t> indices);

struct LossResult {
  double loss = 0.0; // mean over labelled steps
  std::size_t correct = 0;
  std::size_t scored = 0;
  TensorD grad; // dL/dlogits
};

// Softmax cross-entropy on per-step logits (T, N, classes). Ties in the
// argmax go to the lower class.
LossResult cross_entropy(const TensorD &logits, const SequenceBatch &batch);

enum class OptimizerKind { SGD, AdamLike };

const char *to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string &name);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Parameters are rounded to f32 after every step so that the float model
// file stores them exactly.
class Optimizer {
public:
  Optimizer(OptimizerKind kind, double learning_rate);
  void step(const std::vector<ParamRef> &params);

private:
  OptimizerKind kind_;
  double lr_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::AdamLike;
  double learning_rate = 0.01;
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  QuantGradMode grad_mode = QuantGradMode::WholeSTE;
  StatsSource stats_source = StatsSource::SameStep;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

std::string to_text(const EpochMetrics &m);

// Accuracy of the inference forward over labelled steps.
double evaluate(Network &net, const SequenceBatch &batch);

// Minibatch training. Throws NumericFailure on a non-finite loss, naming the
// epoch and batch.
std::vector<EpochMetrics>
train(Network &net, const TaskData &data, const TrainConfig &cfg,
      const std::function<void(const EpochMetrics &)> &on_epoch = {});

// One pass over the training set (no evaluation), timed with `clock`.
double time_training_epoch(Network &net, const TaskData &data,
                           const TrainConfig &cfg, Clock &clock);

// --- gradient certification ---------------------------------------------

struct FdOptions {
  double h = 1e-5;
  double tol = 1e-4;
  double floor = 1e-6; // denominator floor for the relative error
  // Mismatches are recorded in `flagged` instead of failing the check; used
  // where the loss is only piecewise smooth (quantized weights).
  bool flag_only = false;
};

struct FdMismatch {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<FdMismatch> nonfinite;
  std::vector<FdMismatch> flagged;
  FdMismatch worst;
  bool passed = false;

  std::string to_text() const;
};

// `params` must expose value/grad spans that stay valid; `gradients` fills
// every grad span (after zeroing) and `loss` evaluates the scalar loss.
FdReport finite_diff_check(const std::vector<ParamRef> &params,
                           const std::function<double()> &loss,
                           const std::function<void()> &gradients,
                           const FdOptions &options = {});

// Checks every network parameter and the input for L = sum(G * net(x)) in
// training mode. Switch neurons to SpikeMode::Smooth first.
FdReport check_network_gradients(Network &net, const TensorD &x,
                                 const TensorD &upstream,
                                 const FdOptions &options = {});

} // namespace mfpsn
