#pragma once

// Empirical engine/layout selection: every candidate of every layer is timed
// over 2m+1 forward+backward runs (mean of the last m), each layout's total
// is the sum of per-layer minima, and the fastest layout wins.

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mfpsn/engines.hpp"
#include "mfpsn/tensor.hpp"

namespace mfpsn {

inline constexpr std::size_t kDefaultBenchRepeats = 5; // m

class Clock {
public:
  virtual ~Clock() = default;
  virtual double now() = 0; // seconds
};

class SteadyClock final : public Clock {
public:
  double now() override {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
  }
};

// Reads advance by one tick each; every candidate measures the same, so
// reports built with it are reproducible.
class TickClock final : public Clock {
public:
  double now() override { return static_cast<double>(ticks_++); }

private:
  std::uint64_t ticks_ = 0;
};

// A layer as seen by the benchmark: a list of interchangeable methods and a
// way to run forward and backward with any of them.
class BenchLayer {
public:
  virtual ~BenchLayer() = default;
  virtual std::string label() const = 0;
  virtual std::vector<EngineChoice> candidates() const = 0;
  virtual TensorD bench_forward(const TensorD &x, const EngineChoice &choice) = 0;
  virtual void bench_backward(const TensorD &grad_out,
                              const EngineChoice &choice) = 0;
  virtual void select(const EngineChoice &choice) = 0;
};

struct BenchRecord {
  std::size_t layer = 0;
  std::string layer_label;
  std::size_t candidate = 0;
  EngineChoice engine;
  Layout layout = Layout::TimeFirst;
  double mean_seconds = 0.0;
};

struct LayoutSelection {
  std::vector<std::size_t> method; // argmin index per layer
  double total_seconds = 0.0;      // sum of per-layer minima
};

struct BenchReport {
  std::vector<BenchRecord> records;
  std::array<LayoutSelection, 2> per_layout; // indexed by Layout
  Layout chosen_layout = Layout::TimeFirst;
  std::vector<EngineChoice> chosen; // per layer, for chosen_layout

  const LayoutSelection &selection(Layout layout) const {
    return per_layout[static_cast<std::size_t>(layout)];
  }
  // One record per line: layer, label, layout, engine, mean seconds; then
  // the per-layout totals and the selection.
  std::string to_text() const;
};

// times[layout][layer][candidate]. Ties go to the lower candidate index and
// to TimeFirst.
struct TableSelection {
  Layout layout = Layout::TimeFirst;
  std::array<LayoutSelection, 2> per_layout;
};
TableSelection select_from_table(
    const std::array<std::vector<std::vector<double>>, 2> &times);

struct AutoselectOptions {
  std::size_t repeats = kDefaultBenchRepeats; // m
  std::uint64_t seed = 0;
  Clock *clock = nullptr; // defaults to a SteadyClock
};

// Mean of the last m of 2m+1 timed runs of forward plus backward with a
// standard-normal upstream gradient. `output` receives the forward result.
double benchmark_candidate(BenchLayer &layer, const TensorD &input,
                           const EngineChoice &choice, std::size_t m,
                           Clock &clock, std::uint64_t seed,
                           TensorD *output = nullptr);

// Runs the full selection and applies the chosen method to every layer.
// The caller owns switching the network to report.chosen_layout.
BenchReport autoselect(std::span<BenchLayer *const> layers, const TensorD &input,
                       const AutoselectOptions &options = {});

} // namespace mfpsn
