#include "mfpsn/autoselect.hpp"

#include <algorithm>
#include <random>

#include <fmt/format.h>

namespace mfpsn {

namespace {

std::size_t argmin(const std::vector<double> &v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[best])
      best = i;
  return best;
}

TensorD random_like(const TensorD &y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TensorD z(y.shape(), y.layout());
  for (double &v : z.data())
    v = normal(rng);
  return z;
}

} // namespace

TableSelection select_from_table(
    const std::array<std::vector<std::vector<double>>, 2> &times) {
  TableSelection out;
  for (std::size_t o = 0; o < 2; ++o) {
    LayoutSelection &sel = out.per_layout[o];
    for (const auto &layer : times[o]) {
      if (layer.empty())
        throw Error(ErrorCode::InvalidArgument, "layer without candidates");
      const std::size_t i = argmin(layer);
      sel.method.push_back(i);
      sel.total_seconds += layer[i];
    }
  }
  out.layout = out.per_layout[1].total_seconds < out.per_layout[0].total_seconds
                   ? Layout::TimeLast
                   : Layout::TimeFirst;
  return out;
}

double benchmark_candidate(BenchLayer &layer, const TensorD &input,
                           const EngineChoice &choice, std::size_t m,
                           Clock &clock, std::uint64_t seed, TensorD *output) {
  if (m == 0)
    throw Error(ErrorCode::InvalidArgument, "benchmark repeats m must be >= 1");
  const auto allowed = layer.candidates();
  if (std::find(allowed.begin(), allowed.end(), choice) == allowed.end())
    throw Error(ErrorCode::InvalidArgument,
                "candidate " + to_string(choice) + " is not valid for layer " +
                    layer.label());
  const std::size_t runs = 2 * m + 1;
  double tail = 0.0;
  for (std::size_t r = 0; r < runs; ++r) {
    const double t0 = clock.now();
    TensorD y = layer.bench_forward(input, choice);
    const double t1 = clock.now();
    const TensorD z = random_like(y, seed + r);
    const double t2 = clock.now();
    layer.bench_backward(z, choice);
    const double t3 = clock.now();
    if (r >= runs - m)
      tail += (t1 - t0) + (t3 - t2);
    if (output != nullptr && r + 1 == runs)
      *output = std::move(y);
  }
  return tail / static_cast<double>(m);
}

BenchReport autoselect(std::span<BenchLayer *const> layers, const TensorD &input,
                       const AutoselectOptions &options) {
  if (layers.empty())
    throw Error(ErrorCode::InvalidArgument, "cannot autoselect an empty network");
  SteadyClock steady;
  Clock &clock = options.clock != nullptr ? *options.clock : steady;

  BenchReport report;
  std::array<std::vector<std::vector<double>>, 2> times;
  std::array<std::vector<std::vector<EngineChoice>>, 2> choices;
  for (Layout layout : {Layout::TimeFirst, Layout::TimeLast}) {
    const std::size_t o = static_cast<std::size_t>(layout);
    TensorD x = convert_layout(input, layout).tensor;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto candidates = layers[l]->candidates();
      std::vector<double> row;
      std::vector<TensorD> outputs(candidates.size());
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double t =
            benchmark_candidate(*layers[l], x, candidates[i], options.repeats,
                                clock, options.seed + 7919 * l, &outputs[i]);
        row.push_back(t);
        report.records.push_back(
            {l, layers[l]->label(), i, candidates[i], layout, t});
      }
      const std::size_t best = argmin(row);
      x = std::move(outputs[best]);
      times[o].push_back(std::move(row));
      choices[o].push_back(candidates);
    }
  }

  const TableSelection sel = select_from_table(times);
  report.per_layout = sel.per_layout;
  report.chosen_layout = sel.layout;
  const std::size_t o = static_cast<std::size_t>(sel.layout);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const EngineChoice choice = choices[o][l][sel.per_layout[o].method[l]];
    report.chosen.push_back(choice);
    layers[l]->select(choice);
  }
  return report;
}

std::string BenchReport::to_text() const {
  std::string out = "# layer label layout engine mean_seconds\n";
  for (const auto &r : records)
    out += fmt::format("{} {} {} {} {:.9g}\n", r.layer, r.layer_label,
                       to_string(r.layout), to_string(r.engine),
                       r.mean_seconds);
  for (Layout layout : {Layout::TimeFirst, Layout::TimeLast})
    out += fmt::format("total {} {:.9g}\n", to_string(layout),
                       selection(layout).total_seconds);
  out += fmt::format("chosen_layout {}\n", to_string(chosen_layout));
  for (std::size_t l = 0; l < chosen.size(); ++l)
    out += fmt::format("chosen {} {}\n", l, to_string(chosen[l]));
  return out;
}

} // namespace mfpsn
