#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "mfpsn/analysis.hpp"
#include "mfpsn/autoselect.hpp"
#include "mfpsn/model_file.hpp"
#include "mfpsn/network.hpp"
#include "mfpsn/parallel.hpp"
#include "mfpsn/quant.hpp"
#include "mfpsn/train.hpp"

using namespace mfpsn;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Problems with the files handed to a command.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Flat key=value file turned into "--key value" pairs.
std::vector<std::string> read_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw CLI::ValidationError("--config", "cannot open " + path);
  std::vector<std::string> args;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError(
          "--config", fmt::format("{}:{}: expected key=value", path, lineno));
    args.push_back("--" + trim(line.substr(0, eq)));
    args.push_back(trim(line.substr(eq + 1)));
  }
  return args;
}

// Config values go in front of the command-line arguments of the
// subcommand, so flags given explicitly win.
std::vector<std::string> expand_config(int argc, char **argv) {
  std::vector<std::string> user(argv + 1, argv + argc);
  std::vector<std::string> config;
  for (std::size_t i = 0; i < user.size(); ++i) {
    if (user[i] == "--config" && i + 1 < user.size()) {
      config = read_config(user[i + 1]);
      break;
    }
    if (user[i].rfind("--config=", 0) == 0) {
      config = read_config(user[i].substr(9));
      break;
    }
  }
  if (config.empty())
    return user;
  auto sub = std::find_if(user.begin(), user.end(),
                          [](const std::string &a) { return a.rfind('-', 0) != 0; });
  if (sub == user.end())
    return user;
  std::vector<std::string> out(user.begin(), sub + 1);
  out.insert(out.end(), config.begin(), config.end());
  out.insert(out.end(), sub + 1, user.end());
  return out;
}

void dump_config(const CLI::App &cmd) {
  for (const CLI::Option *opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (opt->get_lnames().empty() || name == "help" || name == "config" ||
        name == "dump-config")
      continue;
    std::string value = opt->get_default_str();
    if (opt->count() > 0) {
      value.clear();
      for (const auto &r : opt->results())
        value += (value.empty() ? "" : ",") + r;
    }
    fmt::print("{}={}\n", name, value);
  }
}

std::vector<std::size_t> parse_list(const std::string &text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      continue;
    try {
      std::size_t pos = 0;
      const long v = std::stol(item, &pos);
      if (pos != item.size() || v <= 0)
        throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception &) {
      throw Error(ErrorCode::InvalidArgument, "bad list entry '" + item + "'");
    }
  }
  return out;
}

const std::map<std::string, DilationSchedule> kDilations{
    {"sawtooth", DilationSchedule::Sawtooth}, {"fixed", DilationSchedule::Fixed}};
const std::map<std::string, WeightSharing> kSharing{
    {"channel_wise", WeightSharing::ChannelWise},
    {"shared", WeightSharing::SharedAcrossChannels}};
const std::map<std::string, QuantGradMode> kGradModes{
    {"whole_ste", QuantGradMode::WholeSTE}, {"round_ste", QuantGradMode::RoundSTE}};
const std::map<std::string, WeightInit> kInits{{"lif", WeightInit::LifKernel},
                                               {"uniform", WeightInit::Uniform}};
const std::map<std::string, SurrogateKind> kSurrogates{
    {"arctan", SurrogateKind::Arctan}, {"rational", SurrogateKind::RationalSigmoidDeriv}};
const std::map<std::string, StatsSource> kStats{{"same_step", StatsSource::SameStep},
                                                {"running", StatsSource::Running}};

template <class T>
std::string name_of(const std::map<std::string, T> &m, T v) {
  for (const auto &[k, x] : m)
    if (x == v)
      return k;
  return "?";
}

template <class T>
CLI::Option *add_enum(CLI::App *cmd, const std::string &flag, T &value,
                      const std::map<std::string, T> &names, const std::string &help) {
  return cmd->add_option(flag, value, help)
      ->transform(CLI::CheckedTransformer(names))
      ->default_str(name_of(names, value));
}

struct Common {
  std::string config;
  bool dump = false;
  std::size_t threads = 1;
};

void add_common(CLI::App *cmd, Common &c) {
  cmd->add_option("--config", c.config, "key=value file of option defaults");
  cmd->add_flag("--dump-config", c.dump, "print the effective options and exit");
  cmd->add_option("--threads", c.threads, "worker threads")
      ->check(CLI::PositiveNumber);
}

struct NetFlags {
  std::size_t hidden = 32;
  std::size_t layers = 3;
  std::size_t order = 2;
  DilationSchedule dilation = DilationSchedule::Sawtooth;
  std::size_t fixed_dilation = 1;
  WeightSharing sharing = WeightSharing::ChannelWise;
  bool quantized = true;
  QuantGradMode grad_mode = QuantGradMode::WholeSTE;
  WeightInit init = WeightInit::LifKernel;
  SurrogateKind surrogate = SurrogateKind::Arctan;
  double alpha = 2.0;
  std::uint64_t model_seed = 0;

  NetworkSpec spec(std::size_t input_channels) const {
    NetworkSpec s;
    s.input_channels = input_channels;
    s.hidden_channels = hidden;
    s.classes = 2;
    s.num_layers = layers;
    s.order = order;
    s.dilation = dilation;
    s.fixed_dilation = fixed_dilation;
    s.sharing = sharing;
    s.quantized = quantized;
    s.grad_mode = grad_mode;
    s.init = init;
    s.surrogate = {surrogate, alpha};
    return s;
  }
};

void add_net(CLI::App *cmd, NetFlags &n) {
  cmd->add_option("--hidden", n.hidden, "channels per neuron layer")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--layers", n.layers, "neuron layers")->check(CLI::PositiveNumber);
  cmd->add_option("--order", n.order, "taps per neuron (k)")->check(CLI::PositiveNumber);
  add_enum(cmd, "--dilation", n.dilation, kDilations, "sawtooth or fixed");
  cmd->add_option("--fixed-dilation", n.fixed_dilation, "d for the fixed schedule")
      ->check(CLI::PositiveNumber);
  add_enum(cmd, "--sharing", n.sharing, kSharing, "channel_wise or shared");
  cmd->add_option("--quantized", n.quantized, "power-of-two weights in training");
  add_enum(cmd, "--grad-mode", n.grad_mode, kGradModes, "whole_ste or round_ste");
  add_enum(cmd, "--init", n.init, kInits, "lif or uniform");
  add_enum(cmd, "--surrogate", n.surrogate, kSurrogates, "arctan or rational");
  cmd->add_option("--alpha", n.alpha, "surrogate sharpness")->check(CLI::PositiveNumber);
  cmd->add_option("--model-seed", n.model_seed, "weight initialisation seed");
}

// ---------------------------------------------------------------- rf

struct RfFlags {
  std::size_t layers = 3;
  std::size_t order = 2;
  DilationSchedule dilation = DilationSchedule::Sawtooth;
  std::size_t fixed_dilation = 1;
  std::size_t channels = 32;
  std::size_t batch = 1;
};

int run_rf(const RfFlags &f) {
  NetworkSpec spec;
  spec.num_layers = f.layers;
  spec.order = f.order;
  spec.dilation = f.dilation;
  spec.fixed_dilation = f.fixed_dilation;
  spec.hidden_channels = f.channels;
  const auto ds = spec.dilations();
  const std::vector<std::size_t> ks(f.layers, f.order);
  fmt::print("# rf layers={} order={} dilation={}\n", f.layers, f.order,
             name_of(kDilations, f.dilation));
  fmt::print("layer k d window rf\n");
  for (std::size_t l = 0; l < f.layers; ++l) {
    const std::span<const std::size_t> kp(ks.data(), l + 1), dp(ds.data(), l + 1);
    fmt::print("{} {} {} {} {}\n", l, ks[l], ds[l], (ks[l] - 1) * ds[l] + 1,
               receptive_field(kp, dp));
  }
  fmt::print("receptive_field {}\n", receptive_field(ks, ds));
  fmt::print("{}", inference_memory_estimate(memory_layers(spec), f.batch).to_text());
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainFlags {
  NetFlags net;
  ToyTask task;
  TrainConfig cfg;
  std::string out;
  std::string save_test_input;
};

int run_train(const TrainFlags &f) {
  const TaskData data = generate_task(f.task);
  Network net = build_network(f.net.spec(f.task.input_channels()), f.net.model_seed);
  fmt::print("# train task={} lag={} T={} layers={} order={} dilation={} sharing={} "
             "quantized={}\n",
             to_string(f.task.kind), f.task.lag, f.task.T, f.net.layers, f.net.order,
             name_of(kDilations, f.net.dilation), name_of(kSharing, f.net.sharing),
             f.net.quantized ? "true" : "false");
  fmt::print("epoch loss train_acc test_acc\n");
  const auto history = train(net, data, f.cfg, [](const EpochMetrics &m) {
    fmt::print("{}\n", to_text(m));
    std::fflush(stdout);
  });
  fmt::print("final_test_acc {:.4f}\n", history.empty() ? 0.0 : history.back().test_acc);
  if (!f.out.empty())
    save_model(net, f.out);
  if (!f.save_test_input.empty())
    save_activations(data.test.inputs, f.save_test_input);
  return kOk;
}

// ---------------------------------------------------------------- quantize

double max_relative_error(const Matrix &w, const ShiftWeights &q) {
  const Matrix d = dequantize(q);
  double worst = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w.values[i] != 0.0)
      worst = std::max(worst, std::abs(d.values[i] - w.values[i]) / std::abs(w.values[i]));
  return worst;
}

int run_quantize(const std::string &in, const std::string &out) {
  const Network net = load_model(in);
  if (net.has_quantized_neurons())
    throw DataError(in + " is already quantized");
  if (!net.has_trainable_neurons())
    throw DataError(in + " has no neuron layers");
  const Network q = net.export_quantized();
  double overall = 0.0;
  fmt::print("layer label max_rel_error\n");
  for (std::size_t l = 0; l < net.size(); ++l)
    if (const auto *n = dynamic_cast<const NeuronLayer *>(&net.layer(l))) {
      const double e = max_relative_error(n->fused().weights, n->deployed_weights());
      overall = std::max(overall, e);
      fmt::print("{} {} {:.6f}\n", l, n->label(), e);
    }
  fmt::print("max_rel_error {:.6f}\n", overall);
  save_model(q, out);
  return kOk;
}

// ---------------------------------------------------------------- infer

struct InferFlags {
  std::string model;
  std::string input;
  std::string output;
  std::string compare;
};

int run_infer(const InferFlags &f) {
  Network net = load_model(f.model);
  const TensorD x = load_activations(f.input);
  ForwardTrace trace;
  const TensorD logits =
      convert_layout(net.forward(x, false, &trace), Layout::TimeFirst).tensor;
  fmt::print("# infer input={} quantized={}\n", to_string(x.shape()),
             net.has_quantized_neurons() ? "true" : "false");
  fmt::print("layer label adds muls shifts\n");
  std::uint64_t neuron_muls = 0;
  for (std::size_t l = 0; l < net.size(); ++l) {
    const OpCounters &c = trace.counters[l];
    fmt::print("{} {} {} {} {}\n", l, net.layer(l).label(), c.adds, c.muls, c.shifts);
    if (net.layer(l).is_neuron())
      neuron_muls += c.muls;
  }
  fmt::print("neuron_muls {}\n", neuron_muls);
  for (std::size_t i = 0; i < trace.spikes.size(); ++i) {
    const auto &s = trace.spikes[i].data();
    const double ones = std::count(s.begin(), s.end(), 1.0);
    fmt::print("firing_rate {} {:.6f}\n", i, ones / double(s.size()));
  }
  const Shape &sh = logits.shape();
  std::vector<std::size_t> counts(sh.C, 0);
  for (std::size_t t = 0; t < sh.T; ++t)
    for (std::size_t n = 0; n < sh.N; ++n) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < sh.C; ++c)
        if (logits.at(t, n, c) > logits.at(t, n, best))
          best = c;
      ++counts[best];
    }
  for (std::size_t c = 0; c < sh.C; ++c)
    fmt::print("predicted {} {}\n", c, counts[c]);

  if (!f.compare.empty()) {
    Network other = load_model(f.compare);
    ForwardTrace ot;
    other.forward(x, false, &ot);
    if (ot.spikes.size() != trace.spikes.size())
      throw DataError("models have different numbers of neuron layers");
    std::size_t same = 0, total = 0;
    for (std::size_t i = 0; i < trace.spikes.size(); ++i) {
      const TensorD a = convert_layout(trace.spikes[i], Layout::TimeFirst).tensor;
      const TensorD b = convert_layout(ot.spikes[i], Layout::TimeFirst).tensor;
      if (a.shape() != b.shape())
        throw DataError("models have different neuron layer shapes");
      for (std::size_t e = 0; e < a.numel(); ++e)
        same += a.data()[e] == b.data()[e];
      total += a.numel();
    }
    fmt::print("spike_agreement {:.6f}\n", double(same) / double(total));
  }
  if (!f.output.empty())
    save_activations(logits, f.output, DType::F64);
  return kOk;
}

// ---------------------------------------------------------------- bench

struct BenchFlags {
  NetFlags net;
  std::size_t input_channels = 2;
  std::size_t T = 16;
  std::size_t batch = 8;
  std::size_t repeats = kDefaultBenchRepeats;
  std::string clock = "steady";
  std::uint64_t seed = 0;
  std::string sweep;
};

TensorD random_binary(const Shape &shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return TensorD::generate(shape, Layout::TimeFirst,
                           [&](auto...) { return double(rng() % 2); });
}

int run_bench(const BenchFlags &f) {
  std::unique_ptr<Clock> clock;
  if (f.clock == "ticks")
    clock = std::make_unique<TickClock>();
  else
    clock = std::make_unique<SteadyClock>();

  Network net = build_network(f.net.spec(f.input_channels), f.net.model_seed);
  const TensorD x = random_binary(Shape{f.T, f.batch, f.input_channels, {}}, f.seed);
  auto layers = net.bench_layers();
  const BenchReport report = autoselect(layers, x, {f.repeats, f.seed, clock.get()});
  net.apply(report);
  fmt::print("# bench T={} batch={} repeats={} clock={}\n", f.T, f.batch, f.repeats,
             f.clock);
  fmt::print("{}", report.to_text());

  const auto sweep = parse_list(f.sweep);
  if (sweep.empty())
    return kOk;
  // One neuron layer per T; every candidate in both layouts.
  fmt::print("# sweep channels={} order={}\n", f.net.hidden, f.net.order);
  fmt::print("T layout engine seconds\n");
  for (std::size_t T : sweep) {
    NeuronConfig cfg;
    cfg.channels = f.net.hidden;
    cfg.order = std::min(f.net.order, T);
    cfg.quantized = f.net.quantized;
    std::mt19937_64 rng(f.seed);
    NeuronLayer layer(cfg, init_neuron_params(cfg, f.net.init, rng),
                      ThresholdParams::initial(cfg.channels));
    std::normal_distribution<double> normal;
    const TensorD in = TensorD::generate(Shape{T, f.batch, cfg.channels, {}},
                                         Layout::TimeFirst,
                                         [&](auto...) { return normal(rng); });
    for (Layout layout : {Layout::TimeFirst, Layout::TimeLast}) {
      const TensorD xl = convert_layout(in, layout).tensor;
      for (const EngineChoice &c : layer.candidates())
        fmt::print("{} {} {} {:.9g}\n", T, to_string(layout), to_string(c),
                   benchmark_candidate(layer, xl, c, f.repeats, *clock, f.seed));
    }
  }
  return kOk;
}

// ---------------------------------------------------------------- energy

struct EnergyFlags {
  std::string mode = "reference";
  std::string kind = "both";
  std::size_t T = 32;
  std::size_t k = 0;
  std::string sweep;
  std::string model;
  std::string input;
  EnergyModel costs;
};

int run_energy(const EnergyFlags &f) {
  f.costs.validate();
  if (f.mode == "reference") {
    for (NeuronKind kind : {NeuronKind::PSN, NeuronKind::Ours}) {
      if (f.kind != "both" && f.kind != to_string(kind))
        continue;
      fmt::print("{}", network_energy_report(reference_network_counts(kind), f.costs).to_text());
    }
    return kOk;
  }
  if (f.mode == "neuron") {
    auto Ts = parse_list(f.sweep);
    if (Ts.empty())
      Ts.push_back(f.T);
    fmt::print("T k psn_pJ ours_pJ ratio\n");
    for (std::size_t T : Ts) {
      const std::size_t k = f.k == 0 ? T : f.k;
      const double psn = neuron_energy(NeuronKind::PSN, T, k, f.costs);
      const double ours = neuron_energy(NeuronKind::Ours, T, k, f.costs);
      fmt::print("{} {} {:.4f} {:.4f} {:.4f}\n", T, k, psn, ours, psn / ours);
    }
    return kOk;
  }
  if (f.mode == "measured") {
    if (f.model.empty() || f.input.empty())
      throw CLI::ValidationError("--mode measured", "needs --model and --input");
    Network net = load_model(f.model);
    const TensorD x = load_activations(f.input);
    NetworkOpCounts counts = measure_network_counts(net, x);
    counts.name = f.model;
    fmt::print("{}", network_energy_report(counts, f.costs).to_text());
    return kOk;
  }
  throw CLI::ValidationError("--mode", "expected reference, neuron or measured");
}

int exit_code(ErrorCode code) {
  switch (code) {
  case ErrorCode::NumericFailure:
    return kNumeric;
  case ErrorCode::InvalidArgument:
  case ErrorCode::UnknownEngine:
    return kUsage;
  default:
    return kData;
  }
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Multiplication-free channel-wise parallel spiking neurons", "mfpsn"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(
      CLI::MultiOptionPolicy::TakeLast);

  Common common;

  RfFlags rf;
  auto *rf_cmd = app.add_subcommand("rf", "receptive field and memory per layer");
  add_common(rf_cmd, common);
  rf_cmd->add_option("--layers", rf.layers, "neuron layers")->check(CLI::PositiveNumber);
  rf_cmd->add_option("--order", rf.order, "taps per neuron (k)")
      ->check(CLI::PositiveNumber);
  add_enum(rf_cmd, "--dilation", rf.dilation, kDilations, "sawtooth or fixed");
  rf_cmd->add_option("--fixed-dilation", rf.fixed_dilation, "d for the fixed schedule")
      ->check(CLI::PositiveNumber);
  rf_cmd->add_option("--channels", rf.channels, "channels per layer for memory")
      ->check(CLI::PositiveNumber);
  rf_cmd->add_option("--batch", rf.batch, "batch size for memory")
      ->check(CLI::PositiveNumber);

  TrainFlags tr;
  auto *train_cmd = app.add_subcommand("train", "train on a synthetic sequence task");
  add_common(train_cmd, common);
  add_net(train_cmd, tr.net);
  std::string task_name = "delayed_xor", optimizer_name = "adam";
  train_cmd->add_option("--task", task_name, "delayed_xor or temporal_parity")
      ->check(CLI::IsMember({"delayed_xor", "temporal_parity"}));
  train_cmd->add_option("--lag", tr.task.lag, "task lag");
  train_cmd->add_option("--T", tr.task.T, "time steps")->check(CLI::PositiveNumber);
  train_cmd->add_option("--train-size", tr.task.train_size, "training sequences")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--test-size", tr.task.test_size, "held-out sequences")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--data-seed", tr.task.seed, "task generator seed");
  train_cmd->add_option("--optimizer", optimizer_name, "sgd or adam")
      ->check(CLI::IsMember({"sgd", "adam"}));
  train_cmd->add_option("--lr", tr.cfg.learning_rate, "learning rate")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", tr.cfg.epochs, "epochs");
  train_cmd->add_option("--batch-size", tr.cfg.batch_size, "sequences per step")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr.cfg.seed, "shuffling seed");
  add_enum(train_cmd, "--stats", tr.cfg.stats_source, kStats, "same_step or running");
  train_cmd->add_option("--out", tr.out, "model file to write");
  train_cmd->add_option("--save-test-input", tr.save_test_input,
                        "activation file for the held-out inputs");

  std::string q_in, q_out;
  auto *quant_cmd = app.add_subcommand("quantize", "fuse and quantize a float model");
  add_common(quant_cmd, common);
  quant_cmd->add_option("input", q_in, "float model file")->required();
  quant_cmd->add_option("output", q_out, "quantized model file")->required();

  InferFlags inf;
  auto *infer_cmd = app.add_subcommand("infer", "run a model on an activation file");
  add_common(infer_cmd, common);
  infer_cmd->add_option("model", inf.model, "model file")->required();
  infer_cmd->add_option("input", inf.input, "activation file (T N C)")->required();
  infer_cmd->add_option("--output", inf.output, "write the logits here (f64)");
  infer_cmd->add_option("--compare", inf.compare, "second model for spike agreement");

  BenchFlags bf;
  auto *bench_cmd = app.add_subcommand("bench", "autoselect engines and layout");
  add_common(bench_cmd, common);
  add_net(bench_cmd, bf.net);
  bench_cmd->add_option("--input-channels", bf.input_channels, "input channels")
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--T", bf.T, "time steps")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--batch", bf.batch, "batch size")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--repeats", bf.repeats, "m: 2m+1 runs, mean of the last m")
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--clock", bf.clock, "steady or ticks")
      ->check(CLI::IsMember({"steady", "ticks"}));
  bench_cmd->add_option("--seed", bf.seed, "input and gradient seed");
  bench_cmd->add_option("--sweep", bf.sweep, "comma separated T values");

  EnergyFlags ef;
  auto *energy_cmd = app.add_subcommand("energy", "energy estimates");
  add_common(energy_cmd, common);
  energy_cmd->add_option("--mode", ef.mode, "reference, neuron or measured")
      ->check(CLI::IsMember({"reference", "neuron", "measured"}));
  energy_cmd->add_option("--kind", ef.kind, "psn, ours or both")
      ->check(CLI::IsMember({"psn", "ours", "both"}));
  energy_cmd->add_option("--T", ef.T, "time steps")->check(CLI::PositiveNumber);
  energy_cmd->add_option("--k", ef.k, "taps, 0 means k = T");
  energy_cmd->add_option("--sweep", ef.sweep, "comma separated T values");
  energy_cmd->add_option("--model", ef.model, "model file");
  energy_cmd->add_option("--input", ef.input, "activation file");
  energy_cmd->add_option("--e-mul", ef.costs.e_mul, "pJ per multiply");
  energy_cmd->add_option("--e-add", ef.costs.e_add, "pJ per add");
  energy_cmd->add_option("--e-shift", ef.costs.e_shift, "pJ per shift");
  energy_cmd->add_option("--e-mac", ef.costs.e_mac, "pJ per MAC");
  energy_cmd->add_option("--e-ac", ef.costs.e_ac, "pJ per AC");

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    fmt::print(stderr, "error: {} (see --help)\n", e.what());
    return kUsage;
  }

  CLI::App *cmd = app.get_subcommands().front();
  if (common.dump) {
    dump_config(*cmd);
    return kOk;
  }
  set_num_threads(common.threads);

  try {
    if (cmd == rf_cmd)
      return run_rf(rf);
    if (cmd == train_cmd) {
      tr.task.kind = task_from_string(task_name);
      tr.cfg.optimizer = optimizer_from_string(optimizer_name);
      tr.cfg.grad_mode = tr.net.grad_mode;
      return run_train(tr);
    }
    if (cmd == quant_cmd)
      return run_quantize(q_in, q_out);
    if (cmd == infer_cmd)
      return run_infer(inf);
    if (cmd == bench_cmd)
      return run_bench(bf);
    return run_energy(ef);
  } catch (const CLI::ParseError &e) {
    std::fflush(stdout);
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const Error &e) {
    std::fflush(stdout);
    fmt::print(stderr, "error: {}\n", e.what());
    return exit_code(e.code());
  } catch (const std::exception &e) {
    std::fflush(stdout);
    fmt::print(stderr, "error: {}\n", e.what());
    return kData;
  }
}
