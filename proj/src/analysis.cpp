#include "mfpsn/analysis.hpp"

#include <cmath>

#include <fmt/format.h>

namespace mfpsn {

void EnergyModel::validate() const {
  for (double e : {e_mul, e_add, e_shift, e_mac, e_ac})
    if (!(e > 0.0) || !std::isfinite(e))
      throw Error(ErrorCode::InvalidArgument,
                  "energy constants must be positive");
}

const char *to_string(NeuronKind kind) {
  return kind == NeuronKind::PSN ? "psn" : "ours";
}

double neuron_energy(NeuronKind kind, std::size_t T, std::size_t k,
                     const EnergyModel &model) {
  model.validate();
  if (T == 0)
    throw Error(ErrorCode::InvalidArgument, "T must be positive");
  const double t = static_cast<double>(T);
  if (kind == NeuronKind::PSN)
    return model.e_mac * t * t + model.e_add * t;
  if (k == 0 || k > T)
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("order k={} must lie in [1, T={}]", k, T));
  const double kk = static_cast<double>(k);
  return (model.e_shift + model.e_add) * (t + (1.0 - kk) / 2.0) * kk +
         model.e_add * t;
}

double synaptic_energy(double flops_first_layer,
                       std::span<const double> sops_per_layer,
                       const EnergyModel &model) {
  model.validate();
  if (flops_first_layer < 0.0)
    throw Error(ErrorCode::InvalidArgument, "negative FLOP count");
  double sops = 0.0;
  for (double s : sops_per_layer) {
    if (s < 0.0)
      throw Error(ErrorCode::InvalidArgument, "negative SOP count");
    sops += s;
  }
  return model.e_mac * flops_first_layer + model.e_ac * sops;
}

double synaptic_ops(double firing_rate, std::size_t T, double flops) {
  if (firing_rate < 0.0 || firing_rate > 1.0 || flops < 0.0)
    throw Error(ErrorCode::InvalidArgument,
                "firing rate must lie in [0, 1] and FLOPs be non-negative");
  return firing_rate * static_cast<double>(T) * flops;
}

NetworkOpCounts reference_network_counts(NeuronKind kind) {
  NetworkOpCounts out;
  out.name = to_string(kind);
  out.first_layer_flops = 0.041e6;
  if (kind == NeuronKind::PSN) {
    out.neurons.push_back({"neurons", 1.91e7, 1.97e7, 0.0});
    out.sops = {3.194e6};
  } else {
    out.neurons.push_back({"neurons", 0.0, 7.92e6, 7.32e6});
    out.sops = {2.660e6};
  }
  return out;
}

EnergyReport network_energy_report(const NetworkOpCounts &counts,
                                   const EnergyModel &model) {
  model.validate();
  EnergyReport r;
  r.name = counts.name;
  for (const auto &n : counts.neurons) {
    if (n.muls < 0.0 || n.adds < 0.0 || n.shifts < 0.0)
      throw Error(ErrorCode::InvalidArgument, "negative operation count");
    EnergyRow row;
    row.name = n.name;
    row.kind = "neuron";
    row.muls = n.muls;
    row.adds = n.adds;
    row.shifts = n.shifts;
    row.picojoules =
        model.e_mul * n.muls + model.e_add * n.adds + model.e_shift * n.shifts;
    r.neuron_pj += row.picojoules;
    r.rows.push_back(row);
  }
  EnergyRow syn;
  syn.name = "synaptic";
  syn.kind = "synaptic";
  syn.flops = counts.first_layer_flops;
  for (double s : counts.sops)
    syn.sops += s;
  syn.picojoules = synaptic_energy(counts.first_layer_flops, counts.sops, model);
  r.synaptic_pj = syn.picojoules;
  r.rows.push_back(syn);
  r.total_pj = r.neuron_pj + r.synaptic_pj;
  return r;
}

std::string EnergyReport::to_text() const {
  std::string out = fmt::format("# energy {}\n", name);
  out += "# row kind muls adds shifts flops sops uJ\n";
  for (const auto &row : rows)
    out += fmt::format("{} {} {:.6g} {:.6g} {:.6g} {:.6g} {:.6g} {:.4f}\n",
                       row.name, row.kind, row.muls, row.adds, row.shifts,
                       row.flops, row.sops, row.picojoules * 1e-6);
  out += fmt::format("neuron_uJ {:.4f}\n", neuron_pj * 1e-6);
  out += fmt::format("synaptic_uJ {:.4f}\n", synaptic_pj * 1e-6);
  out += fmt::format("total_uJ {:.4f}\n", total_pj * 1e-6);
  return out;
}

NetworkOpCounts measure_network_counts(Network &net, const TensorD &x) {
  ForwardTrace trace;
  net.forward(x, false, &trace);
  NetworkOpCounts out;
  out.name = "measured";
  bool first_linear = true;
  for (std::size_t l = 0; l < net.size(); ++l) {
    const Layer &layer = net.layer(l);
    if (const auto *lin = dynamic_cast<const LinearLayer *>(&layer)) {
      const TensorD &in = trace.inputs[l];
      const double out_f = static_cast<double>(lin->out_features());
      if (first_linear) {
        out.first_layer_flops = static_cast<double>(in.numel()) * out_f;
        first_linear = false;
      } else {
        std::size_t nonzero = 0;
        for (double v : in.data())
          nonzero += v != 0.0;
        out.sops.push_back(static_cast<double>(nonzero) * out_f);
      }
    } else if (layer.is_neuron()) {
      const OpCounters &c = trace.counters[l];
      out.neurons.push_back({fmt::format("{}:{}", l, layer.label()),
                             static_cast<double>(c.muls),
                             static_cast<double>(c.adds),
                             static_cast<double>(c.shifts)});
    }
  }
  return out;
}

MemoryEstimate inference_memory_estimate(std::span<const MemoryLayer> layers,
                                         std::size_t batch,
                                         std::size_t element_bytes) {
  if (batch == 0 || element_bytes == 0)
    throw Error(ErrorCode::InvalidArgument,
                "batch and element width must be positive");
  MemoryEstimate est;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const MemoryLayer &m = layers[l];
    if (m.order == 0 || m.dilation == 0 || m.channels == 0)
      throw Error(ErrorCode::InvalidArgument,
                  "order, dilation and channels must be positive");
    MemoryRow row{l, m.order, m.dilation, (m.order - 1) * m.dilation + 1, 0};
    row.elements = row.window * m.channels * batch;
    est.total_elements += row.elements;
    est.rows.push_back(row);
  }
  est.bytes = est.total_elements * element_bytes;
  return est;
}

std::vector<MemoryLayer> memory_layers(const NetworkSpec &spec) {
  std::vector<MemoryLayer> out;
  for (std::size_t d : spec.dilations())
    out.push_back({spec.order, d, spec.hidden_channels});
  return out;
}

std::string MemoryEstimate::to_text() const {
  std::string out = "# layer k d window elements\n";
  for (const auto &r : rows)
    out += fmt::format("{} {} {} {} {}\n", r.layer, r.order, r.dilation,
                       r.window, r.elements);
  out += fmt::format("total_elements {}\nbytes {}\n", total_elements, bytes);
  out += "# activation windows only; parameters and runtime overheads excluded\n";
  return out;
}

} // namespace mfpsn
