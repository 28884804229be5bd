#pragma once

// Energy and inference-memory estimates under the 45nm per-operation cost
// model (fp32 MUL/ADD, fixed-point 32-bit SHIFT, MAC/AC for synapses).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfpsn/network.hpp"

namespace mfpsn {

struct EnergyModel {
  double e_mul = 3.7;    // pJ, fp32 multiply
  double e_add = 0.9;    // pJ, fp32 add
  double e_shift = 0.13; // pJ, 32-bit fixed-point shift
  double e_mac = 4.6;    // pJ
  double e_ac = 0.9;     // pJ

  void validate() const;
};

enum class NeuronKind { PSN, Ours };

const char *to_string(NeuronKind kind);

// PSN: 4.6 T^2 + 0.9 T. Ours: 1.03 (T + (1-k)/2) k + 0.9 T, with the
// coefficients taken from `model` (e_mac, e_add, e_shift + e_add).
double neuron_energy(NeuronKind kind, std::size_t T, std::size_t k,
                     const EnergyModel &model = {});

// e_mac * FL1 + e_ac * sum(SOPs).
double synaptic_energy(double flops_first_layer,
                       std::span<const double> sops_per_layer,
                       const EnergyModel &model = {});

// SOPs(l) = fr * T * FLOPs(l).
double synaptic_ops(double firing_rate, std::size_t T, double flops);

struct NeuronOpCounts {
  std::string name;
  double muls = 0.0;
  double adds = 0.0;
  double shifts = 0.0;
};

struct NetworkOpCounts {
  std::string name;
  std::vector<NeuronOpCounts> neurons;
  double first_layer_flops = 0.0;
  std::vector<double> sops; // synaptic layers after the first
};

// The operation counts reported for one CIFAR100 image.
NetworkOpCounts reference_network_counts(NeuronKind kind);

struct EnergyRow {
  std::string name;
  std::string kind; // "neuron" or "synaptic"
  double muls = 0.0, adds = 0.0, shifts = 0.0;
  double flops = 0.0, sops = 0.0;
  double picojoules = 0.0;
};

struct EnergyReport {
  std::string name;
  std::vector<EnergyRow> rows;
  double neuron_pj = 0.0;
  double synaptic_pj = 0.0;
  double total_pj = 0.0;

  double total_uj() const { return total_pj * 1e-6; }
  std::string to_text() const;
};

EnergyReport network_energy_report(const NetworkOpCounts &counts,
                                   const EnergyModel &model = {});

// Counts from an inference run: neuron-layer counters as measured; the
// first linear layer as dense MACs (in * out per step and sample); later
// linear layers as SOPs (nonzero inputs * out).
NetworkOpCounts measure_network_counts(Network &net, const TensorD &x);

struct MemoryRow {
  std::size_t layer = 0;
  std::size_t order = 0;
  std::size_t dilation = 0;
  std::size_t window = 0;   // (k - 1) d + 1 time steps
  std::size_t elements = 0; // window * channels * batch
};

struct MemoryEstimate {
  std::vector<MemoryRow> rows;
  std::size_t total_elements = 0;
  std::size_t bytes = 0;

  // Activation windows only; parameters and runtime overheads are excluded.
  std::string to_text() const;
};

struct MemoryLayer {
  std::size_t order = 2;
  std::size_t dilation = 1;
  std::size_t channels = 1;
};

MemoryEstimate inference_memory_estimate(std::span<const MemoryLayer> layers,
                                         std::size_t batch = 1,
                                         std::size_t element_bytes = 4);
std::vector<MemoryLayer> memory_layers(const NetworkSpec &spec);

} // namespace mfpsn
