#pragma once

// Binary model files and activation files.
//
// Model file, all integers little-endian fixed width:
//
//   "SSNN1" u32 version u32 layer_count
//   per layer: u8 tag u32 C u32 k u32 d, then the payload
//     tag 1 linear        C = out, k = in, d = 1; f32 W[out*in], f32 b[out]
//     tag 2 float neuron  u8 sharing u8 quantized u8 grad_mode;
//                         f32 W[rows*k]; f32 gamma, beta, mean, var [C];
//                         f64 eps, f64 momentum
//     tag 3 shift neuron  i8 sign[C*k], i8 exponent[C*k], f32 b_f[C]
//
// Activation file: text header lines
//
//   SSNNACT 1
//   dtype f32|f64
//   layout time_first|time_last
//   shape T N C [H [W]]
//   end
//
// followed by the raw little-endian elements in physical order.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfpsn/network.hpp"

namespace mfpsn {

inline constexpr char kModelMagic[] = "SSNN1";
inline constexpr std::uint32_t kModelVersion = 1;

enum class LayerTag : std::uint8_t { Linear = 1, FloatNeuron = 2, ShiftNeuron = 3 };

// Values are written as f32; the network keeps its parameters
// f32-representable, so a reload is exact.
std::vector<std::uint8_t> serialize_model(const Network &net);
Network deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const Network &net, const std::string &path);
Network load_model(const std::string &path);

enum class DType { F32, F64 };

const char *to_string(DType dtype);

std::vector<std::uint8_t> serialize_activations(const TensorD &x,
                                                DType dtype = DType::F32);
TensorD deserialize_activations(std::span<const std::uint8_t> bytes);

void save_activations(const TensorD &x, const std::string &path,
                      DType dtype = DType::F32);
TensorD load_activations(const std::string &path);

std::vector<std::uint8_t> read_file(const std::string &path);
void write_file(const std::string &path, std::span<const std::uint8_t> bytes);

} // namespace mfpsn
