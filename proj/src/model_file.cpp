#include "mfpsn/model_file.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <fmt/format.h>

namespace mfpsn {

namespace {

class Writer {
public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void i8(std::int8_t v) { out_.push_back(static_cast<std::uint8_t>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32s(std::span<const double> vs) {
    for (double v : vs)
      f32(v);
  }
  void size(std::size_t v) {
    if (v > UINT32_MAX)
      throw Error(ErrorCode::InvalidArgument, "dimension exceeds u32");
    u32(static_cast<std::uint32_t>(v));
  }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

private:
  std::vector<std::uint8_t> out_;
};

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (pos_ + n > in_.size())
      throw Error(ErrorCode::Io,
                  fmt::format("truncated file: need {} bytes at offset {}", n,
                              pos_));
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f32s(std::size_t n) {
    need(n * 4);
    std::vector<double> out(n);
    for (double &v : out)
      v = f32();
    return out;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }
  std::span<const std::uint8_t> rest() const { return in_.subspan(pos_); }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_header(Writer &w, LayerTag tag, std::size_t C, std::size_t k,
                  std::size_t d) {
  w.u8(static_cast<std::uint8_t>(tag));
  w.size(C);
  w.size(k);
  w.size(d);
}

std::size_t checked_dim(std::uint32_t v, const char *what) {
  if (v == 0 || v > (1u << 24))
    throw Error(ErrorCode::Io, fmt::format("implausible {} = {}", what, v));
  return v;
}

} // namespace

std::vector<std::uint8_t> serialize_model(const Network &net) {
  if (net.size() == 0)
    throw Error(ErrorCode::InvalidArgument, "cannot save an empty model");
  Writer w;
  w.bytes(std::string_view(kModelMagic, 5));
  w.u32(kModelVersion);
  w.size(net.size());
  for (std::size_t l = 0; l < net.size(); ++l) {
    const Layer &layer = net.layer(l);
    if (const auto *lin = dynamic_cast<const LinearLayer *>(&layer)) {
      write_header(w, LayerTag::Linear, lin->out_features(), lin->in_features(),
                   1);
      w.f32s(lin->weight().values);
      w.f32s(lin->bias());
    } else if (const auto *n = dynamic_cast<const NeuronLayer *>(&layer)) {
      const NeuronConfig &cfg = n->config();
      write_header(w, LayerTag::FloatNeuron, cfg.channels, cfg.order,
                   cfg.dilation);
      w.u8(static_cast<std::uint8_t>(cfg.sharing));
      w.u8(cfg.quantized ? 1 : 0);
      w.u8(static_cast<std::uint8_t>(cfg.grad_mode));
      w.f32s(n->params().weights.values);
      const ThresholdParams &thr = n->threshold();
      w.f32s(thr.gamma);
      w.f32s(thr.beta);
      w.f32s(thr.running_mean);
      w.f32s(thr.running_var);
      w.f64(thr.eps);
      w.f64(thr.momentum);
    } else if (const auto *q = dynamic_cast<const QuantNeuronLayer *>(&layer)) {
      const NeuronConfig &cfg = q->config();
      write_header(w, LayerTag::ShiftNeuron, cfg.channels, cfg.order,
                   cfg.dilation);
      for (std::int8_t s : q->weights().sign)
        w.i8(s);
      for (std::int8_t e : q->weights().exponent)
        w.i8(e);
      w.f32s(q->bias());
    } else {
      throw Error(ErrorCode::InvalidArgument,
                  "layer " + layer.label() + " has no file representation");
    }
  }
  return w.take();
}

Network deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(5);
  if (std::memcmp(bytes.data(), kModelMagic, 5) != 0)
    throw Error(ErrorCode::Io, "not a model file (bad magic)");
  r.skip(5);
  const std::uint32_t version = r.u32();
  if (version != kModelVersion)
    throw Error(ErrorCode::Io, fmt::format("unsupported model version {}", version));
  const std::uint32_t count = r.u32();
  if (count == 0)
    throw Error(ErrorCode::Io, "model file has no layers");
  Network net;
  for (std::uint32_t l = 0; l < count; ++l) {
    const std::uint8_t tag = r.u8();
    const std::size_t C = checked_dim(r.u32(), "C");
    const std::size_t k = checked_dim(r.u32(), "k");
    const std::size_t d = checked_dim(r.u32(), "d");
    switch (static_cast<LayerTag>(tag)) {
    case LayerTag::Linear: {
      Matrix w(C, k, r.f32s(C * k));
      net.add(std::make_unique<LinearLayer>(std::move(w), r.f32s(C)));
      break;
    }
    case LayerTag::FloatNeuron: {
      NeuronConfig cfg;
      cfg.channels = C;
      cfg.order = k;
      cfg.dilation = d;
      const std::uint8_t sharing = r.u8();
      const std::uint8_t quantized = r.u8();
      const std::uint8_t grad = r.u8();
      if (sharing > 1 || quantized > 1 || grad > 1)
        throw Error(ErrorCode::Io, "invalid neuron flags");
      cfg.sharing = static_cast<WeightSharing>(sharing);
      cfg.quantized = quantized == 1;
      cfg.grad_mode = static_cast<QuantGradMode>(grad);
      const std::size_t rows = cfg.weight_rows();
      NeuronParams params{Matrix(rows, k, r.f32s(rows * k))};
      ThresholdParams thr;
      thr.gamma = r.f32s(C);
      thr.beta = r.f32s(C);
      thr.running_mean = r.f32s(C);
      thr.running_var = r.f32s(C);
      thr.eps = r.f64();
      thr.momentum = r.f64();
      net.add(std::make_unique<NeuronLayer>(cfg, std::move(params),
                                            std::move(thr)));
      break;
    }
    case LayerTag::ShiftNeuron: {
      NeuronConfig cfg;
      cfg.channels = C;
      cfg.order = k;
      cfg.dilation = d;
      ShiftWeights q(C, k);
      r.need(2 * C * k);
      for (auto &s : q.sign)
        s = r.i8();
      for (auto &e : q.exponent)
        e = r.i8();
      net.add(std::make_unique<QuantNeuronLayer>(cfg, std::move(q), r.f32s(C)));
      break;
    }
    default:
      throw Error(ErrorCode::Io, fmt::format("unknown layer tag {}", tag));
    }
  }
  if (!r.done())
    throw Error(ErrorCode::Io, "trailing bytes after the last layer");
  return net;
}

std::vector<std::uint8_t> read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorCode::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string &path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error(ErrorCode::Io, "cannot write " + path);
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw Error(ErrorCode::Io, "write failed for " + path);
}

void save_model(const Network &net, const std::string &path) {
  write_file(path, serialize_model(net));
}

Network load_model(const std::string &path) {
  return deserialize_model(read_file(path));
}

// --- activations -----------------------------------------------------------

const char *to_string(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

std::vector<std::uint8_t> serialize_activations(const TensorD &x, DType dtype) {
  Writer w;
  std::string header = "SSNNACT 1\n";
  header += fmt::format("dtype {}\n", to_string(dtype));
  header += fmt::format("layout {}\n", to_string(x.layout()));
  header += fmt::format("shape {} {} {}", x.shape().T, x.shape().N, x.shape().C);
  for (std::size_t e : x.shape().spatial)
    header += fmt::format(" {}", e);
  header += "\nend\n";
  w.bytes(header);
  for (double v : x.data()) {
    if (dtype == DType::F32)
      w.f32(v);
    else
      w.f64(v);
  }
  return w.take();
}

TensorD deserialize_activations(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    std::string line;
    while (pos < bytes.size() && bytes[pos] != '\n') {
      line.push_back(static_cast<char>(bytes[pos++]));
      if (line.size() > 256)
        throw Error(ErrorCode::Io, "activation header line too long");
    }
    if (pos >= bytes.size())
      throw Error(ErrorCode::Io, "truncated activation header");
    ++pos;
    return line;
  };
  if (next_line() != "SSNNACT 1")
    throw Error(ErrorCode::Io, "not an activation file");
  DType dtype = DType::F32;
  Layout layout = Layout::TimeFirst;
  Shape shape;
  bool have_shape = false;
  for (;;) {
    const std::string line = next_line();
    if (line == "end")
      break;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "dtype") {
      std::string v;
      ss >> v;
      if (v == "f32")
        dtype = DType::F32;
      else if (v == "f64")
        dtype = DType::F64;
      else
        throw Error(ErrorCode::Io, "unsupported dtype '" + v + "'");
    } else if (key == "layout") {
      std::string v;
      ss >> v;
      if (v == "time_first")
        layout = Layout::TimeFirst;
      else if (v == "time_last")
        layout = Layout::TimeLast;
      else
        throw Error(ErrorCode::Io, "unknown layout '" + v + "'");
    } else if (key == "shape") {
      std::vector<long long> dims;
      long long v = 0;
      while (ss >> v)
        dims.push_back(v);
      if (dims.size() < 3 || dims.size() > 5)
        throw Error(ErrorCode::Io, "shape needs 3 to 5 extents");
      for (long long e : dims)
        if (e <= 0)
          throw Error(ErrorCode::ShapeMismatch,
                      "activation extents must be positive");
      shape.T = static_cast<std::size_t>(dims[0]);
      shape.N = static_cast<std::size_t>(dims[1]);
      shape.C = static_cast<std::size_t>(dims[2]);
      for (std::size_t i = 3; i < dims.size(); ++i)
        shape.spatial.push_back(static_cast<std::size_t>(dims[i]));
      have_shape = true;
    } else {
      throw Error(ErrorCode::Io, "unknown header key '" + key + "'");
    }
  }
  if (!have_shape)
    throw Error(ErrorCode::Io, "activation header lacks a shape");
  const std::size_t width = dtype == DType::F32 ? 4 : 8;
  const std::size_t n = shape.numel();
  if (bytes.size() - pos != n * width)
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("payload has {} bytes, shape {} needs {}",
                            bytes.size() - pos, to_string(shape), n * width));
  Reader r(bytes.subspan(pos));
  std::vector<double> data(n);
  for (double &v : data)
    v = dtype == DType::F32 ? r.f32() : r.f64();
  return TensorD(shape, layout, std::move(data));
}

void save_activations(const TensorD &x, const std::string &path, DType dtype) {
  write_file(path, serialize_activations(x, dtype));
}

TensorD load_activations(const std::string &path) {
  return deserialize_activations(read_file(path));
}

} // namespace mfpsn
