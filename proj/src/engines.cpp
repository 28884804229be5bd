#include "mfpsn/engines.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

#include "mfpsn/parallel.hpp"

namespace mfpsn {

const char *to_string(EngineKind kind) {
  switch (kind) {
  case EngineKind::DirectLoop:
    return "direct_loop";
  case EngineKind::MatMul:
    return "matmul";
  case EngineKind::ShiftInt:
    return "shift_int";
  case EngineKind::BlockedDirect:
    return "blocked_direct";
  }
  return "unknown";
}

EngineKind engine_from_string(const std::string &name) {
  for (EngineKind k : {EngineKind::DirectLoop, EngineKind::MatMul,
                       EngineKind::ShiftInt, EngineKind::BlockedDirect})
    if (name == to_string(k))
      return k;
  throw Error(ErrorCode::UnknownEngine, "unknown engine '" + name + "'");
}

std::string to_string(const EngineChoice &choice) {
  std::string out = to_string(choice.kind);
  if (choice.kind == EngineKind::BlockedDirect)
    out += "/" + std::to_string(choice.block_size);
  return out;
}

std::uint64_t in_range_taps(std::size_t T, std::size_t k, std::size_t d) {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t lag = (k - 1 - i) * d;
    if (lag < T)
      total += T - lag;
  }
  return total;
}

namespace {

// Enumerates the N*C*S lanes of a tensor; lane l belongs to channel
// (l / S) % C and starts at lane_offset(n, c, s).
struct Lanes {
  std::size_t N, C, S;
  Strides strides;

  template <typename F>
  explicit Lanes(const TemporalTensor<F> &x)
      : N(x.shape().N), C(x.shape().C), S(x.shape().spatial_size()),
        strides(x.strides()) {}

  std::size_t count() const { return N * C * S; }
  std::size_t channel(std::size_t l) const { return (l / S) % C; }
  std::size_t offset(std::size_t l) const {
    const std::size_t n = l / (C * S);
    const std::size_t c = (l / S) % C;
    const std::size_t s = l % S;
    return n * strides.n + c * strides.c + s * strides.s;
  }
};

void check_weights(std::size_t rows, std::size_t cols, std::size_t C) {
  if (rows != C)
    throw Error(ErrorCode::ShapeMismatch,
                "weight rows " + std::to_string(rows) + " != channels " +
                    std::to_string(C));
  if (cols == 0)
    throw Error(ErrorCode::InvalidArgument, "neuron order k must be >= 1");
}

void check_bias(std::size_t bias_size, std::size_t C) {
  if (bias_size != 0 && bias_size != C)
    throw Error(ErrorCode::ShapeMismatch, "bias length must equal channels");
}

void check_dilation(std::size_t d) {
  if (d == 0)
    throw Error(ErrorCode::InvalidArgument, "dilation must be >= 1");
}

template <typename A, typename B>
void check_same_shape(const TemporalTensor<A> &a, const TemporalTensor<B> &b) {
  if (!(a.shape() == b.shape()) || a.layout() != b.layout())
    throw Error(ErrorCode::ShapeMismatch,
                "tensor shapes differ: " + to_string(a.shape()) + " vs " +
                    to_string(b.shape()));
}

// Per-channel direct traversal shared by the multiply and shift forward
// kernels. `tap(c, i, v)` returns the contribution of tap i applied to v.
template <typename F, typename Tap>
TemporalTensor<F> direct_forward(const TemporalTensor<F> &x, std::size_t k,
                                 std::span<const double> bias, std::size_t d,
                                 Tap tap, OpCounters *counters, bool shifts) {
  check_bias(bias.size(), x.shape().C);
  check_dilation(d);
  TemporalTensor<F> out(x.shape(), x.layout());
  const std::size_t T = x.shape().T;
  const std::size_t st = x.strides().t;
  const std::size_t S = x.shape().spatial_size();
  const std::size_t C = x.shape().C;
  const auto in = x.data();
  auto dst = out.data();
  std::vector<OpCounters> per_channel(C);

  parallel_for(C, [&](std::size_t c) {
    std::uint64_t taps = 0;
    std::uint64_t bias_adds = 0;
    for (std::size_t n = 0; n < x.shape().N; ++n)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t base = x.lane_offset(n, c, s);
        for (std::size_t t = 0; t < T; ++t) {
          double acc = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            const std::size_t lag = (k - 1 - i) * d;
            if (lag > t)
              continue;
            acc += tap(c, i, static_cast<double>(in[base + (t - lag) * st]));
            ++taps;
          }
          if (!bias.empty()) {
            acc += bias[c];
            ++bias_adds;
          }
          dst[base + t * st] = static_cast<F>(acc);
        }
      }
    OpCounters &pc = per_channel[c];
    (shifts ? pc.shifts : pc.muls) = taps;
    pc.adds = taps + bias_adds;
  });

  if (counters != nullptr)
    for (const auto &pc : per_channel)
      *counters += pc;
  return out;
}

// Cached tap index per (i, j) of the T x T Toeplitz structure; -1 marks a
// structural zero.
struct TapStructure {
  std::size_t T;
  std::vector<int> tap;
};

std::mutex &cache_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::tuple<std::size_t, std::size_t, std::size_t>,
         std::shared_ptr<const TapStructure>> &
structure_cache() {
  static std::map<std::tuple<std::size_t, std::size_t, std::size_t>,
                  std::shared_ptr<const TapStructure>>
      cache;
  return cache;
}

std::shared_ptr<const TapStructure> tap_structure(std::size_t T, std::size_t k,
                                                  std::size_t d) {
  std::lock_guard lock(cache_mutex());
  auto &cache = structure_cache();
  const auto key = std::make_tuple(T, k, d);
  if (auto it = cache.find(key); it != cache.end())
    return it->second;
  auto s = std::make_shared<TapStructure>();
  s->T = T;
  s->tap.assign(T * T, -1);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const std::size_t gap = i - j;
      if (gap % d != 0 || gap / d > k - 1)
        continue;
      s->tap[i * T + j] = static_cast<int>(k - 1 - gap / d);
    }
  cache.emplace(key, s);
  return s;
}

std::vector<double> channel_matrix(const TapStructure &s,
                                   std::span<const double> weights) {
  std::vector<double> a(s.T * s.T, 0.0);
  for (std::size_t e = 0; e < a.size(); ++e)
    if (s.tap[e] >= 0)
      a[e] = weights[static_cast<std::size_t>(s.tap[e])];
  return a;
}

} // namespace

template <typename F>
TemporalTensor<F> conv_forward_direct(const TemporalTensor<F> &x,
                                      const Matrix &w,
                                      std::span<const double> bias,
                                      std::size_t d, OpCounters *counters) {
  check_weights(w.rows, w.cols, x.shape().C);
  return direct_forward(
      x, w.cols, bias, d,
      [&w](std::size_t c, std::size_t i, double v) { return w(c, i) * v; },
      counters, false);
}

template <typename F>
TemporalTensor<F> conv_forward_direct(const TemporalTensor<F> &x,
                                      const ShiftWeights &w,
                                      std::span<const double> bias,
                                      std::size_t d, OpCounters *counters) {
  check_weights(w.rows, w.cols, x.shape().C);
  return direct_forward(
      x, w.cols, bias, d,
      [&w](std::size_t c, std::size_t i, double v) {
        const std::size_t idx = w.index(c, i);
        return shift_mul_float(v, w.sign[idx], w.exponent[idx]);
      },
      counters, true);
}

TensorI conv_forward_shift_int(const TensorI &x, const ShiftWeights &w,
                               std::span<const std::int32_t> bias,
                               std::size_t d, OpCounters *counters,
                               SaturationCounter *saturation) {
  check_weights(w.rows, w.cols, x.shape().C);
  check_bias(bias.size(), x.shape().C);
  check_dilation(d);
  const std::size_t k = w.cols;
  TensorI out(x.shape(), x.layout());
  const std::size_t T = x.shape().T;
  const std::size_t st = x.strides().t;
  const Lanes lanes(x);
  const auto in = x.data();
  auto dst = out.data();
  constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
  constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
  OpCounters local;
  for (std::size_t l = 0; l < lanes.count(); ++l) {
    const std::size_t c = lanes.channel(l);
    const std::size_t base = lanes.offset(l);
    for (std::size_t t = 0; t < T; ++t) {
      std::int64_t acc = 0;
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t lag = (k - 1 - i) * d;
        if (lag > t)
          continue;
        const std::size_t idx = w.index(c, i);
        ++local.shifts;
        ++local.adds;
        if (w.sign[idx] == 0)
          continue;
        std::int64_t v = in[base + (t - lag) * st];
        const int e = w.exponent[idx];
        v = e >= 0 ? v << e : v >> -e;
        acc += w.sign[idx] < 0 ? -v : v;
      }
      if (!bias.empty()) {
        acc += bias[c];
        ++local.adds;
      }
      if (acc < lo || acc > hi) {
        if (saturation != nullptr)
          ++saturation->saturations;
        acc = std::clamp(acc, lo, hi);
      }
      dst[base + t * st] = static_cast<std::int32_t>(acc);
    }
  }
  if (counters != nullptr)
    *counters += local;
  return out;
}

Matrix toeplitz_matrix(std::span<const double> weights, std::size_t T,
                       std::size_t d) {
  check_dilation(d);
  if (weights.empty())
    throw Error(ErrorCode::InvalidArgument, "neuron order k must be >= 1");
  const auto s = tap_structure(T, weights.size(), d);
  return Matrix(T, T, channel_matrix(*s, weights));
}

std::size_t matmul_cache_size() {
  std::lock_guard lock(cache_mutex());
  return structure_cache().size();
}

template <typename F>
TemporalTensor<F> conv_forward_matmul(const TemporalTensor<F> &x,
                                      const Matrix &w,
                                      std::span<const double> bias,
                                      std::size_t d, OpCounters *counters) {
  check_weights(w.rows, w.cols, x.shape().C);
  check_bias(bias.size(), x.shape().C);
  check_dilation(d);
  const std::size_t T = x.shape().T;
  const std::size_t st = x.strides().t;
  const std::size_t C = x.shape().C;
  const std::size_t S = x.shape().spatial_size();
  const auto structure = tap_structure(T, w.cols, d);
  TemporalTensor<F> out(x.shape(), x.layout());
  const auto in = x.data();
  auto dst = out.data();
  std::vector<OpCounters> per_channel(C);

  parallel_for(C, [&](std::size_t c) {
    const std::vector<double> a = channel_matrix(*structure, w.row(c));
    std::vector<double> column(T);
    std::uint64_t lanes_done = 0;
    for (std::size_t n = 0; n < x.shape().N; ++n)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t base = x.lane_offset(n, c, s);
        for (std::size_t j = 0; j < T; ++j)
          column[j] = static_cast<double>(in[base + j * st]);
        for (std::size_t i = 0; i < T; ++i) {
          const double *row = a.data() + i * T;
          double acc = 0.0;
          for (std::size_t j = 0; j < T; ++j)
            acc += row[j] * column[j];
          if (!bias.empty())
            acc += bias[c];
          dst[base + i * st] = static_cast<F>(acc);
        }
        ++lanes_done;
      }
    per_channel[c].muls = lanes_done * T * T;
    per_channel[c].adds = lanes_done * (T * T + (bias.empty() ? 0 : T));
  });
  if (counters != nullptr)
    for (const auto &pc : per_channel)
      *counters += pc;
  return out;
}

template <typename F>
TemporalTensor<F> conv_forward_blocked(const TemporalTensor<F> &x,
                                       const Matrix &w,
                                       std::span<const double> bias,
                                       std::size_t d, std::size_t block_size,
                                       OpCounters *counters) {
  check_weights(w.rows, w.cols, x.shape().C);
  check_bias(bias.size(), x.shape().C);
  check_dilation(d);
  if (block_size == 0)
    throw Error(ErrorCode::InvalidArgument, "block size must be positive");
  const std::size_t k = w.cols;
  const std::size_t T = x.shape().T;
  const std::size_t st = x.strides().t;
  const Lanes lanes(x);
  const std::size_t B = block_size;
  const std::size_t blocks = (lanes.count() + B - 1) / B;
  TemporalTensor<F> out(x.shape(), x.layout());
  const auto in = x.data();
  auto dst = out.data();
  std::vector<OpCounters> per_block(blocks);

  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t l0 = b * B;
    const std::size_t nl = std::min(B, lanes.count() - l0);
    std::vector<std::size_t> offset(nl), channel(nl);
    for (std::size_t l = 0; l < nl; ++l) {
      offset[l] = lanes.offset(l0 + l);
      channel[l] = lanes.channel(l0 + l);
    }
    std::vector<double> tile(B * B);
    std::uint64_t taps = 0;
    for (std::size_t t0 = 0; t0 < T; t0 += B) {
      const std::size_t nt = std::min(B, T - t0);
      std::fill(tile.begin(), tile.end(), 0.0);
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t lag = (k - 1 - i) * d;
        for (std::size_t tt = 0; tt < nt; ++tt) {
          const std::size_t t = t0 + tt;
          if (lag > t)
            continue;
          double *acc = tile.data() + tt * B;
          for (std::size_t l = 0; l < nl; ++l)
            acc[l] += w(channel[l], i) *
                      static_cast<double>(in[offset[l] + (t - lag) * st]);
          taps += nl;
        }
      }
      for (std::size_t tt = 0; tt < nt; ++tt)
        for (std::size_t l = 0; l < nl; ++l) {
          double v = tile[tt * B + l];
          if (!bias.empty())
            v += bias[channel[l]];
          dst[offset[l] + (t0 + tt) * st] = static_cast<F>(v);
        }
    }
    per_block[b].muls = taps;
    per_block[b].adds = taps + (bias.empty() ? 0 : nl * T);
  });
  if (counters != nullptr)
    for (const auto &pb : per_block)
      *counters += pb;
  return out;
}

// --- backward ------------------------------------------------------------

namespace {

template <typename Tap>
TensorD direct_backward_input(const TensorD &grad_out, std::size_t k,
                              std::size_t d, Tap tap) {
  check_dilation(d);
  TensorD out(grad_out.shape(), grad_out.layout());
  const std::size_t T = grad_out.shape().T;
  const std::size_t st = grad_out.strides().t;
  const std::size_t S = grad_out.shape().spatial_size();
  const auto g = grad_out.data();
  auto dst = out.data();
  parallel_for(grad_out.shape().C, [&](std::size_t c) {
    for (std::size_t n = 0; n < grad_out.shape().N; ++n)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t base = grad_out.lane_offset(n, c, s);
        for (std::size_t t = 0; t < T; ++t) {
          double acc = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            const std::size_t src = t + (k - 1 - i) * d;
            if (src < T)
              acc += tap(c, i, g[base + src * st]);
          }
          dst[base + t * st] = acc;
        }
      }
  });
  return out;
}

} // namespace

TensorD conv_backward_input(const TensorD &grad_out, const Matrix &w,
                            std::size_t d) {
  check_weights(w.rows, w.cols, grad_out.shape().C);
  return direct_backward_input(
      grad_out, w.cols, d,
      [&w](std::size_t c, std::size_t i, double v) { return w(c, i) * v; });
}

TensorD conv_backward_input(const TensorD &grad_out, const ShiftWeights &w,
                            std::size_t d) {
  check_weights(w.rows, w.cols, grad_out.shape().C);
  return direct_backward_input(
      grad_out, w.cols, d, [&w](std::size_t c, std::size_t i, double v) {
        const std::size_t idx = w.index(c, i);
        return shift_mul_float(v, w.sign[idx], w.exponent[idx]);
      });
}

TensorD conv_backward_input_matmul(const TensorD &grad_out, const Matrix &w,
                                   std::size_t d) {
  check_weights(w.rows, w.cols, grad_out.shape().C);
  check_dilation(d);
  const std::size_t T = grad_out.shape().T;
  const std::size_t st = grad_out.strides().t;
  const std::size_t S = grad_out.shape().spatial_size();
  const auto structure = tap_structure(T, w.cols, d);
  TensorD out(grad_out.shape(), grad_out.layout());
  const auto g = grad_out.data();
  auto dst = out.data();
  parallel_for(grad_out.shape().C, [&](std::size_t c) {
    const std::vector<double> a = channel_matrix(*structure, w.row(c));
    std::vector<double> column(T);
    for (std::size_t n = 0; n < grad_out.shape().N; ++n)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t base = grad_out.lane_offset(n, c, s);
        for (std::size_t i = 0; i < T; ++i)
          column[i] = g[base + i * st];
        for (std::size_t j = 0; j < T; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < T; ++i)
            acc += a[i * T + j] * column[i];
          dst[base + j * st] = acc;
        }
      }
  });
  return out;
}

TensorD conv_backward_input_blocked(const TensorD &grad_out, const Matrix &w,
                                    std::size_t d, std::size_t block_size) {
  check_weights(w.rows, w.cols, grad_out.shape().C);
  check_dilation(d);
  if (block_size == 0)
    throw Error(ErrorCode::InvalidArgument, "block size must be positive");
  const std::size_t k = w.cols;
  const std::size_t T = grad_out.shape().T;
  const std::size_t st = grad_out.strides().t;
  const Lanes lanes(grad_out);
  const std::size_t B = block_size;
  const std::size_t blocks = (lanes.count() + B - 1) / B;
  TensorD out(grad_out.shape(), grad_out.layout());
  const auto g = grad_out.data();
  auto dst = out.data();
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t l0 = b * B;
    const std::size_t nl = std::min(B, lanes.count() - l0);
    std::vector<std::size_t> offset(nl), channel(nl);
    for (std::size_t l = 0; l < nl; ++l) {
      offset[l] = lanes.offset(l0 + l);
      channel[l] = lanes.channel(l0 + l);
    }
    std::vector<double> tile(B * B);
    for (std::size_t t0 = 0; t0 < T; t0 += B) {
      const std::size_t nt = std::min(B, T - t0);
      std::fill(tile.begin(), tile.end(), 0.0);
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t lag = (k - 1 - i) * d;
        for (std::size_t tt = 0; tt < nt; ++tt) {
          const std::size_t src = t0 + tt + lag;
          if (src >= T)
            continue;
          double *acc = tile.data() + tt * B;
          for (std::size_t l = 0; l < nl; ++l)
            acc[l] += w(channel[l], i) * g[offset[l] + src * st];
        }
      }
      for (std::size_t tt = 0; tt < nt; ++tt)
        for (std::size_t l = 0; l < nl; ++l)
          dst[offset[l] + (t0 + tt) * st] = tile[tt * B + l];
    }
  });
  return out;
}

Matrix conv_backward_weight(const TensorD &x, const TensorD &grad_out,
                            std::size_t k, std::size_t d) {
  check_same_shape(x, grad_out);
  check_dilation(d);
  if (k == 0)
    throw Error(ErrorCode::InvalidArgument, "neuron order k must be >= 1");
  const std::size_t C = x.shape().C;
  const std::size_t T = x.shape().T;
  const std::size_t S = x.shape().spatial_size();
  const std::size_t sx = x.strides().t;
  const std::size_t sg = grad_out.strides().t;
  Matrix grad(C, k);
  const auto xs = x.data();
  const auto gs = grad_out.data();
  parallel_for(C, [&](std::size_t c) {
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t lag = (k - 1 - i) * d;
      double acc = 0.0;
      for (std::size_t n = 0; n < x.shape().N; ++n)
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t bx = x.lane_offset(n, c, s);
          const std::size_t bg = grad_out.lane_offset(n, c, s);
          for (std::size_t t = lag; t < T; ++t)
            acc += xs[bx + (t - lag) * sx] * gs[bg + t * sg];
        }
      grad(c, i) = acc;
    }
  });
  return grad;
}

Matrix conv_backward_weight_blocked(const TensorD &x, const TensorD &grad_out,
                                    std::size_t k, std::size_t d,
                                    std::size_t block_size) {
  check_same_shape(x, grad_out);
  check_dilation(d);
  if (k == 0)
    throw Error(ErrorCode::InvalidArgument, "neuron order k must be >= 1");
  if (block_size == 0)
    throw Error(ErrorCode::InvalidArgument, "block size must be positive");
  const std::size_t C = x.shape().C;
  const std::size_t T = x.shape().T;
  const std::size_t st = x.strides().t;
  const Lanes lanes(x);
  const std::size_t B = block_size;
  const std::size_t blocks = (lanes.count() + B - 1) / B;
  const auto xs = x.data();
  const auto gs = grad_out.data();
  std::vector<Matrix> partial(blocks, Matrix(C, k));

  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t l0 = b * B;
    const std::size_t nl = std::min(B, lanes.count() - l0);
    Matrix &acc = partial[b];
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t lag = (k - 1 - i) * d;
      for (std::size_t t0 = lag; t0 < T; t0 += B) {
        const std::size_t t1 = std::min(T, t0 + B);
        for (std::size_t l = 0; l < nl; ++l) {
          const std::size_t off = lanes.offset(l0 + l);
          double sum = 0.0;
          for (std::size_t t = t0; t < t1; ++t)
            sum += xs[off + (t - lag) * st] * gs[off + t * st];
          acc(lanes.channel(l0 + l), i) += sum;
        }
      }
    }
  });
  Matrix grad(C, k);
  for (const Matrix &p : partial)
    for (std::size_t e = 0; e < grad.size(); ++e)
      grad.values[e] += p.values[e];
  return grad;
}

std::vector<double> conv_backward_bias(const TensorD &grad_out) {
  const std::size_t C = grad_out.shape().C;
  const std::size_t T = grad_out.shape().T;
  const std::size_t S = grad_out.shape().spatial_size();
  const std::size_t st = grad_out.strides().t;
  const auto g = grad_out.data();
  std::vector<double> out(C, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < grad_out.shape().N; ++n)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t base = grad_out.lane_offset(n, c, s);
        for (std::size_t t = 0; t < T; ++t)
          out[c] += g[base + t * st];
      }
  return out;
}

// --- dispatch ------------------------------------------------------------

TensorD conv_forward(const EngineChoice &engine, const TensorD &x,
                     const Matrix &w, std::span<const double> bias,
                     std::size_t d, OpCounters *counters,
                     const ShiftWeights *shift) {
  switch (engine.kind) {
  case EngineKind::DirectLoop:
    return conv_forward_direct(x, w, bias, d, counters);
  case EngineKind::MatMul:
    return conv_forward_matmul(x, w, bias, d, counters);
  case EngineKind::BlockedDirect:
    return conv_forward_blocked(x, w, bias, d, engine.block_size, counters);
  case EngineKind::ShiftInt:
    if (shift == nullptr)
      throw Error(ErrorCode::InvalidArgument,
                  "shift_int engine requires quantized weights");
    return conv_forward_direct(x, *shift, bias, d, counters);
  }
  throw Error(ErrorCode::UnknownEngine, "unhandled engine kind");
}

TensorD conv_backward_input(const EngineChoice &engine, const TensorD &grad_out,
                            const Matrix &w, std::size_t d,
                            const ShiftWeights *shift) {
  switch (engine.kind) {
  case EngineKind::DirectLoop:
    return conv_backward_input(grad_out, w, d);
  case EngineKind::MatMul:
    return conv_backward_input_matmul(grad_out, w, d);
  case EngineKind::BlockedDirect:
    return conv_backward_input_blocked(grad_out, w, d, engine.block_size);
  case EngineKind::ShiftInt:
    if (shift == nullptr)
      throw Error(ErrorCode::InvalidArgument,
                  "shift_int engine requires quantized weights");
    return conv_backward_input(grad_out, *shift, d);
  }
  throw Error(ErrorCode::UnknownEngine, "unhandled engine kind");
}

Matrix conv_backward_weight(const EngineChoice &engine, const TensorD &x,
                            const TensorD &grad_out, std::size_t k,
                            std::size_t d) {
  if (engine.kind == EngineKind::BlockedDirect)
    return conv_backward_weight_blocked(x, grad_out, k, d, engine.block_size);
  return conv_backward_weight(x, grad_out, k, d);
}

#define MFPSN_INSTANTIATE_FORWARD(F)                                           \
  template TemporalTensor<F> conv_forward_direct<F>(                           \
      const TemporalTensor<F> &, const Matrix &, std::span<const double>,      \
      std::size_t, OpCounters *);                                              \
  template TemporalTensor<F> conv_forward_direct<F>(                           \
      const TemporalTensor<F> &, const ShiftWeights &,                         \
      std::span<const double>, std::size_t, OpCounters *);                     \
  template TemporalTensor<F> conv_forward_matmul<F>(                           \
      const TemporalTensor<F> &, const Matrix &, std::span<const double>,      \
      std::size_t, OpCounters *);                                              \
  template TemporalTensor<F> conv_forward_blocked<F>(                          \
      const TemporalTensor<F> &, const Matrix &, std::span<const double>,      \
      std::size_t, std::size_t, OpCounters *);

MFPSN_INSTANTIATE_FORWARD(float)
MFPSN_INSTANTIATE_FORWARD(double)

#undef MFPSN_INSTANTIATE_FORWARD

} // namespace mfpsn
