#pragma once

// Independent reference implementations used only by the tests.

#include <cmath>
#include <random>
#include <vector>

#include "mfpsn/matrix.hpp"
#include "mfpsn/tensor.hpp"

namespace oracle {

using mfpsn::Layout;
using mfpsn::Matrix;
using mfpsn::Shape;
using mfpsn::TensorD;

// H[t][c] = sum_i W[c][i] X[t - (k-1-i) d][c], evaluated with signed indices
// straight from the definition.
inline TensorD conv(const TensorD &x, const Matrix &w, const std::vector<double> &bias,
                    std::size_t d) {
  TensorD out(x.shape(), x.layout());
  const auto &s = x.shape();
  const long k = static_cast<long>(w.cols);
  for (std::size_t n = 0; n < s.N; ++n)
    for (std::size_t c = 0; c < s.C; ++c)
      for (std::size_t sp = 0; sp < s.spatial_size(); ++sp)
        for (long t = 0; t < static_cast<long>(s.T); ++t) {
          double h = 0.0;
          for (long i = 0; i < k; ++i) {
            const long j = t - (k - 1 - i) * static_cast<long>(d);
            if (j >= 0)
              h += w(c, static_cast<std::size_t>(i)) *
                   x.at(static_cast<std::size_t>(j), n, c, sp);
          }
          if (!bias.empty())
            h += bias[c];
          out.at(static_cast<std::size_t>(t), n, c, sp) = h;
        }
  return out;
}

// Reset-free LIF charge iterated step by step: H[t] = (1 - 1/tau) H[t-1] + X[t]/tau.
inline std::vector<double> lif_iterative(const std::vector<double> &x, double tau) {
  std::vector<double> h(x.size());
  double v = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    v = (1.0 - 1.0 / tau) * v + x[t] / tau;
    h[t] = v;
  }
  return h;
}

inline double inner(const TensorD &a, const TensorD &b) {
  double s = 0.0;
  const auto &sh = a.shape();
  for (std::size_t t = 0; t < sh.T; ++t)
    for (std::size_t n = 0; n < sh.N; ++n)
      for (std::size_t c = 0; c < sh.C; ++c)
        for (std::size_t sp = 0; sp < sh.spatial_size(); ++sp)
          s += a.at(t, n, c, sp) * b.at(t, n, c, sp);
  return s;
}

inline TensorD random_tensor(const Shape &shape, Layout layout, std::mt19937_64 &rng,
                             double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  return TensorD::generate(shape, layout,
                           [&](auto, auto, auto, auto) { return u(rng); });
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64 &rng,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double &v : m.values)
    v = u(rng);
  return m;
}

inline double max_rel_diff(const TensorD &a, const TensorD &b) {
  double worst = 0.0;
  const auto &sh = a.shape();
  for (std::size_t t = 0; t < sh.T; ++t)
    for (std::size_t n = 0; n < sh.N; ++n)
      for (std::size_t c = 0; c < sh.C; ++c)
        for (std::size_t sp = 0; sp < sh.spatial_size(); ++sp) {
          const double x = a.at(t, n, c, sp);
          const double y = b.at(t, n, c, sp);
          const double den = std::max({std::abs(x), std::abs(y), 1.0});
          worst = std::max(worst, std::abs(x - y) / den);
        }
  return worst;
}

inline bool logically_equal(const TensorD &a, const TensorD &b) {
  if (!(a.shape() == b.shape()))
    return false;
  const auto &sh = a.shape();
  for (std::size_t t = 0; t < sh.T; ++t)
    for (std::size_t n = 0; n < sh.N; ++n)
      for (std::size_t c = 0; c < sh.C; ++c)
        for (std::size_t sp = 0; sp < sh.spatial_size(); ++sp)
          if (a.at(t, n, c, sp) != b.at(t, n, c, sp))
            return false;
  return true;
}

inline TensorD series(std::vector<double> values) {
  const std::size_t T = values.size();
  return TensorD(Shape{T, 1, 1, {}}, Layout::TimeFirst, std::move(values));
}

inline std::vector<double> values(const TensorD &x) {
  return {x.data().begin(), x.data().end()};
}

} // namespace oracle
