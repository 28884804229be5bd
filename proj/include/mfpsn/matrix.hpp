#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mfpsn/error.hpp"

namespace mfpsn {

// Row-major dense matrix; used for the C x k neuron weights and the
// stateless linear layers.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> v)
      : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols)
      throw Error(ErrorCode::ShapeMismatch, "matrix buffer length mismatch");
  }

  double &operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return values[r * cols + c];
  }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols, cols};
  }
  std::size_t size() const { return values.size(); }

  bool operator==(const Matrix &) const = default;
};

} // namespace mfpsn
