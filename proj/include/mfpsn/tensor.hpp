#pragma once

// Dense temporal tensor with an explicit time-first / time-last layout.
//
// Logical axes are always addressed as (t, n, c, s) where s is the flattened
// index over the optional spatial axes (H, W). Both layouts keep the spatial
// axes adjacent, so a single stride for s suffices:
//
//   TimeFirst  physical order (T, N, C, H, W)
//   TimeLast   physical order (N, C, H, W, T)

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mfpsn/error.hpp"

namespace mfpsn {

enum class Layout { TimeFirst, TimeLast };

inline const char *to_string(Layout layout) {
  return layout == Layout::TimeFirst ? "time_first" : "time_last";
}

inline constexpr std::size_t kMaxRank = 5;

struct Shape {
  std::size_t T = 1;
  std::size_t N = 1;
  std::size_t C = 1;
  std::vector<std::size_t> spatial; // at most two extents (H, W)

  std::size_t spatial_size() const {
    return std::accumulate(spatial.begin(), spatial.end(), std::size_t{1},
                           std::multiplies<>());
  }
  std::size_t lanes() const { return N * C * spatial_size(); }
  std::size_t numel() const { return T * lanes(); }
  std::size_t rank() const { return 3 + spatial.size(); }

  bool operator==(const Shape &) const = default;
};

inline std::string to_string(const Shape &shape);

struct Strides {
  std::size_t t = 0;
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t s = 0;
};

inline Strides contiguous_strides(const Shape &shape, Layout layout) {
  const std::size_t S = shape.spatial_size();
  if (layout == Layout::TimeFirst)
    return {shape.N * shape.C * S, shape.C * S, S, 1};
  return {1, shape.C * S * shape.T, S * shape.T, shape.T};
}

namespace detail {
inline std::atomic<std::uint64_t> &copy_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}
} // namespace detail

// Number of physical buffer copies made by layout conversions since start.
inline std::uint64_t tensor_copy_count() {
  return detail::copy_counter().load(std::memory_order_relaxed);
}

template <typename Scalar> class TemporalTensor {
public:
  using value_type = Scalar;

  TemporalTensor() : TemporalTensor(Shape{}, Layout::TimeFirst) {}

  TemporalTensor(Shape shape, Layout layout)
      : shape_(std::move(shape)), layout_(layout) {
    validate(shape_);
    strides_ = contiguous_strides(shape_, layout_);
    buffer_ = std::make_shared<std::vector<Scalar>>(shape_.numel(), Scalar{});
  }

  TemporalTensor(Shape shape, Layout layout, std::vector<Scalar> data)
      : shape_(std::move(shape)), layout_(layout) {
    validate(shape_);
    if (data.size() != shape_.numel())
      throw Error(ErrorCode::ShapeMismatch,
                  "buffer length " + std::to_string(data.size()) +
                      " does not match shape " + to_string(shape_));
    strides_ = contiguous_strides(shape_, layout_);
    buffer_ = std::make_shared<std::vector<Scalar>>(std::move(data));
  }

  // Builds a tensor from a function of the logical index (t, n, c, s).
  template <typename Fn>
  static TemporalTensor generate(const Shape &shape, Layout layout, Fn &&fn) {
    TemporalTensor out(shape, layout);
    const std::size_t S = shape.spatial_size();
    for (std::size_t t = 0; t < shape.T; ++t)
      for (std::size_t n = 0; n < shape.N; ++n)
        for (std::size_t c = 0; c < shape.C; ++c)
          for (std::size_t s = 0; s < S; ++s)
            out.at(t, n, c, s) = static_cast<Scalar>(fn(t, n, c, s));
    return out;
  }

  const Shape &shape() const { return shape_; }
  Layout layout() const { return layout_; }
  const Strides &strides() const { return strides_; }
  std::size_t numel() const { return shape_.numel(); }
  bool time_batch_merged() const { return merged_; }

  // Physical extents. A merged view reports (T*N, C, ...).
  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> out;
    if (merged_) {
      out = {shape_.T * shape_.N, shape_.C};
      out.insert(out.end(), shape_.spatial.begin(), shape_.spatial.end());
    } else if (layout_ == Layout::TimeFirst) {
      out = {shape_.T, shape_.N, shape_.C};
      out.insert(out.end(), shape_.spatial.begin(), shape_.spatial.end());
    } else {
      out = {shape_.N, shape_.C};
      out.insert(out.end(), shape_.spatial.begin(), shape_.spatial.end());
      out.push_back(shape_.T);
    }
    return out;
  }

  std::size_t offset(std::size_t t, std::size_t n, std::size_t c,
                     std::size_t s = 0) const {
    return t * strides_.t + n * strides_.n + c * strides_.c + s * strides_.s;
  }
  // Offset of the first time step of lane (n, c, s).
  std::size_t lane_offset(std::size_t n, std::size_t c,
                          std::size_t s = 0) const {
    return n * strides_.n + c * strides_.c + s * strides_.s;
  }

  Scalar &at(std::size_t t, std::size_t n, std::size_t c, std::size_t s = 0) {
    return (*buffer_)[offset(t, n, c, s)];
  }
  const Scalar &at(std::size_t t, std::size_t n, std::size_t c,
                   std::size_t s = 0) const {
    return (*buffer_)[offset(t, n, c, s)];
  }

  std::span<Scalar> data() { return {buffer_->data(), buffer_->size()}; }
  std::span<const Scalar> data() const {
    return {buffer_->data(), buffer_->size()};
  }

  bool shares_buffer_with(const TemporalTensor &other) const {
    return buffer_ == other.buffer_;
  }

  // Deep copy with the same layout.
  TemporalTensor clone() const {
    TemporalTensor out(shape_, layout_, *buffer_);
    out.merged_ = merged_;
    return out;
  }

  template <typename Other> TemporalTensor<Other> cast() const {
    std::vector<Other> converted(buffer_->begin(), buffer_->end());
    return TemporalTensor<Other>(shape_, layout_, std::move(converted));
  }

private:
  static void validate(const Shape &shape) {
    if (shape.T == 0 || shape.N == 0 || shape.C == 0)
      throw Error(ErrorCode::InvalidArgument,
                  "T, N and C must be positive, got " + to_string(shape));
    if (shape.rank() > kMaxRank)
      throw Error(ErrorCode::InvalidArgument, "rank exceeds 5");
    for (std::size_t e : shape.spatial)
      if (e == 0)
        throw Error(ErrorCode::InvalidArgument, "zero spatial extent");
  }

  template <typename> friend class TemporalTensor;
  template <typename S>
  friend TemporalTensor<S> merge_time_batch(const TemporalTensor<S> &);

  Shape shape_;
  Layout layout_;
  Strides strides_;
  bool merged_ = false;
  std::shared_ptr<std::vector<Scalar>> buffer_;
};

using TensorD = TemporalTensor<double>;
using TensorF = TemporalTensor<float>;
using TensorI = TemporalTensor<std::int32_t>;

template <typename Scalar> struct LayoutConversion {
  TemporalTensor<Scalar> tensor;
  bool copied = false;
};

// Same logical content in the target layout. Switching layouts moves T
// across nonadjacent axes and therefore always materializes a new buffer.
template <typename Scalar>
LayoutConversion<Scalar> convert_layout(const TemporalTensor<Scalar> &x,
                                        Layout target) {
  if (x.layout() == target)
    return {x, false};
  const Shape &shape = x.shape();
  TemporalTensor<Scalar> out(shape, target);
  const std::size_t S = shape.spatial_size();
  for (std::size_t t = 0; t < shape.T; ++t)
    for (std::size_t n = 0; n < shape.N; ++n)
      for (std::size_t c = 0; c < shape.C; ++c)
        for (std::size_t s = 0; s < S; ++s)
          out.at(t, n, c, s) = x.at(t, n, c, s);
  detail::copy_counter().fetch_add(1, std::memory_order_relaxed);
  return {std::move(out), true};
}

// (T, N, C, ...) -> (T*N, C, ...) as a view on the same buffer. Only valid
// for time-first tensors, where T and N are physically adjacent.
template <typename Scalar>
TemporalTensor<Scalar> merge_time_batch(const TemporalTensor<Scalar> &x) {
  if (x.layout() != Layout::TimeFirst)
    throw Error(ErrorCode::LayoutUnsupported,
                "time and batch axes are not adjacent in time_last layout");
  TemporalTensor<Scalar> view = x;
  view.merged_ = true;
  return view;
}

inline std::string to_string(const Shape &shape) {
  std::string out = "(T=" + std::to_string(shape.T) +
                    ",N=" + std::to_string(shape.N) +
                    ",C=" + std::to_string(shape.C);
  for (std::size_t e : shape.spatial)
    out += "," + std::to_string(e);
  return out + ")";
}

} // namespace mfpsn
