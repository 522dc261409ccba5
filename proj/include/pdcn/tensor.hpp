#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdcn/error.hpp"
#include "pdcn/rng.hpp"

namespace pdcn {

/// Ordered list of positive extents. Feature maps are (batch, height, width,
/// channels); dense activations are (batch, features).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::int64_t> extents) : Shape(std::vector<std::int64_t>(extents)) {}
  explicit Shape(const std::vector<std::int64_t>& extents) {
    if (extents.empty()) throw ShapeError("shape must have at least one extent");
    dims_.reserve(extents.size());
    for (auto e : extents) {
      if (e < 1) throw ShapeError("shape extent must be >= 1, got " + std::to_string(e));
      dims_.push_back(static_cast<std::size_t>(e));
    }
  }
  explicit Shape(std::vector<std::size_t> extents) : dims_(std::move(extents)) {
    if (dims_.empty()) throw ShapeError("shape must have at least one extent");
    for (auto e : dims_)
      if (e < 1) throw ShapeError("shape extent must be >= 1");
  }

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  std::size_t back() const { return dims_.back(); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  bool empty() const { return dims_.empty(); }

  std::size_t numel() const {
    if (dims_.empty()) return 0;
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
  }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ')';
    return os.str();
  }

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

/// Initializer for tensor_new.
struct Init {
  enum class Kind { zeros, ones, constant, he_normal };
  Kind kind = Kind::zeros;
  double value = 0.0;
  std::uint64_t seed = 0;

  static Init zeros() { return {Kind::zeros, 0.0, 0}; }
  static Init ones() { return {Kind::ones, 1.0, 0}; }
  static Init constant(double c) { return {Kind::constant, c, 0}; }
  /// Normal(0, sqrt(2 / fan_in)); fan_in is the product of all extents but the
  /// last (HWIO kernels and (in, out) dense weights).
  static Init he_normal(std::uint64_t seed) { return {Kind::he_normal, 0.0, seed}; }
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
  BasicTensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_.numel())
      throw ShapeError("buffer of " + std::to_string(data_.size()) + " values does not fit shape " + shape_.str());
  }

  static BasicTensor zeros(Shape s) { return BasicTensor(std::move(s), T{0}); }
  static BasicTensor ones(Shape s) { return BasicTensor(std::move(s), T{1}); }
  static BasicTensor constant(Shape s, T c) { return BasicTensor(std::move(s), c); }
  static BasicTensor zeros_like(const BasicTensor& o) { return BasicTensor(o.shape_, T{0}); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  /// A default-constructed tensor holds no buffer; it stands for "no value".
  bool empty() const { return shape_.empty(); }

  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <class... I>
  T& at(I... idx) { return data_[offset({static_cast<std::size_t>(idx)...})]; }
  template <class... I>
  const T& at(I... idx) const { return data_[offset({static_cast<std::size_t>(idx)...})]; }

  BasicTensor reshaped(Shape s) const {
    if (s.numel() != size()) throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    return BasicTensor(std::move(s), data_);
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Throws NumericError naming `where` if any value is NaN or infinite.
  void check_finite(std::string_view where) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i]))
        throw NumericError("non-finite value in " + std::string(where) + " at flat index " + std::to_string(i));
    }
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.rank()) throw ShapeError("index rank mismatch for shape " + shape_.str());
    std::size_t off = 0;
    std::size_t d = 0;
    for (auto i : idx) {
      if (i >= shape_[d]) throw ShapeError("index out of range for shape " + shape_.str());
      off = off * shape_[d] + i;
      ++d;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <class T = float>
BasicTensor<T> tensor_new(const Shape& shape, const Init& init) {
  switch (init.kind) {
    case Init::Kind::zeros:
      return BasicTensor<T>(shape, T{0});
    case Init::Kind::ones:
      return BasicTensor<T>(shape, T{1});
    case Init::Kind::constant:
      return BasicTensor<T>(shape, static_cast<T>(init.value));
    case Init::Kind::he_normal: {
      std::size_t fan_in = 1;
      for (std::size_t i = 0; i + 1 < shape.rank(); ++i) fan_in *= shape[i];
      if (shape.rank() == 1) fan_in = shape[0];
      Rng rng(init.seed);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      BasicTensor<T> t(shape);
      for (auto& v : t.values()) v = static_cast<T>(dist(rng));
      return t;
    }
  }
  throw ShapeError("unknown initializer");
}

// ---------------------------------------------------------------------------
// GEMM kernels. Row-major, i-k-j loop order: each output element accumulates
// its products in increasing k, so results are bit-reproducible.

namespace kernel {

/// C[m,n] (+)= sum_k A[m,k] * B[k,n]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, T{0});
  for (std::size_t i = 0; i < M; ++i) {
    T* __restrict c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      const T* __restrict b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

/// C[k,n] (+)= sum_m A[m,k] * B[m,n]   (A transposed)
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + K * N, T{0});
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    const T* __restrict b = B + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      if (av == T{0}) continue;
      T* __restrict c = C + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

template <class T>
std::vector<T> transpose(std::size_t rows, std::size_t cols, const T* src) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

}  // namespace kernel

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 operands");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul inner extents differ: " + a.shape().str() + " x " + b.shape().str());
  BasicTensor<T> c(Shape(std::vector<std::size_t>{a.dim(0), b.dim(1)}));
  kernel::gemm_nn(a.dim(0), b.dim(1), a.dim(1), a.raw(), b.raw(), c.raw(), false);
  c.check_finite("matmul");
  return c;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic. `b` may have the same shape as `a`, be a scalar, or
// be a rank-1 tensor matching the last (channel) axis of `a`.

enum class BinaryOp { add, sub, mul };

namespace detail {

template <class T>
T apply(BinaryOp op, T x, T y) {
  switch (op) {
    case BinaryOp::add: return x + y;
    case BinaryOp::sub: return x - y;
    case BinaryOp::mul: return x * y;
  }
  return x;
}

}  // namespace detail

template <class T>
BasicTensor<T> elementwise(BinaryOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  BasicTensor<T> out(a.shape());
  if (b.shape() == a.shape()) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply(op, a[i], b[i]);
  } else if (b.rank() == 1 && b.dim(0) == a.shape().back()) {
    const std::size_t c = b.dim(0);
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply(op, a[i], b[i % c]);
  } else if (b.size() == 1) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply(op, a[i], b[0]);
  } else {
    throw ShapeError("cannot broadcast " + b.shape().str() + " onto " + a.shape().str());
  }
  out.check_finite("elementwise");
  return out;
}

template <class T>
BasicTensor<T> elementwise(BinaryOp op, const BasicTensor<T>& a, T scalar) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply(op, a[i], scalar);
  out.check_finite("elementwise");
  return out;
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }

template <class T>
BasicTensor<T> max_with_scalar(const BasicTensor<T>& a, T scalar) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > scalar ? a[i] : scalar;
  out.check_finite("max_with_scalar");
  return out;
}

// ---------------------------------------------------------------------------
// 2-D window geometry.

enum class Padding {
  same_preserving,  ///< stride-1 output extent == input extent
  same_ceil,        ///< output extent == ceil(input / stride)
  valid_floor,      ///< no padding; floor((input - kernel) / stride) + 1
};

struct Extent2 {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

struct Shape2DSpec {
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  std::size_t kernel_height = 1;
  std::size_t kernel_width = 1;
  std::size_t stride = 1;
  Padding padding = Padding::valid_floor;
};

namespace detail {

inline std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding p) {
  if (stride < 1) throw ShapeError("stride must be >= 1");
  if (k < 1) throw ShapeError("kernel extent must be >= 1");
  switch (p) {
    case Padding::same_preserving:
    case Padding::same_ceil:
      return (in + stride - 1) / stride;
    case Padding::valid_floor:
      if (in < k) return 0;
      return (in - k) / stride + 1;
  }
  return 0;
}

/// Leading (top/left) zero padding for a window axis.
inline std::size_t pad_before(std::size_t in, std::size_t k, std::size_t stride, Padding p) {
  if (p == Padding::valid_floor) return 0;
  const std::size_t out = out_extent(in, k, stride, p);
  const std::size_t needed = (out - 1) * stride + k;
  const std::size_t total = needed > in ? needed - in : 0;
  return total / 2;
}

}  // namespace detail

/// Output (height, width) of a window op; throws ShapeError when either is < 1.
inline Extent2 infer_out_extent(const Shape2DSpec& s) {
  const auto h = detail::out_extent(s.in_height, s.kernel_height, s.stride, s.padding);
  const auto w = detail::out_extent(s.in_width, s.kernel_width, s.stride, s.padding);
  if (h < 1 || w < 1)
    throw ShapeError("window of " + std::to_string(s.kernel_height) + "x" + std::to_string(s.kernel_width) +
                     " on " + std::to_string(s.in_height) + "x" + std::to_string(s.in_width) +
                     " yields an empty output");
  return {h, w};
}

}  // namespace pdcn
