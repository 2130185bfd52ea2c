#pragma once

// Dense row-major tensors (channels last) and the handful of forward ops the
// attention layers need. Every op is a pure function of its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace foldattn {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DivisibilityError : public DimensionError {
 public:
  DivisibilityError(const std::string& what_dim, std::size_t value, std::size_t factor)
      : DimensionError(what_dim + "=" + std::to_string(value) + " is not divisible by n=" +
                       std::to_string(factor)),
        dim_name_(what_dim),
        value_(value),
        factor_(factor) {}

  const std::string& dim_name() const noexcept { return dim_name_; }
  std::size_t value() const noexcept { return value_; }
  std::size_t factor() const noexcept { return factor_; }

 private:
  std::string dim_name_;
  std::size_t value_;
  std::size_t factor_;
};

// ---------------------------------------------------------------------------
// FLOP accounting. Disabled unless a FlopAccounting guard is alive on the
// calling thread; matmuls then add 2*m*k*n to the active category.

enum class FlopKind { linear, score };

struct FlopCounter {
  std::uint64_t linear = 0;
  std::uint64_t score = 0;

  std::uint64_t total() const noexcept { return linear + score; }
};

namespace detail {
inline thread_local FlopCounter* active_flop_counter = nullptr;
inline thread_local FlopKind active_flop_kind = FlopKind::linear;

inline void record_flops(std::uint64_t flops) {
  if (!active_flop_counter) return;
  if (active_flop_kind == FlopKind::linear)
    active_flop_counter->linear += flops;
  else
    active_flop_counter->score += flops;
}
}  // namespace detail

class FlopAccounting {
 public:
  explicit FlopAccounting(FlopCounter& counter)
      : previous_(std::exchange(detail::active_flop_counter, &counter)) {}
  ~FlopAccounting() { detail::active_flop_counter = previous_; }
  FlopAccounting(const FlopAccounting&) = delete;
  FlopAccounting& operator=(const FlopAccounting&) = delete;

 private:
  FlopCounter* previous_;
};

class FlopKindScope {
 public:
  explicit FlopKindScope(FlopKind kind) : previous_(std::exchange(detail::active_flop_kind, kind)) {}
  ~FlopKindScope() { detail::active_flop_kind = previous_; }
  FlopKindScope(const FlopKindScope&) = delete;
  FlopKindScope& operator=(const FlopKindScope&) = delete;

 private:
  FlopKind previous_;
};

// ---------------------------------------------------------------------------

/// Dense array of rank 1-3, row-major with the last axis as channels.
///
/// A default-constructed tensor is the "absent" tensor (rank 0, no data); it
/// stands in for optional parameter blocks such as disabled biases.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor element type must be floating point");

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(product(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (product(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + shape_string(shape_) + " needs " +
                           std::to_string(product(shape_)) + " values, got " +
                           std::to_string(data_.size()));
    }
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i) out(i, i) = T(1);
    return out;
  }

  bool empty() const noexcept { return shape_.empty(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  /// Number of channels (last axis).
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
  /// Product of all leading axes; rank-1 tensors count as one row.
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : data_.size() / shape_.back(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

  template <typename U>
  Tensor<U> cast() const {
    if (empty()) return {};
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  static std::size_t product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  static void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 3)
      throw DimensionError("tensor rank must be 1-3, got shape " + shape_string(shape));
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be >= 1, got " + shape_string(shape));
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("cannot compare " + shape_string(a.shape()) + " with " +
                         shape_string(b.shape()));
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

namespace detail {
template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2)
    throw DimensionError(std::string(what) + " must be a matrix, got shape " +
                         shape_string(t.shape()));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix products. Reduction order is fixed (ascending inner index), so the
// result is deterministic and matches a naive triple loop bit-for-bit.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul lhs");
  detail::require_matrix(b, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c.data().data() + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const T ait = a(i, t);
      const T* bt = b.data().data() + t * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += ait * bt[j];
    }
  }
  detail::record_flops(2ull * m * k * n);
  return c;
}

/// a * b^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul lhs");
  detail::require_matrix(b, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k)
    throw DimensionError("matmul_nt shape mismatch: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto bj = b.row(j);
      T acc = 0;
      for (std::size_t t = 0; t < k; ++t) acc += ai[t] * bj[t];
      c(i, j) = acc;
    }
  }
  detail::record_flops(2ull * m * k * n);
  return c;
}

/// a^T * b
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul lhs");
  detail::require_matrix(b, "matmul rhs");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul_tn shape mismatch: " + shape_string(a.shape()) + "^T x " +
                         shape_string(b.shape()));
  Tensor<T> c({m, n});
  for (std::size_t t = 0; t < k; ++t) {
    const auto at = a.row(t);
    const auto bt = b.row(t);
    for (std::size_t i = 0; i < m; ++i) {
      const T ati = at[i];
      T* ci = c.data().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += ati * bt[j];
    }
  }
  detail::record_flops(2ull * m * k * n);
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_matrix(a, "transpose input");
  Tensor<T> out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out(j, i) = a(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise helpers.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

/// Adds a length-C vector to every row of x. An absent bias is a no-op.
template <typename T>
Tensor<T> add_row_bias(Tensor<T> x, const Tensor<T>& bias) {
  if (bias.empty()) return x;
  if (bias.size() != x.cols())
    throw DimensionError("bias of length " + std::to_string(bias.size()) +
                         " does not match channel dimension " + std::to_string(x.cols()));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
  return x;
}

/// x * w (+ b)
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_row_bias(matmul(x, w), b);
}

/// Rows [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_matrix(x, "slice_rows input");
  if (begin >= end || end > x.dim(0))
    throw DimensionError("row slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_string(x.shape()));
  const auto src = x.data().subspan(begin * x.cols(), (end - begin) * x.cols());
  return Tensor<T>({end - begin, x.cols()}, std::vector<T>(src.begin(), src.end()));
}

/// Columns [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_matrix(x, "slice_cols input");
  if (begin >= end || end > x.dim(1))
    throw DimensionError("column slice out of range for " + shape_string(x.shape()));
  Tensor<T> out({x.dim(0), end - begin});
  for (std::size_t r = 0; r < x.dim(0); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = x(r, c);
  return out;
}

/// Writes `block` into columns starting at `begin`.
template <typename T>
void assign_cols(Tensor<T>& x, std::size_t begin, const Tensor<T>& block) {
  if (block.rows() != x.rows() || begin + block.cols() > x.cols())
    throw DimensionError("column block " + shape_string(block.shape()) + " does not fit " +
                         shape_string(x.shape()));
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < block.cols(); ++c) x(r, begin + c) = block(r, c);
}

/// Stacks two matrices with equal channel count vertically. Either may be absent.
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& top, const Tensor<T>& bottom) {
  if (top.empty()) return bottom;
  if (bottom.empty()) return top;
  if (top.cols() != bottom.cols())
    throw DimensionError("concat_rows channel mismatch: " + shape_string(top.shape()) + " vs " +
                         shape_string(bottom.shape()));
  std::vector<T> data(top.values());
  data.insert(data.end(), bottom.values().begin(), bottom.values().end());
  return Tensor<T>({top.rows() + bottom.rows(), top.cols()}, std::move(data));
}

// ---------------------------------------------------------------------------

/// Softmax over the last axis with max subtraction. Entries equal to -inf
/// receive probability exactly zero.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  Tensor<T> out = x;
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    T peak = -std::numeric_limits<T>::infinity();
    for (T v : row) peak = std::max(peak, v);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - peak);
      sum += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
  }
  return out;
}

/// Per-token normalization over channels, then gain * normalized + shift.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift, T eps) {
  const std::size_t c = x.cols();
  if (gain.size() != c || shift.size() != c)
    throw DimensionError("layer_norm: gain/shift length " + std::to_string(gain.size()) + "/" +
                         std::to_string(shift.size()) + " does not match channel dimension " +
                         std::to_string(c));
  Tensor<T> out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    T mean = 0;
    for (T v : row) mean += v;
    mean /= T(c);
    T var = 0;
    for (T v : row) var += (v - mean) * (v - mean);
    var /= T(c);
    const T inv_std = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) row[j] = gain[j] * ((row[j] - mean) * inv_std) + shift[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel split / concat. Sub-token i of token t lands on row t*n + i and
// holds channels [i*D/n, (i+1)*D/n). Row-major storage makes both a reshape.

template <typename T>
Tensor<T> split_channels(const Tensor<T>& x, std::size_t n) {
  detail::require_matrix(x, "split_channels input");
  if (n == 0 || x.dim(1) % n != 0) throw DivisibilityError("D", x.dim(1), n);
  return x.reshaped({x.dim(0) * n, x.dim(1) / n});
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& x, std::size_t n) {
  detail::require_matrix(x, "concat_channels input");
  if (n == 0 || x.dim(0) % n != 0) throw DivisibilityError("rows", x.dim(0), n);
  return x.reshaped({x.dim(0) / n, x.dim(1) * n});
}

// ---------------------------------------------------------------------------

enum class Activation { relu, gelu };

inline constexpr double kGeluCubicCoeff = 0.044715;

template <typename T>
T gelu_scalar(T x) {
  const T k = T(std::sqrt(2.0 / 3.14159265358979323846));
  return T(0.5) * x * (T(1) + std::tanh(k * (x + T(kGeluCubicCoeff) * x * x * x)));
}

template <typename T>
T gelu_derivative(T x) {
  const T k = T(std::sqrt(2.0 / 3.14159265358979323846));
  const T inner = k * (x + T(kGeluCubicCoeff) * x * x * x);
  const T th = std::tanh(inner);
  const T dinner = k * (T(1) + T(3 * kGeluCubicCoeff) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  Tensor<T> out = x;
  for (auto& v : out.data()) v = kind == Activation::relu ? std::max(v, T(0)) : gelu_scalar(v);
  return out;
}

}  // namespace foldattn
