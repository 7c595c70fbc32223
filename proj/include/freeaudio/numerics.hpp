#pragma once

// Dense row-major kernels shared by the denoiser, the control hooks and the
// metrics. Products go through Eigen maps; everything else is plain loops.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "freeaudio/errors.hpp"

namespace freeaudio {

enum class Precision { f32, f64 };

template <class T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

template <Real T>
constexpr Precision precision_of() {
  return std::same_as<T, float> ? Precision::f32 : Precision::f64;
}

template <Real T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <Real T>
using ColMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <Real T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <Real T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <Real T>
class Tensor2D {
 public:
  using value_type = T;

  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  static Tensor2D identity(std::size_t n) {
    Tensor2D t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = T{1};
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  static constexpr Precision precision() { return precision_of<T>(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  const std::vector<T>& storage() const { return data_; }

  MatrixMap<T> map() { return {data_.data(), Eigen::Index(rows_), Eigen::Index(cols_)}; }
  ConstMatrixMap<T> map() const {
    return {data_.data(), Eigen::Index(rows_), Eigen::Index(cols_)};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <Real U>
  Tensor2D<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor2D<U>(rows_, cols_, std::move(out));
  }

  bool operator==(const Tensor2D& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <Real T>
bool all_finite(const Tensor2D<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](T v) { return std::isfinite(v); });
}

// Largest absolute elementwise difference; shapes must agree.
template <Real T>
T max_abs_diff(const Tensor2D<T>& a, const Tensor2D<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("max_abs_diff: shape mismatch");
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  }
  return m;
}

template <Real T>
Tensor2D<T> matmul(const Tensor2D<T>& a, const Tensor2D<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Tensor2D<T> out(a.rows(), b.cols());
  if (a.cols() > 0) out.map().noalias() = a.map() * b.map();
  return out;
}

// a * b^T
template <Real T>
Tensor2D<T> matmul_nt(const Tensor2D<T>& a, const Tensor2D<T>& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: inner dimension mismatch");
  Tensor2D<T> out(a.rows(), b.rows());
  if (a.cols() > 0) out.map().noalias() = a.map() * b.map().transpose();
  return out;
}

// a^T * b
template <Real T>
Tensor2D<T> matmul_tn(const Tensor2D<T>& a, const Tensor2D<T>& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn: inner dimension mismatch");
  Tensor2D<T> out(a.cols(), b.cols());
  if (a.rows() > 0) out.map().noalias() = a.map().transpose() * b.map();
  return out;
}

template <Real T>
Tensor2D<T> transpose(const Tensor2D<T>& a) {
  Tensor2D<T> out(a.cols(), a.rows());
  out.map() = a.map().transpose();
  return out;
}

// In-place row softmax with max subtraction.
template <Real T>
void softmax_rows_inplace(std::span<T> data, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = data.data() + r * cols;
    T mx = row[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    T sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    const T inv = T{1} / sum;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
  }
}

template <Real T>
Tensor2D<T> softmax_rows(const Tensor2D<T>& x) {
  if (!all_finite(x)) throw NumericError("softmax_rows: non-finite input");
  if (x.cols() == 0) throw DimensionError("softmax_rows: zero columns");
  Tensor2D<T> out = x;
  softmax_rows_inplace<T>(out.values(), out.rows(), out.cols());
  return out;
}

// Row-wise layer normalization. gamma/beta have one entry per column.
template <Real T>
Tensor2D<T> layer_norm(const Tensor2D<T>& x, std::span<const T> gamma, std::span<const T> beta,
                       T eps = T(1e-5)) {
  if (gamma.size() != x.cols() || beta.size() != x.cols()) {
    throw DimensionError("layer_norm: affine parameters do not match width");
  }
  Tensor2D<T> out(x.rows(), x.cols());
  const T n = T(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    T mean = 0;
    for (T v : in) mean += v;
    mean /= n;
    T var = 0;
    for (T v : in) var += (v - mean) * (v - mean);
    var /= n;
    const T inv = T{1} / std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) o[c] = (in[c] - mean) * inv * gamma[c] + beta[c];
  }
  return out;
}

// softmax(Q K^T / sqrt(d)) V for one head.
template <Real T>
Tensor2D<T> attention(const Tensor2D<T>& q, const Tensor2D<T>& k, const Tensor2D<T>& v) {
  if (q.cols() != k.cols()) throw DimensionError("attention: query/key width mismatch");
  if (k.rows() != v.rows()) throw DimensionError("attention: key/value count mismatch");
  if (k.rows() == 0) throw DimensionError("attention: no keys");
  Tensor2D<T> scores = matmul_nt(q, k);
  const T scale = T{1} / std::sqrt(T(q.cols()));
  for (T& s : scores.values()) s *= scale;
  if (!all_finite(scores)) throw NumericError("attention: non-finite scores");
  softmax_rows_inplace<T>(scores.values(), scores.rows(), scores.cols());
  return matmul(scores, v);
}

// Multi-head variant: columns of q/k/v are split into `heads` equal slices,
// each slice attends independently, results are concatenated back.
template <Real T>
Tensor2D<T> multihead_attention(const Tensor2D<T>& q, const Tensor2D<T>& k, const Tensor2D<T>& v,
                                std::size_t heads) {
  if (heads == 0 || q.cols() % heads != 0 || v.cols() % heads != 0) {
    throw DimensionError("multihead_attention: width not divisible by heads");
  }
  if (q.cols() != k.cols()) throw DimensionError("multihead_attention: query/key width mismatch");
  if (k.rows() != v.rows()) throw DimensionError("multihead_attention: key/value count mismatch");
  const auto dh = Eigen::Index(q.cols() / heads);
  const auto dv = Eigen::Index(v.cols() / heads);
  const T scale = T{1} / std::sqrt(T(dh));
  Tensor2D<T> out(q.rows(), v.cols());
  RowMatrix<T> scores(q.rows(), k.rows());
  auto qm = q.map();
  auto km = k.map();
  auto vm = v.map();
  auto om = out.map();
  for (std::size_t h = 0; h < heads; ++h) {
    const auto c0 = Eigen::Index(h) * dh;
    const auto v0 = Eigen::Index(h) * dv;
    scores.noalias() = (qm.middleCols(c0, dh) * km.middleCols(c0, dh).transpose()) * scale;
    softmax_rows_inplace<T>(std::span<T>(scores.data(), std::size_t(scores.size())),
                            std::size_t(scores.rows()), std::size_t(scores.cols()));
    om.middleCols(v0, dv).noalias() = scores * vm.middleCols(v0, dv);
  }
  return out;
}

// mt19937_64 stream with a portable Box-Muller normal so that a seed
// reproduces the same bytes on every standard library.
class SeededRng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64+box-muller";

  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::string_view algorithm_id() const { return kAlgorithm; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::size_t(uniform() * double(n)) % n; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

  template <Real T>
  void fill_normal(std::span<T> out, double stddev = 1.0) {
    for (T& v : out) v = T(normal() * stddev);
  }

  // Independent child stream; the parent is not advanced.
  SeededRng derive(std::uint64_t stream) const { return SeededRng(mix(seed_, stream)); }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <Real T>
Tensor2D<T> random_normal(std::size_t rows, std::size_t cols, SeededRng& rng, double stddev = 1.0) {
  Tensor2D<T> t(rows, cols);
  rng.fill_normal<T>(t.values(), stddev);
  return t;
}

// Sinusoidal embedding of a scalar: [sin(v w_0), ..., cos(v w_0), ...].
template <Real T>
void sinusoidal_embedding(double value, std::span<T> out, double max_period = 10000.0) {
  const std::size_t half = out.size() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(max_period) * double(i) / double(half));
    out[i] = T(std::sin(value * freq));
    out[half + i] = T(std::cos(value * freq));
  }
  if (out.size() % 2 == 1) out.back() = T(0);
}

}  // namespace freeaudio
