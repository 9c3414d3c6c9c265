// SPDX-License-Identifier: Apache-2.0
#include "plora/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "plora/errors.hpp"

namespace plora {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op, a.shape_string(), b.shape_string()));
  }
}

void require_same_size(const Vector& a, const Vector& b, const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(fmt::format("{}: length mismatch {} vs {}", op, a.size(), b.size()));
  }
}

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

// ---- Vector ---------------------------------------------------------------

bool Vector::is_zero() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return v == 0.0; });
}

Vector& Vector::operator+=(const Vector& other) {
  require_same_size(*this, other, "Vector::operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Vector& Vector::operator-=(const Vector& other) {
  require_same_size(*this, other, "Vector::operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Vector& Vector::operator*=(double scale) {
  for (double& v : data_) v *= scale;
  return *this;
}

Vector operator+(Vector a, const Vector& b) { return a += b; }
Vector operator-(Vector a, const Vector& b) { return a -= b; }
Vector operator*(Vector a, double scale) { return a *= scale; }

// ---- Matrix ---------------------------------------------------------------

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError(fmt::format("Matrix: {} values for shape ({}, {})", data_.size(), rows_, cols_));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_row(const Vector& v) {
  return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

Matrix Matrix::broadcast_row(const Vector& v, std::size_t n) {
  Matrix m(n, v.size());
  for (std::size_t r = 0; r < n; ++r) std::copy(v.begin(), v.end(), m.row(r).begin());
  return m;
}

Vector Matrix::row_vector(std::size_t r) const {
  auto src = row(r);
  return Vector(std::vector<double>(src.begin(), src.end()));
}

void Matrix::set_row(std::size_t r, std::span<const double> values) {
  if (values.size() != cols_) {
    throw DimensionError(fmt::format("Matrix::set_row: {} values for {} columns", values.size(), cols_));
  }
  std::copy(values.begin(), values.end(), row(r).begin());
}

void Matrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) {
    throw DimensionError(fmt::format("Matrix::append_row: {} values for {} columns", values.size(), cols_));
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::string Matrix::shape_string() const { return fmt::format("({}, {})", rows_, cols_); }

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "Matrix::operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require_same_shape(*this, other, "Matrix::operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double scale) {
  for (double& v : data_) v *= scale;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double scale) { return a *= scale; }

// ---- products ---------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError(fmt::format("matmul: cannot multiply {} by {}", a.shape_string(), b.shape_string()));
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* dst = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* src = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError(fmt::format("matmul_tn: cannot multiply transpose of {} by {}", a.shape_string(),
                                     b.shape_string()));
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* brow = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* dst = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) dst[j] += aki * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError(fmt::format("matmul_nt: cannot multiply {} by transpose of {}", a.shape_string(),
                                     b.shape_string()));
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(arow, b.row(j));
  }
  return out;
}

Vector vecmat(const Vector& v, const Matrix& m) {
  if (v.size() != m.rows()) {
    throw DimensionError(fmt::format("vecmat: cannot multiply (1, {}) by {}", v.size(), m.shape_string()));
  }
  Vector out(m.cols());
  for (std::size_t k = 0; k < m.rows(); ++k) {
    const double vk = v[k];
    if (vk == 0.0) continue;
    auto src = m.row(k);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += vk * src[j];
  }
  return out;
}

Vector matvec(const Matrix& m, const Vector& v) {
  if (v.size() != m.cols()) {
    throw DimensionError(fmt::format("matvec: cannot multiply {} by ({}, 1)", m.shape_string(), v.size()));
  }
  Vector out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), v.values());
  return out;
}

Matrix outer(const Vector& a, const Vector& b) {
  Matrix out(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out(i, j) = a[i] * b[j];
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError(fmt::format("dot: length mismatch {} vs {}", a.size(), b.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Vector column_sums(const Matrix& m) {
  Vector out(m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += src[c];
  }
  return out;
}

void add_row_broadcast(Matrix& m, const Vector& v) {
  if (v.size() != m.cols()) {
    throw DimensionError(fmt::format("add_row_broadcast: length {} for {}", v.size(), m.shape_string()));
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto dst = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) dst[c] += v[c];
  }
}

double max_abs(std::span<const double> values) {
  double best = 0.0;
  for (double v : values) best = std::max(best, std::abs(v));
  return best;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError(fmt::format("max_abs_diff: length mismatch {} vs {}", a.size(), b.size()));
  }
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) best = std::max(best, std::abs(a[i] - b[i]));
  return best;
}

double l2_norm(std::span<const double> values) {
  double acc = 0.0;
  for (double v : values) acc += v * v;
  return std::sqrt(acc);
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) {
    throw DimensionError(fmt::format("relative_error: length mismatch {} vs {}", a.size(), b.size()));
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  const double scale = std::max({l2_norm(a), l2_norm(b), floor});
  return std::sqrt(diff) / scale;
}

// ---- Rng ------------------------------------------------------------------

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& word : s_) word = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(theta);
  has_spare_ = true;
  return radius * std::cos(theta);
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw ParameterError("Rng::uniform_index: n must be positive");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t bound = n;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

Rng Rng::fork(std::uint64_t tag) const {
  std::uint64_t x = seed_ ^ (tag * 0xD1B54A32D192ED03ULL);
  return Rng(splitmix64(x));
}

// ---- init & oracles -------------------------------------------------------------

Matrix gaussian_init(std::size_t rows, std::size_t cols, double std, Rng& rng) {
  if (!(std > 0.0) || !std::isfinite(std)) {
    throw ParameterError(fmt::format("gaussian_init: std must be positive, got {}", std));
  }
  Matrix m(rows, cols);
  for (double& v : m.values()) v = std * rng.normal();
  return m;
}

Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& at, double eps) {
  if (!(eps > 0.0)) throw ParameterError(fmt::format("finite_diff_grad: eps must be positive, got {}", eps));
  Matrix probe = at;
  Matrix grad(at.rows(), at.cols());
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double original = probe.values()[i];
    probe.values()[i] = original + eps;
    const double up = f(probe);
    probe.values()[i] = original - eps;
    const double down = f(probe);
    probe.values()[i] = original;
    grad.values()[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& at, double eps) {
  if (!(eps > 0.0)) throw ParameterError(fmt::format("finite_diff_grad: eps must be positive, got {}", eps));
  Vector probe = at;
  Vector grad(at.size());
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + eps;
    const double up = f(probe);
    probe[i] = original - eps;
    const double down = f(probe);
    probe[i] = original;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

}  // namespace plora
