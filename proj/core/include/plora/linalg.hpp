// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace plora {

/// Dense vector of 64-bit reals (a row vector wherever it meets a Matrix).
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  /// True when every entry is exactly 0.0 (either sign).
  bool is_zero() const;

  Vector& operator+=(const Vector& other);
  Vector& operator-=(const Vector& other);
  Vector& operator*=(double scale);

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> data_;
};

/// Row-major dense matrix of 64-bit reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  /// 1×n matrix holding v.
  static Matrix from_row(const Vector& v);
  /// n×v.size() matrix with every row equal to v.
  static Matrix broadcast_row(const Vector& v, std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vector row_vector(std::size_t r) const;
  void set_row(std::size_t r, std::span<const double> values);
  /// Appends a row; cols must match unless the matrix is empty.
  void append_row(std::span<const double> values);

  Matrix transposed() const;
  std::string shape_string() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double scale);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double scale);
Vector operator+(Vector a, const Vector& b);
Vector operator-(Vector a, const Vector& b);
Vector operator*(Vector a, double scale);

/// a·b. Throws DimensionError naming both shapes when a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without materialising the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// Row vector times matrix: v·m.
Vector vecmat(const Vector& v, const Matrix& m);
/// m·v for a column vector v.
Vector matvec(const Matrix& m, const Vector& v);
/// Outer product aᵀb, shape (a.size(), b.size()).
Matrix outer(const Vector& a, const Vector& b);
double dot(std::span<const double> a, std::span<const double> b);
/// Column sums of m as a vector of length m.cols().
Vector column_sums(const Matrix& m);
/// Adds v to every row of m.
void add_row_broadcast(Matrix& m, const Vector& v);

double max_abs(std::span<const double> values);
double max_abs_diff(std::span<const double> a, std::span<const double> b);
inline double max_abs_diff(const Matrix& a, const Matrix& b) { return max_abs_diff(a.values(), b.values()); }
inline double max_abs_diff(const Vector& a, const Vector& b) { return max_abs_diff(a.values(), b.values()); }
double l2_norm(std::span<const double> values);
bool all_finite(std::span<const double> values);

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, floor). Used for gradient-block comparisons.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

/// xoshiro256** seeded through splitmix64. Platform independent: every draw
/// (uniform, normal, index, shuffle) is defined here, not by <random>.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();
  /// Uniform integer in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);
  bool bernoulli(double p);
  /// Independent stream derived from this generator's seed and a tag.
  Rng fork(std::uint64_t tag) const;
  std::uint64_t seed() const { return seed_; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// i.i.d. N(0, std²) entries. std must be > 0.
Matrix gaussian_init(std::size_t rows, std::size_t cols, double std, Rng& rng);

/// Central-difference gradient of f at `at`, entry by entry.
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& at, double eps);
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& at, double eps);

}  // namespace plora
