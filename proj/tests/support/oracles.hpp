// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used by the tests. Deliberately naive.
#pragma once

#include <cmath>
#include <algorithm>
#include <cstddef>
#include <vector>

#include "plora/linalg.hpp"
#include "plora/plora_layer.hpp"

namespace plora::oracle {

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double acc = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(acc);
    }
  }
  return out;
}

inline Vector row_times(const Vector& v, const Matrix& m) {
  return naive_matmul(Matrix::from_row(v), m).row_vector(0);
}

/// h W + b + s (h A + p B) O, evaluated term by term.
inline Vector plora_forward(const Matrix& W, const Vector& b, const Matrix& A, const Matrix& O, const Matrix& B,
                            double s, const Vector& h, const Vector& p) {
  Vector out = row_times(h, W);
  Vector mid = row_times(h, A);
  const Vector pb = row_times(p, B);
  for (std::size_t i = 0; i < mid.size(); ++i) mid[i] += pb[i];
  const Vector adapter = row_times(mid, O);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i] + s * adapter[i];
  return out;
}

inline double vdot(const Vector& a, const Vector& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

inline Vector random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  for (double& x : v.values()) x = scale * rng.normal();
  return v;
}

/// Layer with every tensor random (W_out included), for gradient and merge checks.
inline PLoRALinear random_layer(const PLoRAConfig& cfg, Rng& rng) {
  return PLoRALinear::from_parts(cfg, random_matrix(cfg.d_in, cfg.d_out, rng, 0.5), random_vector(cfg.d_out, rng, 0.5),
                                 random_matrix(cfg.d_in, cfg.rank, rng, 0.5), random_matrix(cfg.rank, cfg.d_out, rng, 0.5),
                                 random_matrix(cfg.d_p, cfg.rank, rng, 0.5));
}

/// Scalar softmax by definition.
inline std::vector<double> softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = v > mx ? v : mx;
  std::vector<double> e(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) sum += e[i] = std::exp(z[i] - mx);
  for (double& v : e) v /= sum;
  return e;
}

struct BruteMetrics {
  double acc = 0.0;
  double mse = 0.0;
  double macro_f1 = 0.0;
};

/// Confusion matrix, then precision and recall per class (0/0 read as 0).
inline BruteMetrics brute_metrics(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) k = std::max({k, pred[i] + 1, gold[i] + 1});
  std::vector<std::vector<std::size_t>> conf(k, std::vector<std::size_t>(k, 0));  // [gold][pred]
  for (std::size_t i = 0; i < pred.size(); ++i) ++conf[gold[i]][pred[i]];
  BruteMetrics m;
  const double n = static_cast<double>(pred.size());
  std::size_t correct = 0;
  std::size_t squared = 0;
  for (std::size_t g = 0; g < k; ++g) {
    for (std::size_t p = 0; p < k; ++p) {
      if (g == p) correct += conf[g][p];
      const std::size_t d = g > p ? g - p : p - g;
      squared += conf[g][p] * d * d;
    }
  }
  m.acc = static_cast<double>(correct) / n;
  m.mse = static_cast<double>(squared) / n;
  double f1_sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t j = 0; j < k; ++j) {
      predicted += conf[j][c];
      actual += conf[c][j];
    }
    if (predicted == 0 && actual == 0) continue;
    ++classes;
    const double tp = static_cast<double>(conf[c][c]);
    const double precision = predicted == 0 ? 0.0 : tp / static_cast<double>(predicted);
    const double recall = actual == 0 ? 0.0 : tp / static_cast<double>(actual);
    f1_sum += precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
  }
  m.macro_f1 = f1_sum / static_cast<double>(classes);
  return m;
}

}  // namespace plora::oracle
