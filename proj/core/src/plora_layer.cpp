// SPDX-License-Identifier: Apache-2.0
#include "plora/plora_layer.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "plora/errors.hpp"

namespace plora {

void PLoRAConfig::validate() const {
  if (d_in == 0 || d_out == 0) throw ParameterError("PLoRAConfig: d_in and d_out must be positive");
  if (rank < 1 || rank >= std::min(d_in, d_out)) {
    throw ParameterError(
        fmt::format("PLoRAConfig: rank {} must satisfy 1 <= r < min(d_in, d_out) = {}", rank, std::min(d_in, d_out)));
  }
  if (d_p < 1) throw ParameterError("PLoRAConfig: d_p must be >= 1");
  if (!(alpha_r > 0.0)) throw ParameterError(fmt::format("PLoRAConfig: alpha_r must be positive, got {}", alpha_r));
  if (!(init_std > 0.0)) throw ParameterError(fmt::format("PLoRAConfig: init_std must be positive, got {}", init_std));
}

const char* to_string(MergeState state) {
  switch (state) {
    case MergeState::Clean:
      return "clean";
    case MergeState::MergedGeneric:
      return "merged-generic";
    case MergeState::MergedForUser:
      return "merged-user";
  }
  return "unknown";
}

MergeState merge_state_from_string(const std::string& name) {
  if (name == "clean") return MergeState::Clean;
  if (name == "merged-generic") return MergeState::MergedGeneric;
  if (name == "merged-user") return MergeState::MergedForUser;
  throw ParseError(fmt::format("unknown merge state '{}'", name));
}

PLoRALinear::PLoRALinear(const PLoRAConfig& config, Matrix weight, Vector bias, Rng& rng)
    : config_(config), weight_(std::move(weight)), bias_(std::move(bias)) {
  config_.validate();
  if (weight_.rows() != config_.d_in || weight_.cols() != config_.d_out || bias_.size() != config_.d_out) {
    throw DimensionError(fmt::format("PLoRALinear: weight {} / bias {} do not match d_in={} d_out={}",
                                     weight_.shape_string(), bias_.size(), config_.d_in, config_.d_out));
  }
  task_in_ = gaussian_init(config_.d_in, config_.rank, config_.init_std, rng);
  person_in_ = gaussian_init(config_.d_p, config_.rank, config_.init_std, rng);
  out_ = Matrix(config_.rank, config_.d_out);
}

PLoRALinear PLoRALinear::from_parts(const PLoRAConfig& config, Matrix weight, Vector bias, Matrix task_in,
                                    Matrix out, Matrix person_in) {
  config.validate();
  auto expect = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw DimensionError(fmt::format("PLoRALinear::from_parts: {} has shape {}, expected ({}, {})", name,
                                       m.shape_string(), r, c));
    }
  };
  expect(weight, config.d_in, config.d_out, "weight");
  expect(task_in, config.d_in, config.rank, "task_in");
  expect(out, config.rank, config.d_out, "out");
  expect(person_in, config.d_p, config.rank, "person_in");
  if (bias.size() != config.d_out) {
    throw DimensionError(fmt::format("PLoRALinear::from_parts: bias length {} != d_out {}", bias.size(), config.d_out));
  }
  PLoRALinear layer;
  layer.config_ = config;
  layer.weight_ = std::move(weight);
  layer.bias_ = std::move(bias);
  layer.task_in_ = std::move(task_in);
  layer.out_ = std::move(out);
  layer.person_in_ = std::move(person_in);
  return layer;
}

void PLoRALinear::require_clean(const char* op) const {
  if (state_ != MergeState::Clean) {
    throw StateError(fmt::format("PLoRALinear::{}: layer is {}; adapters are folded into W and b", op,
                                 to_string(state_)));
  }
}

void PLoRALinear::check_input(std::size_t h_cols, std::size_t p_cols, const char* op) const {
  if (h_cols != config_.d_in || p_cols != config_.d_p) {
    throw DimensionError(fmt::format("PLoRALinear::{}: got h width {} and p width {}, expected {} and {}", op, h_cols,
                                     p_cols, config_.d_in, config_.d_p));
  }
}

Vector PLoRALinear::forward(const Vector& h, const Vector& p) const {
  require_clean("forward");
  check_input(h.size(), p.size(), "forward");
  Vector mid = vecmat(h, task_in_);
  mid += vecmat(p, person_in_);
  Vector result = affine(h);
  Vector adapter = vecmat(mid, out_);
  const double s = config_.scale();
  for (std::size_t j = 0; j < result.size(); ++j) result[j] += s * adapter[j];
  return result;
}

Matrix PLoRALinear::forward(const Matrix& h, const Matrix& p) const {
  require_clean("forward");
  check_input(h.cols(), p.cols(), "forward");
  if (h.rows() != p.rows()) {
    throw DimensionError(fmt::format("PLoRALinear::forward: {} inputs but {} user rows", h.rows(), p.rows()));
  }
  Matrix mid = matmul(h, task_in_);
  mid += matmul(p, person_in_);
  Matrix result = affine(h);
  Matrix adapter = matmul(mid, out_);
  const double s = config_.scale();
  auto dst = result.values();
  auto src = adapter.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
  return result;
}

Vector PLoRALinear::affine(const Vector& h) const {
  if (h.size() != config_.d_in) {
    throw DimensionError(fmt::format("PLoRALinear::affine: h width {} != d_in {}", h.size(), config_.d_in));
  }
  return vecmat(h, weight_) + bias_;
}

Matrix PLoRALinear::affine(const Matrix& h) const {
  if (h.cols() != config_.d_in) {
    throw DimensionError(fmt::format("PLoRALinear::affine: h width {} != d_in {}", h.cols(), config_.d_in));
  }
  Matrix result = matmul(h, weight_);
  add_row_broadcast(result, bias_);
  return result;
}

LayerGradients PLoRALinear::backward(const Vector& h, const Vector& p, const Vector& upstream,
                                     Vector* grad_h) const {
  require_clean("backward");
  check_input(h.size(), p.size(), "backward");
  if (upstream.size() != config_.d_out) {
    throw DimensionError(fmt::format("PLoRALinear::backward: upstream length {} != d_out {}", upstream.size(),
                                     config_.d_out));
  }
  const double s = config_.scale();
  // d⟨u, h′⟩/d(mid) where mid = h·W_task_in + p·W_person_in.
  Vector d_mid = matvec(out_, upstream);
  d_mid *= s;
  Vector mid = vecmat(h, task_in_);
  mid += vecmat(p, person_in_);

  LayerGradients g;
  g.out = outer(mid, upstream);
  g.out *= s;
  g.task_in = outer(h, d_mid);
  g.person_in = outer(p, d_mid);
  g.p = matvec(person_in_, d_mid);
  if (grad_h != nullptr) {
    *grad_h = matvec(weight_, upstream);
    *grad_h += matvec(task_in_, d_mid);
  }
  return g;
}

LayerBatchGradients PLoRALinear::backward(const Matrix& h, const Matrix& p, const Matrix& upstream) const {
  require_clean("backward");
  check_input(h.cols(), p.cols(), "backward");
  if (h.rows() != p.rows() || upstream.rows() != h.rows() || upstream.cols() != config_.d_out) {
    throw DimensionError(fmt::format("PLoRALinear::backward: h {}, p {}, upstream {} disagree", h.shape_string(),
                                     p.shape_string(), upstream.shape_string()));
  }
  const double s = config_.scale();
  Matrix d_mid = matmul_nt(upstream, out_);
  d_mid *= s;
  Matrix mid = matmul(h, task_in_);
  mid += matmul(p, person_in_);

  LayerBatchGradients g;
  g.out = matmul_tn(mid, upstream);
  g.out *= s;
  g.task_in = matmul_tn(h, d_mid);
  g.person_in = matmul_tn(p, d_mid);
  g.p = matmul_nt(d_mid, person_in_);
  g.h = matmul_nt(upstream, weight_);
  g.h += matmul_nt(d_mid, task_in_);
  return g;
}

Vector PLoRALinear::user_bias_term(const Vector& p) const {
  if (p.size() != config_.d_p) {
    throw DimensionError(fmt::format("PLoRALinear: embedding length {} != d_p {}", p.size(), config_.d_p));
  }
  Vector term = vecmat(vecmat(p, person_in_), out_);
  term *= config_.scale();
  return term;
}

void PLoRALinear::merge_for_user(const Vector& p, std::string user) {
  require_clean("merge_for_user");
  Vector user_term = user_bias_term(p);
  Matrix delta = matmul(task_in_, out_);
  delta *= config_.scale();
  weight_ += delta;
  bias_ += user_term;
  folded_p_ = p;
  if (p.is_zero()) {
    state_ = MergeState::MergedGeneric;
    merged_user_.clear();
  } else {
    state_ = MergeState::MergedForUser;
    merged_user_ = std::move(user);
  }
}

void PLoRALinear::unmerge() {
  if (state_ == MergeState::Clean) throw StateError("PLoRALinear::unmerge: layer is not merged");
  Matrix delta = matmul(task_in_, out_);
  delta *= config_.scale();
  weight_ -= delta;
  bias_ -= user_bias_term(folded_p_);
  state_ = MergeState::Clean;
  merged_user_.clear();
  folded_p_ = Vector();
}

void PLoRALinear::switch_user(const Vector& from_p, const Vector& to_p, std::string to_user) {
  if (state_ == MergeState::Clean) throw StateError("PLoRALinear::switch_user: layer is not merged");
  if (from_p != folded_p_) {
    throw StateError("PLoRALinear::switch_user: `from` embedding is not the one folded into the bias");
  }
  bias_ -= user_bias_term(from_p);
  bias_ += user_bias_term(to_p);
  folded_p_ = to_p;
  if (to_p.is_zero()) {
    state_ = MergeState::MergedGeneric;
    merged_user_.clear();
  } else {
    state_ = MergeState::MergedForUser;
    merged_user_ = std::move(to_user);
  }
}

void PLoRALinear::restore_merge_state(MergeState state, std::string user, Vector folded) {
  if (state != MergeState::Clean && folded.size() != config_.d_p) {
    throw DimensionError(
        fmt::format("PLoRALinear::restore_merge_state: folded embedding length {} != d_p {}", folded.size(),
                    config_.d_p));
  }
  state_ = state;
  merged_user_ = state == MergeState::MergedForUser ? std::move(user) : std::string();
  folded_p_ = state == MergeState::Clean ? Vector() : std::move(folded);
}

std::size_t PLoRALinear::count_trainable() const {
  return config_.d_in * config_.rank + config_.rank * config_.d_out + config_.d_p * config_.rank;
}

}  // namespace plora
