// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "plora/linalg.hpp"

namespace plora {

struct PLoRAConfig {
  std::size_t d_in = 32;
  std::size_t d_out = 32;
  std::size_t rank = 4;
  std::size_t d_p = 8;
  /// Numerator of the adapter scale; the combined adapter term is multiplied by alpha_r / rank.
  double alpha_r = 8.0;
  /// Std of the Gaussian init of the two input factors.
  double init_std = 0.02;

  double scale() const { return alpha_r / static_cast<double>(rank); }
  /// Throws ParameterError unless 1 <= rank < min(d_in, d_out), d_p >= 1, alpha_r > 0, init_std > 0.
  void validate() const;
};

enum class MergeState { Clean, MergedGeneric, MergedForUser };

const char* to_string(MergeState state);
MergeState merge_state_from_string(const std::string& name);

/// Gradients of ⟨upstream, h′⟩ for one input row.
struct LayerGradients {
  Matrix task_in;    // d_in × r
  Matrix out;        // r × d_out, shared output factor
  Matrix person_in;  // d_p × r
  Vector p;          // d_p
};

/// Gradients summed over a batch of rows; per-row input gradients kept separately.
struct LayerBatchGradients {
  Matrix task_in;
  Matrix out;
  Matrix person_in;
  Matrix p;  // n × d_p, one row per input row
  Matrix h;  // n × d_in
};

/// Frozen projector (W, b) with a task low-rank path and a user-injection path
/// that share one output factor:
///
///   h′ = hW + b + s·(h·W_task_in + p·W_person_in)·W_out,   s = alpha_r / rank
///
/// W_out starts at zero, so a fresh layer computes exactly hW + b for any (h, p).
/// merge_for_user folds the adapter into W and the user term into b; while folded,
/// only affine() is meaningful.
class PLoRALinear {
 public:
  PLoRALinear() = default;
  /// Plug-and-play init: input factors Gaussian(init_std), W_out zero.
  PLoRALinear(const PLoRAConfig& config, Matrix weight, Vector bias, Rng& rng);
  /// Rebuilds a layer from stored tensors (checkpoint load, tests). Starts Clean.
  static PLoRALinear from_parts(const PLoRAConfig& config, Matrix weight, Vector bias, Matrix task_in, Matrix out,
                                Matrix person_in);

  const PLoRAConfig& config() const { return config_; }
  const Matrix& weight() const { return weight_; }
  const Vector& bias() const { return bias_; }
  const Matrix& task_in() const { return task_in_; }
  const Matrix& out() const { return out_; }
  const Matrix& person_in() const { return person_in_; }
  Matrix& task_in() { return task_in_; }
  Matrix& out() { return out_; }
  Matrix& person_in() { return person_in_; }

  MergeState merge_state() const { return state_; }
  const std::string& merged_user() const { return merged_user_; }
  const Vector& folded_embedding() const { return folded_p_; }

  Vector forward(const Vector& h, const Vector& p) const;
  /// Row-wise forward: row i of the result uses h.row(i) and p.row(i).
  Matrix forward(const Matrix& h, const Matrix& p) const;
  /// Plain hW + b, valid in every merge state.
  Vector affine(const Vector& h) const;
  Matrix affine(const Matrix& h) const;

  LayerGradients backward(const Vector& h, const Vector& p, const Vector& upstream, Vector* grad_h = nullptr) const;
  LayerBatchGradients backward(const Matrix& h, const Matrix& p, const Matrix& upstream) const;

  void merge_for_user(const Vector& p, std::string user = {});
  /// Subtracts the folded terms again. Exact up to rounding.
  void unmerge();
  /// Re-targets the folded bias from `from_p` (must equal the folded embedding) to `to_p`.
  void switch_user(const Vector& from_p, const Vector& to_p, std::string to_user = {});
  /// Marks stored (already folded) tensors as merged; used when loading checkpoints.
  void restore_merge_state(MergeState state, std::string user, Vector folded);

  /// d_in·r + r·d_out + d_p·r; the shared output factor is counted once.
  std::size_t count_trainable() const;
  std::size_t count_frozen() const { return weight_.size() + bias_.size(); }

 private:
  void require_clean(const char* op) const;
  void check_input(std::size_t h_cols, std::size_t p_cols, const char* op) const;
  /// s·(p·W_person_in)·W_out
  Vector user_bias_term(const Vector& p) const;

  PLoRAConfig config_;
  Matrix weight_;
  Vector bias_;
  Matrix task_in_;
  Matrix out_;
  Matrix person_in_;
  MergeState state_ = MergeState::Clean;
  std::string merged_user_;
  Vector folded_p_;
};

}  // namespace plora
