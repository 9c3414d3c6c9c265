// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace plora {

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Early-stopping patience in epochs.
  std::size_t patience = 5;

  void validate() const;
};

/// One trainable tensor as seen by the optimizer.
struct ParamSlot {
  std::string name;
  std::span<double> value;
  std::span<const double> grad;
};

struct Moments {
  std::vector<double> m;
  std::vector<double> v;

  friend bool operator==(const Moments&, const Moments&) = default;
};

/// Per-parameter moments keyed by slot name plus the shared step counter.
struct OptimState {
  std::uint64_t step = 0;
  std::map<std::string, Moments> moments;

  friend bool operator==(const OptimState&, const OptimState&) = default;
};

/// AdamW with decoupled weight decay:
///   θ ← θ·(1 − lr·wd)
///   m ← β1·m + (1 − β1)·g,  v ← β2·v + (1 − β2)·g²
///   θ ← θ − lr · m̂ / (√v̂ + ε),  m̂ = m/(1 − β1ᵗ), v̂ = v/(1 − β2ᵗ)
/// Throws NumericError naming the slot if a gradient is not finite.
void adamw_step(std::span<const ParamSlot> params, OptimState& state, const OptimConfig& config);

enum class StopDecision { Continue, Stop };

/// Stop once the best monitored value is `patience` or more epochs old. patience 0 never stops.
StopDecision early_stop(std::span<const double> history, std::size_t patience);

}  // namespace plora
