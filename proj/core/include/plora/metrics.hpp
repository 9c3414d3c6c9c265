// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

namespace plora {

struct MetricReport {
  double acc = 0.0;
  /// Mean squared difference of class indices.
  double mse = 0.0;
  double macro_f1 = 0.0;
  double tp_ratio = 0.0;
  std::size_t n = 0;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// Macro-F1 averages per-class F1 = 2tp / (2tp + fp + fn) over classes that occur in
/// either the predictions or the golds. Throws InputError on empty or mismatched input.
MetricReport compute_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> golds,
                             std::size_t trainable = 0, std::size_t total_params = 0);

}  // namespace plora
