// SPDX-License-Identifier: Apache-2.0
#include "plora/metrics.hpp"

#include <algorithm>
#include <vector>

#include <fmt/format.h>

#include "plora/errors.hpp"

namespace plora {

MetricReport compute_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> golds,
                             std::size_t trainable, std::size_t total_params) {
  if (predictions.size() != golds.size()) {
    throw InputError(fmt::format("compute_metrics: {} predictions vs {} golds", predictions.size(), golds.size()));
  }
  if (golds.empty()) throw InputError("compute_metrics: empty input");
  if (trainable > total_params) {
    throw InputError(fmt::format("compute_metrics: trainable {} exceeds total {}", trainable, total_params));
  }

  std::size_t n_classes = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) n_classes = std::max({n_classes, golds[i] + 1, predictions[i] + 1});
  std::vector<std::size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);

  std::size_t correct = 0;
  double sq = 0.0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const std::size_t p = predictions[i];
    const std::size_t g = golds[i];
    if (p == g) {
      ++correct;
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
    const double d = static_cast<double>(p) - static_cast<double>(g);
    sq += d * d;
  }

  double f1_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    f1_sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++present;
  }

  MetricReport report;
  report.n = golds.size();
  report.acc = static_cast<double>(correct) / static_cast<double>(report.n);
  report.mse = sq / static_cast<double>(report.n);
  report.macro_f1 = f1_sum / static_cast<double>(present);
  report.tp_ratio = total_params == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total_params);
  return report;
}

}  // namespace plora
