// SPDX-License-Identifier: Apache-2.0
#include "plora/optimizer.hpp"

#include <cmath>

#include <fmt/format.h>

#include "plora/errors.hpp"

namespace plora {

void OptimConfig::validate() const {
  if (!(lr > 0.0)) throw ParameterError(fmt::format("OptimConfig: lr must be positive, got {}", lr));
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ParameterError(fmt::format("OptimConfig: betas must lie in (0, 1), got {} and {}", beta1, beta2));
  }
  if (!(eps > 0.0)) throw ParameterError("OptimConfig: eps must be positive");
  if (!(weight_decay >= 0.0)) throw ParameterError("OptimConfig: weight_decay must be >= 0");
}

void adamw_step(std::span<const ParamSlot> params, OptimState& state, const OptimConfig& config) {
  config.validate();
  for (const auto& slot : params) {
    if (slot.value.size() != slot.grad.size()) {
      throw DimensionError(fmt::format("adamw_step: '{}' has {} values but {} gradients", slot.name, slot.value.size(),
                                       slot.grad.size()));
    }
    for (double g : slot.grad) {
      if (!std::isfinite(g)) throw NumericError(fmt::format("adamw_step: non-finite gradient for '{}'", slot.name));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  const double decay = 1.0 - config.lr * config.weight_decay;

  for (const auto& slot : params) {
    Moments& mom = state.moments[slot.name];
    if (mom.m.empty()) {
      mom.m.assign(slot.value.size(), 0.0);
      mom.v.assign(slot.value.size(), 0.0);
    } else if (mom.m.size() != slot.value.size()) {
      throw DimensionError(fmt::format("adamw_step: '{}' changed size from {} to {}", slot.name, mom.m.size(),
                                       slot.value.size()));
    }
    for (std::size_t i = 0; i < slot.value.size(); ++i) {
      const double g = slot.grad[i];
      mom.m[i] = config.beta1 * mom.m[i] + (1.0 - config.beta1) * g;
      mom.v[i] = config.beta2 * mom.v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = mom.m[i] / bias1;
      const double v_hat = mom.v[i] / bias2;
      slot.value[i] = slot.value[i] * decay - config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

StopDecision early_stop(std::span<const double> history, std::size_t patience) {
  if (history.empty() || patience == 0) return StopDecision::Continue;
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] > history[best]) best = i;
  }
  const std::size_t since_best = history.size() - 1 - best;
  return since_best >= patience ? StopDecision::Stop : StopDecision::Continue;
}

}  // namespace plora
