// SPDX-License-Identifier: Apache-2.0
#include "plora/objectives.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "plora/errors.hpp"

namespace plora {

namespace {

std::vector<double> log_softmax(std::span<const double> x) {
  const double peak = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (double v : x) total += std::exp(v - peak);
  const double lse = peak + std::log(total);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

/// KL(softmax(personal) ‖ softmax(generic)) for one row, writing gradients into the spans.
double kl_row(std::span<const double> generic, std::span<const double> personal, std::span<double> g_generic,
              std::span<double> g_personal, double weight) {
  const auto log_p = log_softmax(personal);
  const auto log_q = log_softmax(generic);
  double kl = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) kl += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    const double p = std::exp(log_p[i]);
    const double q = std::exp(log_q[i]);
    g_generic[i] = weight * (q - p);
    g_personal[i] = weight * p * ((log_p[i] - log_q[i]) - kl);
  }
  return kl;
}

}  // namespace

const char* to_string(MIMKind kind) { return kind == MIMKind::MSE ? "mse" : "kl"; }

MIMKind mim_kind_from_string(const std::string& name) {
  if (name == "mse" || name == "MSE") return MIMKind::MSE;
  if (name == "kl" || name == "KL") return MIMKind::KL;
  throw ConfigError(fmt::format("unknown MIM kind '{}' (expected mse or kl)", name));
}

const char* to_string(MIMPairing pairing) { return pairing == MIMPairing::Pooled ? "pooled" : "all"; }

MIMPairing mim_pairing_from_string(const std::string& name) {
  if (name == "pooled") return MIMPairing::Pooled;
  if (name == "all") return MIMPairing::All;
  throw ConfigError(fmt::format("unknown MIM pairing '{}' (expected pooled or all)", name));
}

CrossEntropy cross_entropy(const Vector& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw InputError(fmt::format("cross_entropy: class {} out of range for {} logits", label, logits.size()));
  }
  const auto log_probs = log_softmax(logits.values());
  CrossEntropy ce;
  ce.loss = -log_probs[label];
  ce.grad = Vector(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) ce.grad[i] = std::exp(log_probs[i]);
  ce.grad[label] -= 1.0;
  return ce;
}

MIMResult mim(const Vector& h_generic, const Vector& h_personal, MIMKind kind, bool teacher_stop_grad) {
  if (h_generic.size() != h_personal.size() || h_generic.empty()) {
    throw DimensionError(fmt::format("mim: lengths {} and {} differ or are empty", h_generic.size(), h_personal.size()));
  }
  const std::size_t n = h_generic.size();
  MIMResult r;
  r.grad_generic = Vector(n);
  r.grad_personal = Vector(n);
  if (kind == MIMKind::MSE) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double diff = h_generic[i] - h_personal[i];
      acc += diff * diff;
      r.grad_generic[i] = 2.0 * diff / static_cast<double>(n);
      r.grad_personal[i] = -r.grad_generic[i];
    }
    r.value = acc / static_cast<double>(n);
  } else {
    r.value = kl_row(h_generic.values(), h_personal.values(), r.grad_generic.values(), r.grad_personal.values(), 1.0);
  }
  if (teacher_stop_grad) r.grad_personal = Vector(n);
  return r;
}

MIMMatrixResult mim(const Matrix& h_generic, const Matrix& h_personal, MIMKind kind, bool teacher_stop_grad) {
  if (h_generic.rows() != h_personal.rows() || h_generic.cols() != h_personal.cols() || h_generic.empty()) {
    throw DimensionError(fmt::format("mim: shapes {} and {} differ or are empty", h_generic.shape_string(),
                                     h_personal.shape_string()));
  }
  MIMMatrixResult r;
  r.grad_generic = Matrix(h_generic.rows(), h_generic.cols());
  r.grad_personal = Matrix(h_generic.rows(), h_generic.cols());
  if (kind == MIMKind::MSE) {
    const auto g = h_generic.values();
    const auto p = h_personal.values();
    const double n = static_cast<double>(g.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double diff = g[i] - p[i];
      acc += diff * diff;
      r.grad_generic.values()[i] = 2.0 * diff / n;
      r.grad_personal.values()[i] = -2.0 * diff / n;
    }
    r.value = acc / n;
  } else {
    const double weight = 1.0 / static_cast<double>(h_generic.rows());
    double acc = 0.0;
    for (std::size_t row = 0; row < h_generic.rows(); ++row) {
      acc += kl_row(h_generic.row(row), h_personal.row(row), r.grad_generic.row(row), r.grad_personal.row(row), weight);
    }
    r.value = acc * weight;
  }
  if (teacher_stop_grad) r.grad_personal = Matrix(h_generic.rows(), h_generic.cols());
  return r;
}

FullShotLoss fullshot_loss(const ForwardTrace& trace_personal, const ForwardTrace* trace_generic, std::size_t label,
                           const ObjectiveConfig& config) {
  if (!(config.alpha >= 0.0)) throw ParameterError(fmt::format("fullshot_loss: alpha must be >= 0, got {}", config.alpha));
  FullShotLoss out;
  const CrossEntropy ce = cross_entropy(trace_personal.logits, label);
  out.report.ce = ce.loss;
  out.report.alpha = config.alpha;
  out.personal_seeds.d_logits = ce.grad;

  if (trace_generic != nullptr && trace_generic != &trace_personal) {
    if (trace_generic->tokens != trace_personal.tokens) {
      throw InputError("fullshot_loss: personal and generic traces come from different inputs");
    }
    if (!trace_generic->p.is_zero()) throw InputError("fullshot_loss: generic trace must use the zero embedding");
    if (trace_generic->blocks.size() != trace_personal.blocks.size()) {
      throw InputError("fullshot_loss: traces come from different models");
    }
    const std::size_t n_classes = trace_personal.logits.size();
    out.generic_seeds.d_logits = Vector(n_classes);
    const double a = config.alpha;

    MIMResult pooled = mim(trace_generic->pooled, trace_personal.pooled, config.kind, config.teacher_stop_grad);
    double mim_total = pooled.value;
    out.generic_seeds.d_pooled = pooled.grad_generic * a;
    out.personal_seeds.d_pooled = pooled.grad_personal * a;

    if (config.pairing == MIMPairing::All) {
      const std::size_t blocks = 2 * trace_personal.blocks.size();
      out.generic_seeds.d_plora_outputs.resize(blocks);
      out.personal_seeds.d_plora_outputs.resize(blocks);
      for (std::size_t b = 0; b < blocks; ++b) {
        MIMMatrixResult m =
            mim(trace_generic->plora_output(b), trace_personal.plora_output(b), config.kind, config.teacher_stop_grad);
        mim_total += m.value;
        out.generic_seeds.d_plora_outputs[b] = m.grad_generic * a;
        out.personal_seeds.d_plora_outputs[b] = m.grad_personal * a;
      }
    }
    out.report.mim = mim_total;
  }
  out.report.total = out.report.ce + config.alpha * out.report.mim;
  return out;
}

}  // namespace plora
