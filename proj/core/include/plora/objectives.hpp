// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "plora/encoder.hpp"
#include "plora/linalg.hpp"

namespace plora {

enum class MIMKind { MSE, KL };

const char* to_string(MIMKind kind);
MIMKind mim_kind_from_string(const std::string& name);

/// Which (generic, personal) representation pairs enter the MIM sum.
enum class MIMPairing {
  Pooled,  ///< the pooled final representation only
  All,     ///< pooled representation plus every PLoRA block output
};

const char* to_string(MIMPairing pairing);
MIMPairing mim_pairing_from_string(const std::string& name);

struct CrossEntropy {
  double loss = 0.0;
  Vector grad;  // softmax(logits) − onehot(y)
};

/// −log softmax(logits)[y]. Throws InputError if y >= logits.size().
CrossEntropy cross_entropy(const Vector& logits, std::size_t label);

struct MIMResult {
  double value = 0.0;
  Vector grad_generic;   // ∂/∂h̃′
  Vector grad_personal;  // ∂/∂h′; zero when the teacher is stop-gradient
};

/// Distance between the generic representation h̃′ and the personal one h′.
///   MSE: mean((h̃′ − h′)²)
///   KL:  KL(softmax(h′) ‖ softmax(h̃′)), the personal side acting as reference.
/// teacher_stop_grad blocks the gradient into h′.
MIMResult mim(const Vector& h_generic, const Vector& h_personal, MIMKind kind, bool teacher_stop_grad = false);

/// Matrix form (block outputs); MSE averages over all entries, KL is applied row-wise and averaged over rows.
struct MIMMatrixResult {
  double value = 0.0;
  Matrix grad_generic;
  Matrix grad_personal;
};
MIMMatrixResult mim(const Matrix& h_generic, const Matrix& h_personal, MIMKind kind, bool teacher_stop_grad = false);

struct LossReport {
  double total = 0.0;
  double ce = 0.0;
  double mim = 0.0;
  double alpha = 0.0;
};

struct ObjectiveConfig {
  double alpha = 0.0;
  MIMKind kind = MIMKind::MSE;
  MIMPairing pairing = MIMPairing::Pooled;
  bool teacher_stop_grad = false;
};

/// Loss of one sample plus the backward seeds for each trace.
struct FullShotLoss {
  LossReport report;
  BackwardSeeds personal_seeds;
  /// Empty d_logits when the generic trace receives no gradient.
  BackwardSeeds generic_seeds;
};

/// total = CE(trace_personal, y) + alpha · Σ MIM(h̃′, h′).
/// trace_personal is the PDropout-routed trace (p = 0 when masked); trace_generic
/// is the same input with p = 0. Pass trace_generic == nullptr when the sample
/// was masked: both traces coincide and MIM is zero.
FullShotLoss fullshot_loss(const ForwardTrace& trace_personal, const ForwardTrace* trace_generic, std::size_t label,
                           const ObjectiveConfig& config);

}  // namespace plora
