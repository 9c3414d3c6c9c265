// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "plora/datagen.hpp"
#include "plora/encoder.hpp"
#include "plora/metrics.hpp"
#include "plora/objectives.hpp"
#include "plora/optimizer.hpp"
#include "plora/user_space.hpp"

namespace plora {

enum class Regime { FullShot, FewShot, TwoStage, LoRAOnly, PKIOnly };

/// CLI spellings: full, fewshot, 2s, lora, pki.
const char* to_string(Regime regime);
Regime regime_from_string(const std::string& name);

struct RunConfig {
  Regime regime = Regime::FullShot;
  /// PDropout ratio.
  double omega = 0.2;
  /// MIM weight.
  double alpha = 2.5;
  MIMKind mim_kind = MIMKind::MSE;
  MIMPairing mim_pairing = MIMPairing::Pooled;
  bool teacher_stop_grad = false;
  OptimConfig optim{};
  /// Optimizer for the per-user embedding fits.
  OptimConfig fewshot_optim{.lr = 1e-2, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.0, .patience = 0};
  std::size_t epochs = 10;
  std::size_t fewshot_epochs = 30;
  std::size_t batch_size = 16;
  std::size_t fewshot_k = 15;
  std::uint64_t seed = 1;
  std::string checkpoint_path;
  std::string log_path;

  /// Throws ConfigError.
  void validate() const;
};

/// Receives one machine-parseable `key=value ...` line per event.
using LogSink = std::function<void(const std::string&)>;

struct TrainResult {
  std::vector<std::string> log;
  std::vector<double> dev_acc;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  /// Samples whose embedding PDropout replaced by the anonymous one, over all epochs.
  std::size_t masked = 0;
  /// Samples seen, over all epochs.
  std::size_t seen = 0;
  /// Optimizer state after the last full-shot step.
  OptimState optim;
};

/// Puts the adapters in the shape a regime expects before its first step.
/// PKIOnly zeroes W_task_in and gives W_out a Gaussian start so the user path can
/// learn (p = 0 still makes the layer an exact no-op).
void prepare_for_regime(EncoderModel& model, Regime regime, std::uint64_t seed, double init_std);

/// Full-shot learning on D^A (regimes FullShot, LoRAOnly, PKIOnly; TwoStage runs it with ω = 1).
/// Restores the parameters of the epoch with the best dev Acc before returning.
TrainResult train_fullshot(EncoderModel& model, UserRegistry& registry, const Dataset& train, const Dataset& dev,
                           const RunConfig& config, const LogSink& sink = {});

/// Fits only the embeddings of users in `train`, each with its own optimizer state.
/// Users listed in `register_users` (and every user in `train`) are registered with a
/// zero embedding if unknown. The model is never modified.
/// Throws DataError if `train` is non-empty and a listed user has no sample in it.
TrainResult train_fewshot(const EncoderModel& model, UserRegistry& registry, const Dataset& train,
                          const RunConfig& config, std::span<const UserId> register_users = {},
                          const LogSink& sink = {});

/// Stage 1: generic full-shot on D^A with ω = 1. Stage 2: few-shot fits on `fewshot_train`.
TrainResult train_twostage(EncoderModel& model, UserRegistry& registry, const Dataset& train_a, const Dataset& dev_a,
                           const Dataset& fewshot_train, const RunConfig& config,
                           std::span<const UserId> register_users = {}, const LogSink& sink = {});

enum class EvalMode { Personalized, ZeroShot, Merged };

const char* to_string(EvalMode mode);
EvalMode eval_mode_from_string(const std::string& name);

struct ParamCounts {
  std::size_t trainable = 0;
  std::size_t total = 0;
};

/// Trainable parameters of a regime, user embeddings included; total counts every
/// parameter present (frozen backbone, adapters, head, embedding table).
ParamCounts count_params(const EncoderModel& model, const UserRegistry& registry, Regime regime);

/// Predictions for `data` under a mode. Merged mode keeps only the samples of
/// `merged_user` and folds that user's embedding in (or uses the model as is when it
/// is already merged for that user).
struct Predictions {
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> gold;
};
Predictions predict_all(const EncoderModel& model, const UserRegistry& registry, const Dataset& data, EvalMode mode,
                        const std::optional<UserId>& merged_user = std::nullopt);

/// Throws RegistryError for an unknown user in personalized or merged mode.
MetricReport evaluate(const EncoderModel& model, const UserRegistry& registry, const Dataset& data, EvalMode mode,
                      Regime regime, const std::optional<UserId>& merged_user = std::nullopt);

}  // namespace plora
