// SPDX-License-Identifier: Apache-2.0
#include "plora/trainer.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "plora/errors.hpp"

namespace plora {

namespace {

struct Trainables {
  bool task_in = true;
  bool out = true;
  bool person_in = true;
  bool users = true;
};

Trainables trainables_of(Regime regime) {
  switch (regime) {
    case Regime::LoRAOnly:
      return {.task_in = true, .out = true, .person_in = false, .users = false};
    case Regime::PKIOnly:
      return {.task_in = false, .out = true, .person_in = true, .users = true};
    default:
      return {};
  }
}

std::string slot_prefix(std::size_t index) { return fmt::format("block{}.{}", index / 2, index % 2 == 0 ? "q" : "v"); }

void emit(TrainResult& result, const LogSink& sink, std::string line) {
  if (sink) sink(line);
  result.log.push_back(std::move(line));
}

void check_registry(const EncoderModel& model, const UserRegistry& registry, const char* op) {
  if (registry.d_p() != model.config().plora.d_p) {
    throw DimensionError(fmt::format("{}: registry d_p {} does not match model d_p {}", op, registry.d_p(),
                                     model.config().plora.d_p));
  }
}

}  // namespace

const char* to_string(Regime regime) {
  switch (regime) {
    case Regime::FullShot: return "full";
    case Regime::FewShot: return "fewshot";
    case Regime::TwoStage: return "2s";
    case Regime::LoRAOnly: return "lora";
    case Regime::PKIOnly: return "pki";
  }
  return "?";
}

Regime regime_from_string(const std::string& name) {
  if (name == "full") return Regime::FullShot;
  if (name == "fewshot") return Regime::FewShot;
  if (name == "2s") return Regime::TwoStage;
  if (name == "lora") return Regime::LoRAOnly;
  if (name == "pki") return Regime::PKIOnly;
  throw ConfigError(fmt::format("unknown regime '{}' (expected full, fewshot, 2s, lora or pki)", name));
}

const char* to_string(EvalMode mode) {
  switch (mode) {
    case EvalMode::Personalized: return "personalized";
    case EvalMode::ZeroShot: return "zero-shot";
    case EvalMode::Merged: return "merged";
  }
  return "?";
}

EvalMode eval_mode_from_string(const std::string& name) {
  if (name == "personalized") return EvalMode::Personalized;
  if (name == "zero-shot") return EvalMode::ZeroShot;
  if (name == "merged") return EvalMode::Merged;
  throw ConfigError(fmt::format("unknown eval mode '{}' (expected personalized, zero-shot or merged)", name));
}

void RunConfig::validate() const {
  if (!(omega >= 0.0 && omega <= 1.0)) throw ConfigError(fmt::format("omega must lie in [0, 1], got {}", omega));
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError(fmt::format("alpha must be >= 0, got {}", alpha));
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (fewshot_epochs == 0) throw ConfigError("fewshot_epochs must be >= 1");
  try {
    optim.validate();
    fewshot_optim.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

void prepare_for_regime(EncoderModel& model, Regime regime, std::uint64_t seed, double init_std) {
  if (regime != Regime::PKIOnly) return;
  const Rng base(seed);
  for (std::size_t i = 0; i < model.n_plora(); ++i) {
    PLoRALinear& layer = model.plora(i);
    layer.task_in() = Matrix(layer.task_in().rows(), layer.task_in().cols());
    if (max_abs(layer.out().values()) == 0.0) {
      Rng rng = base.fork(0x706b6900 + i);
      layer.out() = gaussian_init(layer.out().rows(), layer.out().cols(), init_std, rng);
    }
  }
}

TrainResult train_fullshot(EncoderModel& model, UserRegistry& registry, const Dataset& train, const Dataset& dev,
                           const RunConfig& config, const LogSink& sink) {
  config.validate();
  if (config.regime == Regime::FewShot) throw ConfigError("train_fullshot: the fewshot regime uses train_fewshot");
  if (train.empty()) throw DataError("train_fullshot: empty training set");
  if (model.merge_state() != MergeState::Clean) throw StateError("train_fullshot: model must be unmerged");
  check_registry(model, registry, "train_fullshot");

  const Regime regime = config.regime;
  const Trainables trainable = trainables_of(regime);
  const bool personal = trainable.users;
  const std::size_t d_p = registry.d_p();
  prepare_for_regime(model, regime, config.seed, model.config().plora.init_std);

  if (personal) {
    for (const auto& s : train) registry.lookup_or_register(s.user, true);
    for (const auto& s : dev) registry.lookup_or_register(s.user, true);
  }
  // Users present in the registry but outside this training set stay untouched.
  std::vector<std::size_t> user_rows;
  std::vector<std::string> user_slot_names;
  if (personal) {
    std::set<std::string> seen;
    for (const auto& s : train) {
      if (seen.insert(s.user.str()).second && registry.trainable(s.user)) {
        user_rows.push_back(registry.index_of(s.user));
        user_slot_names.push_back("user." + s.user.str());
      }
    }
  }

  ObjectiveConfig objective{.alpha = personal ? config.alpha : 0.0,
                            .kind = config.mim_kind,
                            .pairing = config.mim_pairing,
                            .teacher_stop_grad = config.teacher_stop_grad};
  const PDropoutConfig pdrop{.omega = config.omega, .seed = config.seed};
  const EvalMode dev_mode = personal ? EvalMode::Personalized : EvalMode::ZeroShot;
  const Vector zero_p(d_p);

  TrainResult result;
  OptimState state;
  EncoderModel best_model = model;
  UserRegistry best_registry = registry;
  double best_acc = -1.0;
  const Rng base(config.seed);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng = base.fork(epoch);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));

    double sum_total = 0.0, sum_ce = 0.0, sum_mim = 0.0;
    std::size_t masked_epoch = 0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<UserId> batch_users;
      for (std::size_t j = start; j < end; ++j) batch_users.push_back(train[order[j]].user);
      std::vector<UserMask> masks(batch_users.size(), UserMask::Keep);
      if (personal) masks = pdropout_mask(batch_users, pdrop, rng);

      ModelGradients grads = model.zero_gradients();
      Matrix user_grads(registry.size(), d_p);
      for (std::size_t j = start; j < end; ++j) {
        const Sample& s = train[order[j]];
        const bool masked = personal && masks[j - start] == UserMask::Mask;
        masked_epoch += masked ? 1 : 0;
        const Vector p = personal && !masked ? registry.lookup(s.user) : zero_p;
        const ForwardTrace trace = model.forward(s.tokens, p);

        ModelGradients g;
        FullShotLoss loss;
        if (personal && !masked && objective.alpha > 0.0) {
          const ForwardTrace generic = model.forward(s.tokens, zero_p);
          loss = fullshot_loss(trace, &generic, s.label, objective);
          g = model.backward(trace, loss.personal_seeds);
          ModelGradients g_generic = model.backward(generic, loss.generic_seeds);
          // The anonymous embedding is a constant, not a parameter.
          g_generic.p = Vector(d_p);
          g += g_generic;
        } else {
          loss = fullshot_loss(trace, nullptr, s.label, objective);
          g = model.backward(trace, loss.personal_seeds);
        }
        if (!std::isfinite(loss.report.total)) {
          throw NumericError(fmt::format("train_fullshot: non-finite loss at epoch {}", epoch));
        }
        sum_total += loss.report.total;
        sum_ce += loss.report.ce;
        sum_mim += loss.report.mim;
        if (personal && !masked) {
          const std::size_t row = registry.index_of(s.user);
          for (std::size_t c = 0; c < d_p; ++c) user_grads(row, c) += g.p[c];
        }
        grads += g;
      }

      const double inv = 1.0 / static_cast<double>(end - start);
      grads *= inv;
      user_grads *= inv;

      std::vector<ParamSlot> slots;
      for (std::size_t i = 0; i < model.n_plora(); ++i) {
        PLoRALinear& layer = model.plora(i);
        const std::string prefix = slot_prefix(i);
        if (trainable.task_in) slots.push_back({prefix + ".task_in", layer.task_in().values(), grads.adapters[i].task_in.values()});
        if (trainable.out) slots.push_back({prefix + ".out", layer.out().values(), grads.adapters[i].out.values()});
        if (trainable.person_in) {
          slots.push_back({prefix + ".person_in", layer.person_in().values(), grads.adapters[i].person_in.values()});
        }
      }
      slots.push_back({"head.weight", model.head_weight().values(), grads.head_weight.values()});
      slots.push_back({"head.bias", model.head_bias().values(), grads.head_bias.values()});
      for (std::size_t u = 0; u < user_rows.size(); ++u) {
        slots.push_back({user_slot_names[u], registry.table().row(user_rows[u]), user_grads.row(user_rows[u])});
      }
      adamw_step(slots, state, config.optim);
      model.mark_modified();
    }

    result.masked += masked_epoch;
    result.seen += train.size();
    ++result.epochs_run;
    const double n = static_cast<double>(train.size());
    if (dev.empty()) {
      emit(result, sink,
           fmt::format("event=epoch regime={} epoch={} split=train loss={:.6f} ce={:.6f} mim={:.6f} masked={} seen={}",
                       to_string(regime), epoch, sum_total / n, sum_ce / n, sum_mim / n, masked_epoch, train.size()));
      best_model = model;
      best_registry = registry;
      result.best_epoch = epoch;
      continue;
    }
    const MetricReport report = evaluate(model, registry, dev, dev_mode, regime);
    result.dev_acc.push_back(report.acc);
    emit(result, sink,
         fmt::format("event=epoch regime={} epoch={} split=dev acc={:.6f} mse={:.6f} f1={:.6f} loss={:.6f} ce={:.6f} "
                     "mim={:.6f} masked={} seen={}",
                     to_string(regime), epoch, report.acc, report.mse, report.macro_f1, sum_total / n, sum_ce / n,
                     sum_mim / n, masked_epoch, train.size()));
    if (report.acc > best_acc) {
      best_acc = report.acc;
      best_model = model;
      best_registry = registry;
      result.best_epoch = epoch;
    }
    if (early_stop(result.dev_acc, config.optim.patience) == StopDecision::Stop) {
      emit(result, sink, fmt::format("event=early_stop epoch={} best_epoch={}", epoch, result.best_epoch));
      break;
    }
  }

  result.optim = std::move(state);
  model = std::move(best_model);
  model.mark_modified();
  registry = std::move(best_registry);
  emit(result, sink,
       fmt::format("event=done regime={} epochs={} best_epoch={} best_dev_acc={:.6f} masked={} seen={}",
                   to_string(regime), result.epochs_run, result.best_epoch, best_acc < 0.0 ? 0.0 : best_acc,
                   result.masked, result.seen));
  return result;
}

TrainResult train_fewshot(const EncoderModel& model, UserRegistry& registry, const Dataset& train,
                          const RunConfig& config, std::span<const UserId> register_users, const LogSink& sink) {
  config.validate();
  if (model.merge_state() != MergeState::Clean) throw StateError("train_fewshot: model must be unmerged");
  check_registry(model, registry, "train_fewshot");

  const std::vector<UserId> train_users = users_of(train);
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < train.size(); ++i) by_user[train[i].user.str()].push_back(i);
  if (!train.empty()) {
    for (const auto& u : register_users) {
      if (!by_user.contains(u.str())) {
        throw DataError(fmt::format("train_fewshot: user '{}' has no few-shot samples", u.str()));
      }
    }
  }
  for (const auto& u : register_users) registry.lookup_or_register(u, true);
  for (const auto& u : train_users) registry.lookup_or_register(u, true);
  registry.set_all_trainable(false);
  for (const auto& u : train_users) registry.set_trainable(u, true);

  TrainResult result;
  const Rng base(config.seed);
  for (std::size_t ui = 0; ui < train_users.size(); ++ui) {
    const UserId& user = train_users[ui];
    std::vector<std::size_t> idx = by_user[user.str()];
    Rng rng = base.fork(0x66657700 + ui);
    OptimState state;
    double first_loss = 0.0, last_loss = 0.0;
    for (std::size_t epoch = 1; epoch <= config.fewshot_epochs; ++epoch) {
      rng.shuffle(std::span<std::size_t>(idx));
      double epoch_loss = 0.0;
      for (std::size_t start = 0; start < idx.size(); start += config.batch_size) {
        const std::size_t end = std::min(idx.size(), start + config.batch_size);
        const Vector p = registry.lookup(user);
        Vector grad(registry.d_p());
        for (std::size_t j = start; j < end; ++j) {
          const Sample& s = train[idx[j]];
          const ForwardTrace trace = model.forward(s.tokens, p);
          const CrossEntropy ce = cross_entropy(trace.logits, s.label);
          if (!std::isfinite(ce.loss)) throw NumericError(fmt::format("train_fewshot: non-finite loss for '{}'", user.str()));
          epoch_loss += ce.loss;
          BackwardSeeds seeds;
          seeds.d_logits = ce.grad;
          grad += model.backward(trace, seeds).p;
        }
        grad *= 1.0 / static_cast<double>(end - start);
        const ParamSlot slot{"p", registry.embedding(user), grad.values()};
        adamw_step(std::span<const ParamSlot>(&slot, 1), state, config.fewshot_optim);
      }
      epoch_loss /= static_cast<double>(idx.size());
      if (epoch == 1) first_loss = epoch_loss;
      last_loss = epoch_loss;
      result.seen += idx.size();
    }
    result.epochs_run = config.fewshot_epochs;
    emit(result, sink,
         fmt::format("event=fewshot user={} samples={} epochs={} loss_first={:.6f} loss_last={:.6f} p_norm={:.6f}",
                     user.str(), idx.size(), config.fewshot_epochs, first_loss, last_loss,
                     l2_norm(registry.lookup(user))));
  }
  emit(result, sink,
       fmt::format("event=fewshot_done users={} samples={}", train_users.size(), train.size()));
  return result;
}

TrainResult train_twostage(EncoderModel& model, UserRegistry& registry, const Dataset& train_a, const Dataset& dev_a,
                           const Dataset& fewshot_train, const RunConfig& config,
                           std::span<const UserId> register_users, const LogSink& sink) {
  RunConfig stage1 = config;
  stage1.regime = Regime::TwoStage;
  stage1.omega = 1.0;
  TrainResult first = train_fullshot(model, registry, train_a, dev_a, stage1, sink);
  TrainResult second = train_fewshot(model, registry, fewshot_train, config, register_users, sink);
  first.log.insert(first.log.end(), second.log.begin(), second.log.end());
  first.seen += second.seen;
  return first;
}

ParamCounts count_params(const EncoderModel& model, const UserRegistry& registry, Regime regime) {
  std::size_t task_in = 0, out = 0, person_in = 0;
  for (std::size_t i = 0; i < model.n_plora(); ++i) {
    task_in += model.plora(i).task_in().size();
    out += model.plora(i).out().size();
    person_in += model.plora(i).person_in().size();
  }
  const std::size_t head = model.count_head_params();
  const std::size_t users = registry.count_trainable();

  ParamCounts counts;
  counts.total = model.count_frozen() + model.count_adapter_params() + head + registry.count_total();
  switch (regime) {
    case Regime::FullShot:
    case Regime::TwoStage:
      counts.trainable = task_in + out + person_in + head + users;
      break;
    case Regime::LoRAOnly:
      counts.trainable = task_in + out + head;
      break;
    case Regime::PKIOnly:
      counts.trainable = out + person_in + head + users;
      break;
    case Regime::FewShot:
      counts.trainable = users;
      break;
  }
  return counts;
}

Predictions predict_all(const EncoderModel& model, const UserRegistry& registry, const Dataset& data, EvalMode mode,
                        const std::optional<UserId>& merged_user) {
  Predictions out;
  const Vector zero_p(model.config().plora.d_p);
  if (mode == EvalMode::Merged) {
    if (!merged_user) throw InputError("evaluate: merged mode needs a user");
    const Vector p = registry.lookup(*merged_user);
    EncoderModel folded = model;
    if (folded.merge_state() == MergeState::Clean) {
      folded.merge_for_user(p, merged_user->str());
    } else if (folded.merged_user() != merged_user->str()) {
      folded.switch_user(folded.plora(0).folded_embedding(), p, merged_user->str());
    }
    for (const auto& s : data) {
      if (s.user != *merged_user) continue;
      out.predicted.push_back(folded.predict(s.tokens, zero_p));
      out.gold.push_back(s.label);
    }
    if (out.gold.empty()) throw DataError(fmt::format("evaluate: no samples for user '{}'", merged_user->str()));
    return out;
  }

  if (model.merge_state() != MergeState::Clean) {
    throw StateError(fmt::format("evaluate: {} mode needs an unmerged model", to_string(mode)));
  }
  out.predicted.reserve(data.size());
  out.gold.reserve(data.size());
  for (const auto& s : data) {
    const Vector p = mode == EvalMode::Personalized ? registry.lookup(s.user) : zero_p;
    out.predicted.push_back(model.predict(s.tokens, p));
    out.gold.push_back(s.label);
  }
  return out;
}

MetricReport evaluate(const EncoderModel& model, const UserRegistry& registry, const Dataset& data, EvalMode mode,
                      Regime regime, const std::optional<UserId>& merged_user) {
  const Predictions preds = predict_all(model, registry, data, mode, merged_user);
  const ParamCounts counts = count_params(model, registry, regime);
  return compute_metrics(preds.predicted, preds.gold, counts.trainable, counts.total);
}

}  // namespace plora
