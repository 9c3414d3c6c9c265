// SPDX-License-Identifier: Apache-2.0
#include "plora_cli/cli.hpp"

#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "plora/checkpoint.hpp"
#include "plora/datagen.hpp"
#include "plora/errors.hpp"
#include "plora/kv_config.hpp"
#include "plora/trainer.hpp"

namespace plora::cli {

namespace {

constexpr const char* kBackboneSeedKey = "backbone_seed";
constexpr const char* kDefaultBackboneSeed = "7";

std::set<std::string> cli_keys() {
  auto keys = known_keys();
  keys.insert(kBackboneSeedKey);
  return keys;
}

struct Overrides {
  KeyValues file;
  KeyValues flags;

  void apply_to(KeyValues& kv) const {
    for (const auto& [k, v] : file) kv[k] = v;
    for (const auto& [k, v] : flags) kv[k] = v;
  }
};

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  std::uint64_t value = 0;
  auto [ptr, err] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || err != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(fmt::format("config key '{}': cannot parse '{}'", key, text));
  }
  return value;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

/// Defaults, then the corpus' shape, then the config file, then flags.
KeyValues training_config(const LoadedCorpus* corpus, const Overrides& overrides) {
  KeyValues kv = to_kv(EncoderConfig{});
  kv.merge(to_kv(RunConfig{}));
  kv[kBackboneSeedKey] = kDefaultBackboneSeed;
  if (corpus != nullptr) {
    kv["vocab_size"] = std::to_string(corpus->gen.vocab_size);
    kv["n_classes"] = std::to_string(corpus->gen.n_classes);
    kv["max_len"] = std::to_string(corpus->gen.max_len);
  }
  overrides.apply_to(kv);
  return kv;
}

const Dataset& pick_split(const Corpus& corpus, const std::string& name) {
  if (name == "A-train") return corpus.a.train;
  if (name == "A-dev") return corpus.a.dev;
  if (name == "A-test") return corpus.a.test;
  if (name == "B-train") return corpus.b.train;
  if (name == "B-dev") return corpus.b.dev;
  if (name == "B-test") return corpus.b.test;
  throw ConfigError(fmt::format("unknown split '{}' (expected A-train, A-dev, A-test, B-train, B-dev or B-test)", name));
}

Dataset only_user(const Dataset& data, const UserId& user) {
  Dataset out;
  for (const auto& s : data) {
    if (s.user == user) out.push_back(s);
  }
  if (out.empty()) throw DataError(fmt::format("no samples for user '{}'", user.str()));
  return out;
}

class LogWriter {
 public:
  LogWriter(std::ostream& out, const std::string& path) : out_(out) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw Error(fmt::format("cannot open log '{}'", path));
    }
  }
  void operator()(const std::string& line) {
    out_ << line << '\n';
    if (file_) *file_ << line << '\n';
  }
  LogSink sink() {
    return [this](const std::string& line) { (*this)(line); };
  }

 private:
  std::ostream& out_;
  std::unique_ptr<std::ofstream> file_;
};

EncoderModel fresh_model(const KeyValues& kv, const GeneratorSpec& gen) {
  EncoderConfig ec;
  apply_kv(kv, ec);
  std::vector<double> prior;
  if (ec.lexical_scale != 0.0 && ec.vocab_size == gen.vocab_size) prior = gen.token_polarities();
  return EncoderModel::create(ec, parse_u64(kBackboneSeedKey, kv.at(kBackboneSeedKey)), prior);
}

KeyValues snapshot(const KeyValues& kv, const RunConfig& rc) {
  KeyValues out = to_kv(rc);
  out[kBackboneSeedKey] = kv.at(kBackboneSeedKey);
  return out;
}

std::string report_line(const MetricReport& r) {
  return fmt::format("n={} acc={} mse={} macro_f1={} tp_ratio={}", r.n, format_double(r.acc), format_double(r.mse),
                     format_double(r.macro_f1), format_double(r.tp_ratio));
}

Regime checkpoint_regime(const Checkpoint& ck) {
  auto it = ck.config.find("regime");
  return it == ck.config.end() ? Regime::FullShot : regime_from_string(it->second);
}

std::string require_path(const std::string& flag, const std::string& fallback, const char* what) {
  if (!flag.empty()) return flag;
  if (!fallback.empty()) return fallback;
  throw ConfigError(fmt::format("missing {} path", what));
}

// --- commands --------------------------------------------------------------

int cmd_gen_data(const Overrides& ov, const std::string& out_dir, std::ostream& out) {
  GeneratorSpec gen;
  SplitSpec split;
  KeyValues kv;
  ov.apply_to(kv);
  if (!kv.contains("data_seed") && kv.contains("seed")) kv["data_seed"] = kv["seed"];
  apply_kv(kv, gen);
  apply_kv(kv, split);
  const Corpus corpus = generate(gen, split);
  save_corpus(corpus, gen, split, out_dir);
  out << fmt::format(
      "event=gen-data dir={} attempts={} a_train={} a_dev={} a_test={} b_train={} b_dev={} b_test={}\n", out_dir,
      corpus.attempts, corpus.a.train.size(), corpus.a.dev.size(), corpus.a.test.size(), corpus.b.train.size(),
      corpus.b.dev.size(), corpus.b.test.size());
  return 0;
}

int cmd_train(const Overrides& ov, const std::string& data_dir, const std::string& out_path,
              const std::string& log_path, std::ostream& out) {
  const LoadedCorpus corpus = load_corpus(data_dir);
  const KeyValues kv = training_config(&corpus, ov);
  RunConfig rc;
  apply_kv(kv, rc);
  if (rc.regime == Regime::FewShot) throw ConfigError("regime fewshot runs through the `fewshot` command");
  const std::string ckpt_path = require_path(out_path, rc.checkpoint_path, "output checkpoint (--out)");
  LogWriter log(out, log_path.empty() ? rc.log_path : log_path);

  Checkpoint ck;
  ck.model = fresh_model(kv, corpus.gen);
  ck.registry = UserRegistry(ck.model.config().plora.d_p);
  TrainResult result;
  if (rc.regime == Regime::TwoStage) {
    const Dataset view = few_shot_view(corpus.corpus.b.train, rc.fewshot_k);
    const auto b_users = users_of(corpus.corpus.b.test);
    result = train_twostage(ck.model, ck.registry, corpus.corpus.a.train, corpus.corpus.a.dev, view, rc, b_users,
                            log.sink());
  } else {
    result = train_fullshot(ck.model, ck.registry, corpus.corpus.a.train, corpus.corpus.a.dev, rc, log.sink());
  }
  ck.config = snapshot(kv, rc);
  ck.optim = std::move(result.optim);
  save_checkpoint(ck, ckpt_path);
  log(fmt::format("event=saved checkpoint={} frozen_checksum={:016x} trainable_checksum={:016x}", ckpt_path,
                  ck.model.frozen_checksum(), ck.model.trainable_checksum()));
  return 0;
}

int cmd_fewshot(const Overrides& ov, const std::string& ckpt_in, const std::string& data_dir,
                const std::string& out_path, std::optional<std::size_t> k, const std::string& log_path,
                std::ostream& out) {
  Checkpoint ck = load_checkpoint(ckpt_in);
  const LoadedCorpus corpus = load_corpus(data_dir);
  KeyValues kv = ck.config;
  ov.apply_to(kv);
  RunConfig rc;
  apply_kv(kv, rc);
  if (k) rc.fewshot_k = *k;
  LogWriter log(out, log_path.empty() ? rc.log_path : log_path);

  const std::uint64_t frozen_before = ck.model.frozen_checksum();
  const std::uint64_t trainable_before = ck.model.trainable_checksum();
  const Dataset view = few_shot_view(corpus.corpus.b.train, rc.fewshot_k);
  const auto b_users = users_of(corpus.corpus.b.test);
  train_fewshot(ck.model, ck.registry, view, rc, b_users, log.sink());
  const bool unchanged =
      ck.model.frozen_checksum() == frozen_before && ck.model.trainable_checksum() == trainable_before;

  ck.config["fewshot_k"] = std::to_string(rc.fewshot_k);
  const std::string ckpt_path = require_path(out_path, {}, "output checkpoint (--out)");
  save_checkpoint(ck, ckpt_path);
  log(fmt::format("event=saved checkpoint={} k={} model_unchanged={}", ckpt_path, rc.fewshot_k, unchanged));
  return 0;
}

int cmd_eval(const std::string& ckpt_in, const std::string& data_dir, const std::string& split_name,
             const std::string& mode_name, const std::string& user, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = load_checkpoint(ckpt_in);
  const LoadedCorpus corpus = load_corpus(data_dir);
  const Regime regime = checkpoint_regime(ck);
  EvalMode mode = eval_mode_from_string(mode_name);
  if (mode == EvalMode::Personalized && regime == Regime::LoRAOnly) {
    err << "note: lora checkpoints have no user path; evaluating zero-shot\n";
    mode = EvalMode::ZeroShot;
  }
  const Dataset& split = pick_split(corpus.corpus, split_name);
  MetricReport report;
  if (mode == EvalMode::Merged) {
    if (user.empty()) throw ConfigError("eval --mode merged needs --user");
    report = evaluate(ck.model, ck.registry, split, mode, regime, UserId(user));
  } else {
    const Dataset data = user.empty() ? split : only_user(split, UserId(user));
    report = evaluate(ck.model, ck.registry, data, mode, regime);
  }
  out << fmt::format("mode={} split={} user={} {}\n", to_string(mode), split_name, user, report_line(report));
  return 0;
}

int cmd_merge(const std::string& ckpt_in, const std::string& user, const std::string& out_path, std::ostream& out) {
  Checkpoint ck = load_checkpoint(ckpt_in);
  const UserId id(user);
  ck.model.merge_for_user(ck.registry.lookup(id), id.str());
  ck.optim.reset();
  save_checkpoint(ck, out_path);
  out << fmt::format("event=merge user={} state={} checkpoint={}\n", user, to_string(ck.model.merge_state()), out_path);
  return 0;
}

int cmd_switch(const std::string& ckpt_in, const std::string& from, const std::string& to,
               const std::string& out_path, std::ostream& out) {
  Checkpoint ck = load_checkpoint(ckpt_in);
  if (ck.model.merge_state() != MergeState::MergedForUser || ck.model.merged_user() != from) {
    throw StateError(fmt::format("checkpoint is not merged for user '{}' (state {}, user '{}')", from,
                                 to_string(ck.model.merge_state()), ck.model.merged_user()));
  }
  const UserId from_id(from), to_id(to);
  ck.model.switch_user(ck.registry.lookup(from_id), ck.registry.lookup(to_id), to_id.str());
  save_checkpoint(ck, out_path);
  out << fmt::format("event=switch-user from={} to={} checkpoint={}\n", from, to, out_path);
  return 0;
}

int cmd_inspect(const std::string& ckpt_in, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(ckpt_in);
  const Regime regime = checkpoint_regime(ck);
  const EncoderConfig& ec = ck.model.config();
  out << fmt::format("format_version={}\n", kCheckpointVersion);
  out << fmt::format("regime={}\n", to_string(regime));
  out << fmt::format("merge_state={}\n", to_string(ck.model.merge_state()));
  out << fmt::format("merged_user={}\n", ck.model.merged_user());
  out << fmt::format("model d_model={} n_layers={} n_heads={} d_ff={} vocab_size={} n_classes={} rank={} d_p={} "
                     "alpha_r={}\n",
                     ec.d_model, ec.n_layers, ec.n_heads, ec.d_ff, ec.vocab_size, ec.n_classes, ec.plora.rank,
                     ec.plora.d_p, format_double(ec.plora.alpha_r));
  for (const auto& t : ck.model.export_tensors()) {
    out << fmt::format("tensor name={} shape={}x{} frozen={}\n", t.name, t.value.rows(), t.value.cols(), t.frozen);
  }
  out << fmt::format("users count={} trainable={}\n", ck.registry.size(),
                     ck.registry.count_trainable() / std::max<std::size_t>(ck.registry.d_p(), 1));
  const ParamCounts counts = count_params(ck.model, ck.registry, regime);
  out << fmt::format("params frozen={} adapters={} head={} user_embeddings={} trainable={} total={} tp_ratio={}\n",
                     ck.model.count_frozen(), ck.model.count_adapter_params(), ck.model.count_head_params(),
                     ck.registry.count_total(), counts.trainable, counts.total,
                     format_double(static_cast<double>(counts.trainable) / static_cast<double>(counts.total)));
  out << fmt::format("checksum frozen={:016x} trainable={:016x}\n", ck.model.frozen_checksum(),
                     ck.model.trainable_checksum());
  out << fmt::format("optimizer_state={}\n", ck.optim ? "present" : "absent");
  return 0;
}

int cmd_sweep(const Overrides& ov, const std::string& data_dir, const std::string& param, const std::string& values,
              const std::string& seeds, const std::string& ckpt_in, const std::string& out_path, std::ostream& out) {
  static const std::map<std::string, std::string> kParamKey = {
      {"omega", "omega"}, {"alpha", "alpha"}, {"r", "rank"}, {"rank", "rank"}, {"d_p", "d_p"}, {"k", "fewshot_k"}};
  auto key_it = kParamKey.find(param);
  if (key_it == kParamKey.end()) {
    throw ConfigError(fmt::format("sweep: unknown parameter '{}' (expected omega, alpha, r, d_p or k)", param));
  }
  const std::vector<std::string> value_list = split_list(values);
  const std::vector<std::string> seed_list = split_list(seeds);
  if (value_list.empty() || seed_list.empty()) throw ConfigError("sweep: --values and --seeds must not be empty");

  const LoadedCorpus corpus = load_corpus(data_dir);
  const Corpus& data = corpus.corpus;
  const auto b_users = users_of(data.b.test);
  std::optional<Checkpoint> base;
  if (!ckpt_in.empty()) base = load_checkpoint(ckpt_in);

  std::ostringstream csv;
  csv << "param,value,seed,split,acc,mse,macro_f1\n";
  auto row = [&](const std::string& value, const std::string& seed, const char* split, const MetricReport& r) {
    const std::string line = fmt::format("{},{},{},{},{},{},{}", param, value, seed, split, format_double(r.acc),
                                         format_double(r.mse), format_double(r.macro_f1));
    csv << line << '\n';
    out << line << '\n';
  };

  std::map<std::string, std::pair<EncoderModel, UserRegistry>> trained_per_seed;
  for (const auto& value : value_list) {
    for (const auto& seed : seed_list) {
      KeyValues kv = training_config(&corpus, ov);
      kv["seed"] = seed;
      if (param != "k") kv[key_it->second] = value;
      RunConfig rc;
      apply_kv(kv, rc);
      if (rc.regime == Regime::FewShot || rc.regime == Regime::TwoStage) rc.regime = Regime::FullShot;

      if (param == "k") {
        const std::size_t k = parse_u64("k", value);
        EncoderModel model;
        UserRegistry registry;
        if (base) {
          model = base->model;
          registry = base->registry;
        } else {
          auto it = trained_per_seed.find(seed);
          if (it == trained_per_seed.end()) {
            EncoderModel m = fresh_model(kv, corpus.gen);
            UserRegistry reg(m.config().plora.d_p);
            train_fullshot(m, reg, data.a.train, data.a.dev, rc);
            it = trained_per_seed.emplace(seed, std::make_pair(std::move(m), std::move(reg))).first;
          }
          model = it->second.first;
          registry = it->second.second;
        }
        const Dataset view = few_shot_view(data.b.train, k);
        train_fewshot(model, registry, view, rc, b_users);
        row(value, seed, "B-test", evaluate(model, registry, data.b.test, EvalMode::Personalized, Regime::FewShot));
      } else {
        EncoderModel model = fresh_model(kv, corpus.gen);
        UserRegistry registry(model.config().plora.d_p);
        train_fullshot(model, registry, data.a.train, data.a.dev, rc);
        const EvalMode a_mode = rc.regime == Regime::LoRAOnly ? EvalMode::ZeroShot : EvalMode::Personalized;
        row(value, seed, "A-test", evaluate(model, registry, data.a.test, a_mode, rc.regime));
        row(value, seed, "B-test-zero-shot", evaluate(model, registry, data.b.test, EvalMode::ZeroShot, rc.regime));
      }
    }
  }
  if (!out_path.empty()) {
    std::ofstream file(out_path, std::ios::binary);
    if (!file) throw Error(fmt::format("cannot open '{}' for writing", out_path));
    file << csv.str();
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Personalized low-rank adaptation: data generation, training, evaluation and merging", "plora"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "flat key=value config file")->check(CLI::ExistingFile);
  std::map<std::string, std::string> key_values;
  std::vector<std::pair<std::string, CLI::Option*>> key_options;
  for (const auto& key : cli_keys()) {
    key_options.emplace_back(key, app.add_option("--" + key, key_values[key])->group("Config keys"));
  }

  std::string data_dir, out_path, ckpt, log_path, split = "A-test", mode = "personalized", user, from, to;
  std::string param, values, seeds = "1";
  std::optional<std::size_t> k;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic A/B corpus");
  gen->add_option("--out", out_path, "output directory")->required();

  auto* train = app.add_subcommand("train", "full-shot training (regimes full, lora, pki, 2s)");
  train->add_option("--data", data_dir, "corpus directory")->required();
  train->add_option("--out", out_path, "output checkpoint");
  train->add_option("--log", log_path, "also write log lines here");

  auto* fewshot = app.add_subcommand("fewshot", "fit B-user embeddings on k samples each");
  fewshot->add_option("--ckpt", ckpt, "trained checkpoint")->required();
  fewshot->add_option("--data", data_dir, "corpus directory")->required();
  fewshot->add_option("--out", out_path, "output checkpoint")->required();
  fewshot->add_option("--k", k, "samples per user");
  fewshot->add_option("--log", log_path, "also write log lines here");

  auto* eval = app.add_subcommand("eval", "print a metric report");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval->add_option("--data", data_dir, "corpus directory")->required();
  eval->add_option("--split", split, "A-train, A-dev, A-test, B-train, B-dev or B-test")->capture_default_str();
  eval->add_option("--mode", mode, "personalized, zero-shot or merged")->capture_default_str();
  eval->add_option("--user", user, "restrict to one user (required for merged)");

  auto* merge = app.add_subcommand("merge", "fold a user's adapter and embedding into the frozen weights");
  merge->add_option("--ckpt", ckpt, "checkpoint")->required();
  merge->add_option("--user", user, "user to fold in")->required();
  merge->add_option("--out", out_path, "output checkpoint")->required();

  auto* sw = app.add_subcommand("switch-user", "re-target a merged checkpoint to another user");
  sw->add_option("--ckpt", ckpt, "merged checkpoint")->required();
  sw->add_option("--from", from, "currently folded user")->required();
  sw->add_option("--to", to, "user to fold in")->required();
  sw->add_option("--out", out_path, "output checkpoint")->required();

  auto* inspect = app.add_subcommand("inspect", "print shapes, parameter counts and merge state");
  inspect->add_option("--ckpt", ckpt, "checkpoint")->required();

  auto* sweep = app.add_subcommand("sweep", "grid over omega, alpha, r, d_p or k and write a CSV");
  sweep->add_option("--data", data_dir, "corpus directory")->required();
  sweep->add_option("--param", param, "omega, alpha, r, d_p or k")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
  sweep->add_option("--ckpt", ckpt, "trained checkpoint to reuse for k sweeps");
  sweep->add_option("--out", out_path, "CSV output path");

  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.emplace_back("plora");
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    Overrides ov;
    if (!config_path.empty()) {
      ov.file = read_kv_file(config_path);
      check_known(ov.file, cli_keys());
    }
    for (const auto& [key, opt] : key_options) {
      if (opt->count() > 0) ov.flags[key] = key_values[key];
    }

    if (*gen) return cmd_gen_data(ov, out_path, out);
    if (*train) return cmd_train(ov, data_dir, out_path, log_path, out);
    if (*fewshot) return cmd_fewshot(ov, ckpt, data_dir, out_path, k, log_path, out);
    if (*eval) return cmd_eval(ckpt, data_dir, split, mode, user, out, err);
    if (*merge) return cmd_merge(ckpt, user, out_path, out);
    if (*sw) return cmd_switch(ckpt, from, to, out_path, out);
    if (*inspect) return cmd_inspect(ckpt, out);
    if (*sweep) return cmd_sweep(ov, data_dir, param, values, seeds, ckpt, out_path, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace plora::cli
