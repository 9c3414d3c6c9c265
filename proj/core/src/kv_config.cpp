// SPDX-License-Identifier: Apache-2.0
#include "plora/kv_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "plora/datagen.hpp"
#include "plora/encoder.hpp"
#include "plora/errors.hpp"
#include "plora/trainer.hpp"

namespace plora {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, err] = std::from_chars(begin, end, value);
  if (text.empty() || err != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("config key '{}': cannot parse '{}'", key, text));
  }
  return value;
}

class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {}

  template <typename T>
  void number(const char* key, T& out) const {
    if (auto it = kv_.find(key); it != kv_.end()) out = parse_number<T>(key, it->second);
  }
  void boolean(const char* key, bool& out) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    if (it->second == "true" || it->second == "1") {
      out = true;
    } else if (it->second == "false" || it->second == "0") {
      out = false;
    } else {
      throw ConfigError(fmt::format("config key '{}': expected true or false, got '{}'", key, it->second));
    }
  }
  void text(const char* key, std::string& out) const {
    if (auto it = kv_.find(key); it != kv_.end()) out = it->second;
  }
  template <typename F>
  void with(const char* key, F&& f) const {
    if (auto it = kv_.find(key); it != kv_.end()) f(it->second);
  }

 private:
  const KeyValues& kv_;
};

std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += format_double(values[i]);
  }
  return out;
}

std::vector<double> split_doubles(const std::string& key, const std::string& text) {
  std::vector<double> values;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) values.push_back(parse_number<double>(key, trim(item)));
  return values;
}

}  // namespace

KeyValues parse_kv(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected key=value", source, line_no));
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", source, line_no));
    kv[key] = trim(std::string_view(body).substr(eq + 1));
  }
  return kv;
}

KeyValues read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_kv(buffer.str(), path.string());
}

std::string format_kv(const KeyValues& kv) {
  std::string out;
  for (const auto& [key, value] : kv) out += fmt::format("{}={}\n", key, value);
  return out;
}

void write_kv_file(const KeyValues& kv, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
  out << format_kv(kv);
}

std::string format_double(double value) { return fmt::format("{}", value); }

KeyValues to_kv(const GeneratorSpec& gen) {
  return {{"vocab_size", std::to_string(gen.vocab_size)},
          {"n_sentiment", std::to_string(gen.n_sentiment)},
          {"n_classes", std::to_string(gen.n_classes)},
          {"min_len", std::to_string(gen.min_len)},
          {"max_len", std::to_string(gen.max_len)},
          {"neutral_rate", format_double(gen.neutral_rate)},
          {"token_spread", format_double(gen.token_spread)},
          {"bias_levels", join_doubles(gen.bias_levels)}};
}

KeyValues to_kv(const SplitSpec& split) {
  return {{"n_users_a", std::to_string(split.n_users_a)},
          {"n_users_b", std::to_string(split.n_users_b)},
          {"samples_per_user_a", std::to_string(split.samples_per_user_a)},
          {"samples_per_user_b", std::to_string(split.samples_per_user_b)},
          {"train_fraction", format_double(split.train_fraction)},
          {"dev_fraction", format_double(split.dev_fraction)},
          {"test_fraction", format_double(split.test_fraction)},
          {"data_seed", std::to_string(split.seed)}};
}

KeyValues to_kv(const EncoderConfig& c) {
  return {{"vocab_size", std::to_string(c.vocab_size)},
          {"d_model", std::to_string(c.d_model)},
          {"n_heads", std::to_string(c.n_heads)},
          {"n_layers", std::to_string(c.n_layers)},
          {"d_ff", std::to_string(c.d_ff)},
          {"max_len", std::to_string(c.max_len)},
          {"n_classes", std::to_string(c.n_classes)},
          {"embed_std", format_double(c.embed_std)},
          {"lexical_scale", format_double(c.lexical_scale)},
          {"head_init_std", format_double(c.head_init_std)},
          {"rank", std::to_string(c.plora.rank)},
          {"d_p", std::to_string(c.plora.d_p)},
          {"alpha_r", format_double(c.plora.alpha_r)},
          {"init_std", format_double(c.plora.init_std)}};
}

KeyValues to_kv(const RunConfig& c) {
  return {{"regime", to_string(c.regime)},
          {"omega", format_double(c.omega)},
          {"alpha", format_double(c.alpha)},
          {"mim_kind", to_string(c.mim_kind)},
          {"mim_pairing", to_string(c.mim_pairing)},
          {"teacher_stop_grad", c.teacher_stop_grad ? "true" : "false"},
          {"lr", format_double(c.optim.lr)},
          {"beta1", format_double(c.optim.beta1)},
          {"beta2", format_double(c.optim.beta2)},
          {"eps", format_double(c.optim.eps)},
          {"weight_decay", format_double(c.optim.weight_decay)},
          {"patience", std::to_string(c.optim.patience)},
          {"fewshot_lr", format_double(c.fewshot_optim.lr)},
          {"fewshot_weight_decay", format_double(c.fewshot_optim.weight_decay)},
          {"epochs", std::to_string(c.epochs)},
          {"fewshot_epochs", std::to_string(c.fewshot_epochs)},
          {"batch_size", std::to_string(c.batch_size)},
          {"fewshot_k", std::to_string(c.fewshot_k)},
          {"seed", std::to_string(c.seed)},
          {"checkpoint_path", c.checkpoint_path},
          {"log_path", c.log_path}};
}

void apply_kv(const KeyValues& kv, GeneratorSpec& gen) {
  const Reader r(kv);
  r.number("vocab_size", gen.vocab_size);
  r.number("n_sentiment", gen.n_sentiment);
  r.number("n_classes", gen.n_classes);
  r.number("min_len", gen.min_len);
  r.number("max_len", gen.max_len);
  r.number("neutral_rate", gen.neutral_rate);
  r.number("token_spread", gen.token_spread);
  r.with("bias_levels", [&](const std::string& v) { gen.bias_levels = split_doubles("bias_levels", v); });
}

void apply_kv(const KeyValues& kv, SplitSpec& split) {
  const Reader r(kv);
  r.number("n_users_a", split.n_users_a);
  r.number("n_users_b", split.n_users_b);
  r.number("samples_per_user_a", split.samples_per_user_a);
  r.number("samples_per_user_b", split.samples_per_user_b);
  r.number("train_fraction", split.train_fraction);
  r.number("dev_fraction", split.dev_fraction);
  r.number("test_fraction", split.test_fraction);
  r.number("data_seed", split.seed);
}

void apply_kv(const KeyValues& kv, EncoderConfig& c) {
  const Reader r(kv);
  r.number("vocab_size", c.vocab_size);
  r.number("d_model", c.d_model);
  r.number("n_heads", c.n_heads);
  r.number("n_layers", c.n_layers);
  r.number("d_ff", c.d_ff);
  r.number("max_len", c.max_len);
  r.number("n_classes", c.n_classes);
  r.number("embed_std", c.embed_std);
  r.number("lexical_scale", c.lexical_scale);
  r.number("head_init_std", c.head_init_std);
  r.number("rank", c.plora.rank);
  r.number("d_p", c.plora.d_p);
  r.number("alpha_r", c.plora.alpha_r);
  r.number("init_std", c.plora.init_std);
  c.plora.d_in = c.d_model;
  c.plora.d_out = c.d_model;
}

void apply_kv(const KeyValues& kv, RunConfig& c) {
  const Reader r(kv);
  r.with("regime", [&](const std::string& v) { c.regime = regime_from_string(v); });
  r.number("omega", c.omega);
  r.number("alpha", c.alpha);
  r.with("mim_kind", [&](const std::string& v) { c.mim_kind = mim_kind_from_string(v); });
  r.with("mim_pairing", [&](const std::string& v) { c.mim_pairing = mim_pairing_from_string(v); });
  r.boolean("teacher_stop_grad", c.teacher_stop_grad);
  r.number("lr", c.optim.lr);
  r.number("beta1", c.optim.beta1);
  r.number("beta2", c.optim.beta2);
  r.number("eps", c.optim.eps);
  r.number("weight_decay", c.optim.weight_decay);
  r.number("patience", c.optim.patience);
  r.number("fewshot_lr", c.fewshot_optim.lr);
  r.number("fewshot_weight_decay", c.fewshot_optim.weight_decay);
  c.fewshot_optim.beta1 = c.optim.beta1;
  c.fewshot_optim.beta2 = c.optim.beta2;
  c.fewshot_optim.eps = c.optim.eps;
  r.number("epochs", c.epochs);
  r.number("fewshot_epochs", c.fewshot_epochs);
  r.number("batch_size", c.batch_size);
  r.number("fewshot_k", c.fewshot_k);
  r.number("seed", c.seed);
  r.text("checkpoint_path", c.checkpoint_path);
  r.text("log_path", c.log_path);
}

std::set<std::string> known_keys() {
  std::set<std::string> keys;
  for (const KeyValues& kv : {to_kv(GeneratorSpec{}), to_kv(SplitSpec{}), to_kv(EncoderConfig{}), to_kv(RunConfig{})}) {
    for (const auto& [key, value] : kv) keys.insert(key);
  }
  return keys;
}

void check_known(const KeyValues& kv, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : kv) {
    if (!allowed.contains(key)) throw ConfigError(fmt::format("unknown config key '{}'", key));
  }
}

}  // namespace plora
