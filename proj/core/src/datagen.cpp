// SPDX-License-Identifier: Apache-2.0
#include "plora/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "plora/errors.hpp"
#include "plora/kv_config.hpp"
#include "plora/linalg.hpp"

namespace plora {

namespace {

constexpr double kMinClassSupport = 0.05;
constexpr std::size_t kMaxAttempts = 100;

TokenSequence generate_document(const GeneratorSpec& gen, const std::vector<double>& polarity, Rng& rng) {
  const std::size_t length = gen.min_len + rng.uniform_index(gen.max_len - gen.min_len + 1);
  const double half = static_cast<double>(gen.n_classes) / 2.0;
  const double target = (2.0 * rng.uniform() - 1.0) * half;
  const double center = target / (1.0 - gen.neutral_rate);

  std::vector<double> cumulative(gen.n_sentiment);
  double total = 0.0;
  for (std::size_t j = 0; j < gen.n_sentiment; ++j) {
    const double z = (polarity[j] - center) / gen.token_spread;
    total += std::exp(-0.5 * z * z);
    cumulative[j] = total;
  }

  TokenSequence doc;
  doc.reserve(length);
  const std::size_t n_neutral = gen.vocab_size - gen.n_sentiment;
  for (std::size_t i = 0; i < length; ++i) {
    if (n_neutral > 0 && rng.uniform() < gen.neutral_rate) {
      doc.push_back(static_cast<TokenId>(gen.n_sentiment + rng.uniform_index(n_neutral)));
    } else {
      const double u = rng.uniform() * total;
      auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      const auto j = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), gen.n_sentiment - 1);
      doc.push_back(static_cast<TokenId>(j));
    }
  }
  return doc;
}

void generate_group(const GeneratorSpec& gen, const SplitSpec& split, const std::vector<double>& polarity,
                    const char* prefix, std::size_t n_users, std::size_t per_user, Rng& rng, SplitData& out,
                    std::map<std::string, double>& biases) {
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(per_user) * split.train_fraction));
  const auto n_dev = static_cast<std::size_t>(std::llround(static_cast<double>(per_user) * split.dev_fraction));
  for (std::size_t u = 0; u < n_users; ++u) {
    UserId user(fmt::format("{}{:03}", prefix, u));
    const double bias = gen.bias_levels[rng.uniform_index(gen.bias_levels.size())];
    biases[user.str()] = bias;
    for (std::size_t i = 0; i < per_user; ++i) {
      Sample s;
      s.tokens = generate_document(gen, polarity, rng);
      s.label = gen.label_for(s.tokens, bias);
      s.user = user;
      Dataset& dst = i < n_train ? out.train : (i < n_train + n_dev ? out.dev : out.test);
      dst.push_back(std::move(s));
    }
  }
}

bool balanced(const Dataset& data, std::size_t n_classes) {
  if (data.empty()) return true;
  const auto support = class_support(data, n_classes);
  return std::all_of(support.begin(), support.end(), [](double s) { return s >= kMinClassSupport; });
}

}  // namespace

void GeneratorSpec::validate() const {
  if (n_classes < 2) throw ConfigError(fmt::format("generator: n_classes must be >= 2, got {}", n_classes));
  if (n_sentiment < 2 || n_sentiment > vocab_size) {
    throw ConfigError(fmt::format("generator: n_sentiment {} must lie in [2, vocab_size {}]", n_sentiment, vocab_size));
  }
  if (min_len < 1 || max_len < min_len) {
    throw ConfigError(fmt::format("generator: need 1 <= min_len {} <= max_len {}", min_len, max_len));
  }
  if (!(neutral_rate >= 0.0 && neutral_rate < 1.0)) {
    throw ConfigError(fmt::format("generator: neutral_rate must lie in [0, 1), got {}", neutral_rate));
  }
  if (n_sentiment == vocab_size && neutral_rate > 0.0) {
    throw ConfigError("generator: neutral_rate > 0 needs at least one neutral token");
  }
  if (!(token_spread > 0.0)) throw ConfigError("generator: token_spread must be positive");
  if (bias_levels.empty()) throw ConfigError("generator: bias_levels must not be empty");
  for (double b : bias_levels) {
    // A shift of a full n_classes widths pins every label to an end class.
    if (!std::isfinite(b) || std::abs(b) >= static_cast<double>(n_classes)) {
      throw ConfigError(fmt::format("generator: bias level {} is inconsistent with {} classes", b, n_classes));
    }
  }
}

double GeneratorSpec::max_polarity() const {
  return static_cast<double>(n_classes) / 2.0 / (1.0 - neutral_rate) + token_spread;
}

std::vector<double> GeneratorSpec::token_polarities() const {
  std::vector<double> polarity(vocab_size, 0.0);
  const double top = max_polarity();
  for (std::size_t j = 0; j < n_sentiment; ++j) {
    polarity[j] = -top + 2.0 * top * static_cast<double>(j) / static_cast<double>(n_sentiment - 1);
  }
  return polarity;
}

double GeneratorSpec::mean_polarity(std::span<const TokenId> tokens) const {
  if (tokens.empty()) return 0.0;
  const double top = max_polarity();
  double total = 0.0;
  for (TokenId t : tokens) {
    if (t >= vocab_size) throw InputError(fmt::format("generator: token {} outside vocab {}", t, vocab_size));
    if (t < n_sentiment) total += -top + 2.0 * top * static_cast<double>(t) / static_cast<double>(n_sentiment - 1);
  }
  return total / static_cast<double>(tokens.size());
}

std::size_t GeneratorSpec::label_for(std::span<const TokenId> tokens, double bias) const {
  const double score = mean_polarity(tokens) + bias + static_cast<double>(n_classes) / 2.0;
  const double cls = std::floor(score);
  if (cls < 0.0) return 0;
  if (cls >= static_cast<double>(n_classes)) return n_classes - 1;
  return static_cast<std::size_t>(cls);
}

void SplitSpec::validate() const {
  if (n_users_a < 1 || n_users_b < 1 || samples_per_user_a < 1 || samples_per_user_b < 1) {
    throw ConfigError("split: user and sample counts must be >= 1");
  }
  if (train_fraction < 0.0 || dev_fraction < 0.0 || test_fraction < 0.0 ||
      std::abs(train_fraction + dev_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError(fmt::format("split: fractions {}/{}/{} must be non-negative and sum to 1", train_fraction,
                                  dev_fraction, test_fraction));
  }
  for (std::size_t per_user : {samples_per_user_a, samples_per_user_b}) {
    const auto n_train = std::llround(static_cast<double>(per_user) * train_fraction);
    const auto n_dev = std::llround(static_cast<double>(per_user) * dev_fraction);
    if (n_train + n_dev > static_cast<long long>(per_user)) {
      throw ConfigError(fmt::format("split: fractions overflow {} samples per user", per_user));
    }
  }
}

Corpus generate(const GeneratorSpec& gen, const SplitSpec& split) {
  gen.validate();
  split.validate();
  const auto polarity = gen.token_polarities();
  const Rng base(split.seed);
  for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng = attempt == 0 ? base : base.fork(attempt);
    Corpus corpus;
    corpus.attempts = attempt + 1;
    generate_group(gen, split, polarity, "uA", split.n_users_a, split.samples_per_user_a, rng, corpus.a,
                   corpus.user_bias);
    generate_group(gen, split, polarity, "uB", split.n_users_b, split.samples_per_user_b, rng, corpus.b,
                   corpus.user_bias);
    const bool ok = balanced(corpus.a.train, gen.n_classes) && balanced(corpus.a.dev, gen.n_classes) &&
                    balanced(corpus.a.test, gen.n_classes) && balanced(corpus.b.train, gen.n_classes) &&
                    balanced(corpus.b.dev, gen.n_classes) && balanced(corpus.b.test, gen.n_classes);
    if (ok) return corpus;
  }
  throw DataError(fmt::format("generator: no class-balanced corpus after {} attempts", kMaxAttempts));
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
  for (const auto& s : data) {
    out << s.user.str() << '\t' << s.label << '\t';
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i > 0) out << ' ';
      out << s.tokens[i];
    }
    out << '\n';
  }
  if (!out) throw Error(fmt::format("failed writing '{}'", path.string()));
}

Dataset parse_dataset(const std::string& text, const std::string& source) {
  Dataset data;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) { return ParseError(fmt::format("{}:{}: {}", source, line_no, what)); };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    if (tab1 == std::string::npos) throw fail("missing label field");
    const auto tab2 = line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) throw fail("missing token field");
    if (line.find('\t', tab2 + 1) != std::string::npos) throw fail("too many fields");
    if (tab1 == 0) throw fail("empty user token");

    Sample s;
    s.user = UserId(line.substr(0, tab1));
    const std::string_view label(line.data() + tab1 + 1, tab2 - tab1 - 1);
    auto [lend, lerr] = std::from_chars(label.data(), label.data() + label.size(), s.label);
    if (label.empty() || lerr != std::errc() || lend != label.data() + label.size()) {
      throw fail(fmt::format("bad label '{}'", label));
    }
    const char* p = line.data() + tab2 + 1;
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      TokenId tok = 0;
      auto [next, err] = std::from_chars(p, end, tok);
      if (err != std::errc() || (next != end && *next != ' ')) {
        throw fail(fmt::format("bad token id near '{}'", std::string(p, std::min<std::size_t>(end - p, 12))));
      }
      s.tokens.push_back(tok);
      p = next;
    }
    if (s.tokens.empty()) throw fail("no tokens");
    data.push_back(std::move(s));
  }
  return data;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_dataset(buffer.str(), path.string());
}

Dataset few_shot_view(const Dataset& train, std::size_t k) {
  Dataset view;
  if (k == 0) return view;
  std::map<std::string, std::size_t> taken;
  for (const auto& s : train) {
    auto& n = taken[s.user.str()];
    if (n < k) {
      view.push_back(s);
      ++n;
    }
  }
  for (const auto& user : users_of(train)) {
    const std::size_t n = taken[user.str()];
    if (n < k) {
      throw DataError(fmt::format("few_shot_view: user '{}' has {} training samples, {} requested", user.str(), n, k));
    }
  }
  return view;
}

std::vector<UserId> users_of(const Dataset& data) {
  std::vector<UserId> users;
  std::set<std::string> seen;
  for (const auto& s : data) {
    if (seen.insert(s.user.str()).second) users.push_back(s.user);
  }
  return users;
}

std::vector<double> class_support(const Dataset& data, std::size_t n_classes) {
  std::vector<double> support(n_classes, 0.0);
  if (data.empty()) return support;
  for (const auto& s : data) {
    if (s.label < n_classes) support[s.label] += 1.0;
  }
  for (double& v : support) v /= static_cast<double>(data.size());
  return support;
}

void save_corpus(const Corpus& corpus, const GeneratorSpec& gen, const SplitSpec& split,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(corpus.a.train, dir / "A_train.tsv");
  save_dataset(corpus.a.dev, dir / "A_dev.tsv");
  save_dataset(corpus.a.test, dir / "A_test.tsv");
  save_dataset(corpus.b.train, dir / "B_train.tsv");
  save_dataset(corpus.b.dev, dir / "B_dev.tsv");
  save_dataset(corpus.b.test, dir / "B_test.tsv");
  {
    std::ofstream out(dir / "users.tsv", std::ios::binary);
    for (const auto& [user, bias] : corpus.user_bias) {
      out << user << '\t' << (user.rfind("uB", 0) == 0 ? "B" : "A") << '\t' << format_double(bias) << '\n';
    }
  }
  KeyValues kv = to_kv(gen);
  kv.merge(to_kv(split));
  write_kv_file(kv, dir / "generator.cfg");
}

LoadedCorpus load_corpus(const std::filesystem::path& dir) {
  LoadedCorpus out;
  const KeyValues kv = read_kv_file(dir / "generator.cfg");
  apply_kv(kv, out.gen);
  apply_kv(kv, out.split);
  out.corpus.a.train = load_dataset(dir / "A_train.tsv");
  out.corpus.a.dev = load_dataset(dir / "A_dev.tsv");
  out.corpus.a.test = load_dataset(dir / "A_test.tsv");
  out.corpus.b.train = load_dataset(dir / "B_train.tsv");
  out.corpus.b.dev = load_dataset(dir / "B_dev.tsv");
  out.corpus.b.test = load_dataset(dir / "B_test.tsv");
  std::ifstream users(dir / "users.tsv", std::ios::binary);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(users, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) throw ParseError(fmt::format("users.tsv:{}: expected 3 fields", line_no));
    out.corpus.user_bias[line.substr(0, tab1)] = std::stod(line.substr(tab2 + 1));
  }
  return out;
}

}  // namespace plora
