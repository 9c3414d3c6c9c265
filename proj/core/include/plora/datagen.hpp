// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "plora/types.hpp"
#include "plora/user_space.hpp"

namespace plora {

struct Sample {
  TokenSequence tokens;
  std::size_t label = 0;
  UserId user;

  friend bool operator==(const Sample&, const Sample&) = default;
};

using Dataset = std::vector<Sample>;

struct SplitData {
  Dataset train;
  Dataset dev;
  Dataset test;
};

/// Synthetic personalised-rating generator.
///
/// Token ids [0, n_sentiment) carry polarities evenly spaced over
/// [−max_polarity, +max_polarity]; the remaining ids are neutral (polarity 0).
/// Every user gets a bias drawn uniformly from `bias_levels` (in class widths) and
///   y = clamp(floor(mean_polarity(x) + bias + n_classes/2), 0, n_classes − 1).
struct GeneratorSpec {
  std::size_t vocab_size = 200;
  std::size_t n_sentiment = 40;
  std::size_t n_classes = 5;
  std::size_t min_len = 12;
  std::size_t max_len = 32;
  /// Probability that a position holds a neutral token.
  double neutral_rate = 0.25;
  /// Width of the kernel that picks sentiment tokens near a document's target score.
  double token_spread = 0.75;
  std::vector<double> bias_levels = {-1.5, 0.0, 1.5};

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  double max_polarity() const;
  /// One value per vocabulary id.
  std::vector<double> token_polarities() const;
  double mean_polarity(std::span<const TokenId> tokens) const;
  /// The label rule.
  std::size_t label_for(std::span<const TokenId> tokens, double bias) const;
};

struct SplitSpec {
  std::size_t n_users_a = 50;
  std::size_t n_users_b = 20;
  std::size_t samples_per_user_a = 200;
  std::size_t samples_per_user_b = 40;
  double train_fraction = 0.6;
  double dev_fraction = 0.1;
  double test_fraction = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Corpus {
  SplitData a;
  SplitData b;
  /// Bias of every generated user, A and B.
  std::map<std::string, double> user_bias;
  /// Number of regeneration attempts needed for class balance.
  std::size_t attempts = 1;
};

/// Generates user-disjoint D^A / D^B partitions, each split per user into
/// train/dev/test. Retries with derived seeds until every class has at least
/// 5% support in every split.
Corpus generate(const GeneratorSpec& gen, const SplitSpec& split);

/// One record per line: `user \t label \t space-separated token ids`.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
/// Throws ParseError with the 1-based line number on malformed lines.
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(const std::string& text, const std::string& source = "<memory>");

/// First k samples of every user, in file order. Throws DataError naming the
/// first user with fewer than k samples.
Dataset few_shot_view(const Dataset& train, std::size_t k);

/// Users in order of first appearance.
std::vector<UserId> users_of(const Dataset& data);
/// Fraction of samples per class.
std::vector<double> class_support(const Dataset& data, std::size_t n_classes);

/// Writes A_*.tsv, B_*.tsv, users.tsv and generator.cfg into `dir`.
void save_corpus(const Corpus& corpus, const GeneratorSpec& gen, const SplitSpec& split,
                 const std::filesystem::path& dir);
struct LoadedCorpus {
  Corpus corpus;
  GeneratorSpec gen;
  SplitSpec split;
};
LoadedCorpus load_corpus(const std::filesystem::path& dir);

}  // namespace plora
