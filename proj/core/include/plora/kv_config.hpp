// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace plora {

struct GeneratorSpec;
struct SplitSpec;
struct EncoderConfig;
struct RunConfig;

/// Flat `key=value` configuration. Lines starting with '#' and blank lines are ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_kv(const std::string& text, const std::string& source = "<memory>");
KeyValues read_kv_file(const std::filesystem::path& path);
/// Sorted `key=value` lines.
std::string format_kv(const KeyValues& kv);
void write_kv_file(const KeyValues& kv, const std::filesystem::path& path);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

KeyValues to_kv(const GeneratorSpec& gen);
KeyValues to_kv(const SplitSpec& split);
KeyValues to_kv(const EncoderConfig& config);
KeyValues to_kv(const RunConfig& config);

/// Overwrites the fields whose keys are present and leaves the rest alone.
/// Keys are flat and shared: vocab_size, n_classes and max_len feed both the
/// generator and the encoder. Malformed values raise ConfigError naming the key.
void apply_kv(const KeyValues& kv, GeneratorSpec& gen);
void apply_kv(const KeyValues& kv, SplitSpec& split);
void apply_kv(const KeyValues& kv, EncoderConfig& config);
void apply_kv(const KeyValues& kv, RunConfig& config);

/// Every key understood by the apply_kv overloads.
std::set<std::string> known_keys();
/// Throws ConfigError on the first key not in `allowed`.
void check_known(const KeyValues& kv, const std::set<std::string>& allowed);

}  // namespace plora
