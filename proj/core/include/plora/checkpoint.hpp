// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "plora/encoder.hpp"
#include "plora/kv_config.hpp"
#include "plora/optimizer.hpp"
#include "plora/user_space.hpp"

namespace plora {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume or serve a model. `config` carries the encoder
/// shape plus a snapshot of the run settings; the encoder keys are rewritten
/// from `model` on save.
struct Checkpoint {
  KeyValues config;
  EncoderModel model;
  UserRegistry registry;
  std::optional<OptimState> optim;
};

/// Layout (little-endian): "PLORACKP", u32 version, config text, frozen tensors,
/// trainable tensors, per-layer merge state, user table, optional optimizer state,
/// then FNV-1a 64 of all preceding bytes. Tensors are (name, rows, cols, f64 data).
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// ParseError on bad magic or truncation, VersionError on a different version
/// (checked before the checksum), ChecksumError on corruption.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The encoded frozen-tensor region alone.
std::vector<std::uint8_t> encode_frozen_region(const EncoderModel& model);

}  // namespace plora
