// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace plora {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

/// 64-bit FNV-1a, chainable through `state`.
inline std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t state = kFnvOffset) {
  for (std::byte b : bytes) {
    state ^= static_cast<std::uint64_t>(b);
    state *= 0x100000001b3ULL;
  }
  return state;
}

inline std::uint64_t fnv1a64(std::span<const double> values, std::uint64_t state = kFnvOffset) {
  return fnv1a64(std::as_bytes(values), state);
}

}  // namespace plora
