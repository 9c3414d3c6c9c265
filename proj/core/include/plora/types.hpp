// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace plora {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

}  // namespace plora
