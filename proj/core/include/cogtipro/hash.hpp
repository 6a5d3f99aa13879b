// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cogtipro::hash {

/// Lowercase hex SHA-256 of the bytes of `data`.
std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a. Stable across platforms; used for feature hashing and for
/// deriving sub-seeds.
std::uint64_t fnv1a64(std::string_view data);

/// Mixes a base seed with integer coordinates (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace cogtipro::hash
