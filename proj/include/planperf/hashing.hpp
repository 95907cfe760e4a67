#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace planperf {

// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

// Stable seed for a named substream of a global seed ("synth", "gbt", ...).
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stream);

}  // namespace planperf
