#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace sprag {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

// 64-bit FNV-1a; backs the hash-embed stub.
std::uint64_t fnv1a64(std::string_view data);

}  // namespace sprag
