#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

namespace tagsynth {

// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

// First 8 bytes of SHA-256 over the parts, each length-prefixed so that
// ("ab","c") and ("a","bc") differ. Stable across platforms.
std::uint64_t digest64(std::initializer_list<std::string_view> parts);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace tagsynth
