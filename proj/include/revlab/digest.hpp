#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace revlab {

// FNV-1a 64-bit; used to fingerprint report inputs, not for security.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a64_hex(std::string_view bytes);

}  // namespace revlab
