#pragma once

#include <cstdint>
#include <string>

namespace magloop {

/// FNV-1a, used for stable content hashes in output metadata.
inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace magloop
