#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfrl {

/// Configuration or CLI input is malformed (maps to exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A persisted artifact is unreadable: bad magic, version, digest, truncation.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A candidate state decodes to geometry outside the environment's bounds.
struct InfeasibleState : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a. Content digest for manifests and artifact headers; fast and
// stable across platforms, not cryptographic.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) out[i] = digits[v & 0xf];
    return out;
}

// splitmix64: derives independent stream seeds from one root seed so that
// every stage of a run is reproducible from a single manifest entry.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t root, uint64_t stream) {
    uint64_t s = root ^ (0x9e3779b97f4a7c15ull * (stream + 1));
    return splitmix64(s);
}

}  // namespace cfrl
