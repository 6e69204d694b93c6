#pragma once

#include <cstdint>

namespace equilcast {

/// SplitMix64 finalizer; decorrelates neighbouring seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Deterministic child seed for the index-th job of a named stream.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) noexcept {
    return mix_seed(mix_seed(master ^ (stream * 0xD1B54A32D192ED03ULL)) + index);
}

}  // namespace equilcast
