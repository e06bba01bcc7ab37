#pragma once

#include <cmath>
#include <cstdint>

namespace gharnack {

// 64-bit avalanche finalizer (SplitMix64 / Murmur3-style constants).
inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Derive the root of an independent stream from a root seed and an index.
// Hashing the index before xor keeps neighbouring indices decorrelated.
inline constexpr std::uint64_t derive_stream(std::uint64_t root,
                                             std::uint64_t index) noexcept {
    return mix64(root ^ (0x9E3779B97F4A7C15ull +
                         mix64(index + 0xD1B54A32D192ED03ull)));
}

// SplitMix64: Weyl-sequence state with the mix64 finalizer. Small enough to
// keep one per path; seeding is O(1) so derived streams are cheap.
class SplitMix64 {
public:
    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr std::uint64_t next() noexcept {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix64(state_);
    }

    // Uniform on (0,1]: 53 high bits; never 0 so log() is safe.
    double next_unit() noexcept {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }

private:
    std::uint64_t state_;
};

// Standard normal draws via Box-Muller with a cached spare. One call per
// simulation step keeps stream consumption deterministic across rebuilds.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) noexcept
        : gen_(seed), spare_(0.0), has_spare_(false) {}

    double next() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = gen_.next_unit();
        const double u2 = gen_.next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    SplitMix64 gen_;
    double spare_;
    bool has_spare_;
};

}  // namespace gharnack
