#pragma once

#include <cmath>
#include <cstdint>

namespace mfg {

/// Counter-based random stream. Every draw is a pure function of
/// (key, counter), so streams keyed by (seed, player, path) are independent
/// of evaluation order and identical across reruns and thread layouts.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream_a = 0, std::uint64_t stream_b = 0)
        : key_(mix(mix(mix(0x9e3779b97f4a7c15ull ^ seed) + stream_a) + stream_b)) {}

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; draws come in cached pairs.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0x1.0p-60) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t next() { return mix(key_ + 0x9e3779b97f4a7c15ull * (++counter_)); }

private:
    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace mfg
