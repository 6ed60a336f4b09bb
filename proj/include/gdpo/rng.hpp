#pragma once

// Deterministic RNG stack used for every random draw in the project.
//
// Stream seeds are derived with splitmix64 over (global seed, purpose tag,
// index); draws come from xoshiro256** seeded from that stream seed. Both
// algorithms are the public-domain Vigna constructions, so every reported
// number is reproducible across platforms and languages.

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace gdpo {

// One splitmix64 step: advances `state` and returns the scrambled output.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Scramble a single value (splitmix64_next with a throwaway state).
inline std::uint64_t splitmix64_mix(std::uint64_t x) {
    std::uint64_t s = x;
    return splitmix64_next(s);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Derive the seed for a named stream:
//   s0 = mix(global ^ fnv1a64(tag));  seed = mix(s0 ^ index)
inline std::uint64_t stream_seed(std::uint64_t global_seed, std::string_view tag,
                                 std::uint64_t index) {
    std::uint64_t s = splitmix64_mix(global_seed ^ fnv1a64(tag));
    return splitmix64_mix(s ^ index);
}

// xoshiro256** 1.0, state initialized from splitmix64 of the seed.
class Xoshiro256ss {
public:
    explicit Xoshiro256ss(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64_next(sm);
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n) via Lemire's multiply-shift (no rejection,
    // bias is negligible at the ranges used here and the draw count is fixed).
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    int uniform_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    // Fisher-Yates, one draw per position from the back.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::array<std::uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
};

}  // namespace gdpo
