#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace nodule {

// Deterministic across platforms: splitmix64 core with explicit float /
// gaussian transforms. std::shuffle / std::*_distribution are
// implementation-defined, so everything seeded goes through this.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

    // [0, 1)
    double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }
    float next_float() { return static_cast<float>((next_u64() >> 40) * 0x1.0p-24); }

    // inclusive range
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    float uniform(float a, float b) { return a + (b - a) * next_float(); }

    // Box-Muller; second value cached
    float gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1, u2;
        do {
            u1 = next_double();
        } while (u1 <= 1e-300);
        u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = static_cast<float>(r * std::sin(a));
        has_cached_ = true;
        return static_cast<float>(r * std::cos(a));
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_u64() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    float cached_ = 0.0f;
    bool has_cached_ = false;
};

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Child stream for (seed, tag) pairs, e.g. per-sample augmentation streams.
inline uint64_t derive_seed(uint64_t seed, const std::string& tag) {
    Rng mix(seed ^ fnv1a(tag));
    return mix.next_u64();
}

inline uint64_t derive_seed(uint64_t seed, uint64_t salt) {
    Rng mix(seed ^ (salt * 0x9e3779b97f4a7c15ull + 0x165667b19e3779f9ull));
    return mix.next_u64();
}

}  // namespace nodule
