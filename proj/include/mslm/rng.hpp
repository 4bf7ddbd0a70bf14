#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace mslm {

// splitmix64 (Steele/Lea/Flood finalizer). All randomness in this project
// flows through this generator so corpora, shuffles and init are
// reproducible from a single 64-bit seed. The algorithm identifier written
// into corpus headers is "splitmix64".
inline constexpr const char* kPrngId = "splitmix64";

class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n). Modulo bias is negligible for the small n used here.
    uint64_t below(uint64_t n) { return next() % n; }

    int range(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Uniform in (0, 1].
    double uniform01() {
        return (static_cast<double>(next() >> 11) + 1.0) * (1.0 / 9007199254740992.0);
    }

    // Box-Muller, one value per call (the spare is discarded to keep the
    // stream position a pure function of the call count).
    double normal(double mean, double std) {
        double u1 = uniform01();
        double u2 = uniform01();
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
        return mean + std * z;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

private:
    uint64_t state_;
};

// Derives an independent stream from (seed, a, b). Used for per-record
// corpus streams and per-epoch shuffles so sharded and serial generation
// agree element for element.
inline uint64_t derive_stream(uint64_t seed, uint64_t a, uint64_t b) {
    SplitMix64 g(seed);
    uint64_t s = g.next() ^ (a * 0x9E3779B97F4A7C15ULL);
    SplitMix64 h(s);
    return h.next() ^ (b * 0xD1B54A32D192ED03ULL);
}

// FNV-1a, used for token-space layout hashes and tensor checksums.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xCBF29CE484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x00000100000001B3ULL;
    }
    return h;
}

inline uint64_t fnv1a_str(const std::string& s, uint64_t h = 0xCBF29CE484222325ULL) {
    return fnv1a(s.data(), s.size(), h);
}

} // namespace mslm
