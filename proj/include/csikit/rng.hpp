#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace csikit {

// SplitMix64 generator. Chosen over std::mt19937 + distributions because the
// uniform/normal draws here must be bit-identical across compilers and
// standard libraries, and every consumer derives its own stream from
// (seed, stream id) so parallel and serial generation agree.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    // Independent stream for a (seed, stream) pair, e.g. one per sample.
    static Rng stream(uint64_t seed, uint64_t stream_id) {
        Rng r(mix(seed) ^ mix(stream_id * 0x9E3779B97F4A7C15ULL + 0x6A09E667F3BCC909ULL));
        r.next_u64();
        return r;
    }

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1), 53 random mantissa bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Inclusive bounds.
    int uniform_int(int lo, int hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Box-Muller, one fresh pair of uniforms per call.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

} // namespace csikit
