#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace bmcx {

/// Deterministic random stream. All stochastic operations in the library take
/// an explicit RngStream so callers own reproducibility; independent consumers
/// (shuffling, corruption noise, samplers, ...) get their own stream derived
/// from (seed, stream id) instead of sharing state.
class RngStream {
public:
    explicit RngStream(uint64_t seed, uint64_t stream = 0) : gen_(mix(seed, stream)) {}

    /// splitmix64 finalizer over (seed, stream); decorrelates adjacent ids.
    static uint64_t mix(uint64_t seed, uint64_t stream) {
        uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1), 53-bit resolution.
    double u01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller with a cached spare.
    double normal(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + spare_ * sigma;
        }
        const double two_pi = 6.283185307179586;
        const double a = u01();
        const double u = 1.0 - u01();  // (0,1], keeps log finite
        const double r = std::sqrt(-2.0 * std::log(u));
        spare_ = r * std::sin(two_pi * a);
        has_spare_ = true;
        return mu + r * std::cos(two_pi * a) * sigma;
    }

    /// Unbiased integer in [0, n) by rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Stream ids for the fixed substreams a training run derives from its master
/// seed. Keeping them in one place guarantees two consumers never collide.
namespace streams {
inline constexpr uint64_t kDataGen = 0x01;
inline constexpr uint64_t kParamInit = 0x02;
inline constexpr uint64_t kShuffle = 0x03;
inline constexpr uint64_t kCurveT = 0x04;
inline constexpr uint64_t kCorruption = 0x05;
inline constexpr uint64_t kShiftSampler = 0x06;
inline constexpr uint64_t kAugment = 0x07;
inline constexpr uint64_t kEval = 0x08;
inline constexpr uint64_t kPlanarPoints = 0x09;
}  // namespace streams

}  // namespace bmcx
