#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "ncast/tensor.hpp"

namespace ncast {

// FNV-1a mix of a base seed and a stream id, used to derive independent
// deterministic substreams (per event, per step, ...) from one run seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ull;
        }
    };
    mix(seed);
    mix(stream);
    return h;
}

// Deterministic RNG. Draws are derived from raw mt19937_64 output so the
// stream does not depend on library-specific distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}
    Rng(uint64_t seed, uint64_t stream) : gen_(mix_seed(seed, stream)) {}

    uint64_t raw() { return gen_(); }

    // Uniform in [0, 1).
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
        return lo + static_cast<int64_t>(gen_() % static_cast<uint64_t>(hi - lo + 1));
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0;
        while (u1 <= 0) u1 = uniform01();
        double u2 = uniform01();
        double m = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = m * std::sin(a);
        have_spare_ = true;
        return m * std::cos(a);
    }

    template <typename S>
    Tensor<S> normal_tensor(Shape shape) {
        Tensor<S> t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(normal());
        return t;
    }

    template <typename S>
    Tensor<S> uniform_tensor(Shape shape, double a, double b) {
        Tensor<S> t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(uniform(a, b));
        return t;
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0;
    bool have_spare_ = false;
};

}  // namespace ncast
