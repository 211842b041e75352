#pragma once

#include <cmath>
#include <cstdint>

#include "hvae/tensor.hpp"

namespace hvae {

namespace detail {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t mix_keys(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    return splitmix64(s);
}

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

/// Deterministic, splittable random stream (xoshiro256++ seeded via
/// splitmix64). `fork` derives an independent child stream from the parent's
/// key, not its position, so derivation order never depends on how many
/// numbers were drawn. All stochastic code takes an explicit Rng so parallel
/// and serial execution produce identical bytes.
class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(uint64_t key) : key_(key) {
        uint64_t s = key;
        for (int i = 0; i < 4; ++i) state_[i] = detail::splitmix64(s);
    }

    uint64_t key() const { return key_; }

    Rng fork(uint64_t stream) const { return Rng(detail::mix_keys(key_, stream)); }

    uint64_t next_u64() {
        const uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = detail::rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller (one value per pair of uniforms, no
    /// cached spare, so the draw sequence is position-independent).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename T>
    Tensor<T> normal_tensor(const Shape& shape, double stddev = 1.0) {
        Tensor<T> out(shape);
        for (long i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(normal() * stddev);
        return out;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t key_ = 0;
    uint64_t state_[4] = {};
};

// Stream roles used to derive child rngs; keeping them in one place avoids
// accidental collisions between modules.
namespace rng_stream {
constexpr uint64_t kData = 0x64617461;      // minibatch shuffling
constexpr uint64_t kNoise = 0x6e6f6973;     // reparameterization noise
constexpr uint64_t kMixture = 0x6d697874;   // Monte-Carlo mixture KL samples
constexpr uint64_t kInit = 0x696e6974;      // parameter initialization
constexpr uint64_t kPhantom = 0x7068616e;   // phantom sample streams
constexpr uint64_t kSplit = 0x73706c74;     // dataset split shuffle
constexpr uint64_t kGenerate = 0x67656e72;  // ancestral sampling
constexpr uint64_t kFeature = 0x66656174;   // seeded feature extractor
}  // namespace rng_stream

}  // namespace hvae
