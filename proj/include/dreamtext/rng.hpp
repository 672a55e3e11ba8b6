#pragma once

#include <cmath>
#include <cstdint>

namespace dreamtext {

// Deterministic counter-free PRNG (splitmix64) with Box-Muller normals.
// Hand-rolled so the full generator state is three fields that serialize
// exactly into checkpoints; std::mt19937 state would be 2.5 KB and
// std::normal_distribution is implementation-defined.
class Rng {
public:
    struct State {
        std::uint64_t s = 0;
        bool has_spare = false;
        double spare = 0.0;
    };

    explicit Rng(std::uint64_t seed) : state_{mix64(seed + 0x9E3779B97F4A7C15ull), false, 0.0} {}

    // Derived stream: (seed, stream) pairs give independent sequences, so
    // per-sample generators agree between serial and parallel generation.
    Rng(std::uint64_t seed, std::uint64_t stream)
        : state_{mix64(mix64(seed + 0x9E3779B97F4A7C15ull) ^ mix64(stream + 0xD1B54A32D192ED03ull)),
                 false, 0.0} {}

    std::uint64_t next_u64() {
        state_.s += 0x9E3779B97F4A7C15ull;
        return mix64(state_.s);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi], inclusive.
    int uniform_int(int lo, int hi) {
        const double u = uniform();
        const int span = hi - lo + 1;
        int v = lo + static_cast<int>(u * static_cast<double>(span));
        return v > hi ? hi : v;
    }

    // Standard normal via Box-Muller with cached spare.
    double normal() {
        if (state_.has_spare) {
            state_.has_spare = false;
            return state_.spare;
        }
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        state_.spare = r * std::sin(a);
        state_.has_spare = true;
        return r * std::cos(a);
    }

    State state() const { return state_; }
    void restore(const State& st) { state_ = st; }

private:
    static std::uint64_t mix64(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    State state_;
};

}  // namespace dreamtext
