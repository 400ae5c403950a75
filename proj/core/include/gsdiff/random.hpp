#pragma once

#include "gsdiff/types.hpp"

#include <array>
#include <cmath>
#include <cstdint>

namespace gsdiff {

/// xoshiro256++ with explicit, trivially serializable state. The engine is
/// platform independent, and the samplers below carry no hidden state, so a
/// checkpointed stream resumes bit-exactly.
class Rng {
public:
    Rng() : Rng(0x9e3779b97f4a7c15ull) {}
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed) {
        // splitmix64 expansion of the seed into the four state words
        uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            s = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    Real uniform() {
        return static_cast<Real>((next_u64() >> 11) * 0x1.0p-53);
    }

    Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller; consumes exactly two draws per call so
    /// the stream position is a pure function of the call count.
    Real normal() {
        Real u1 = uniform();
        Real u2 = uniform();
        if (u1 <= Real(0)) u1 = Real(1e-300);
        return std::sqrt(Real(-2) * std::log(u1)) *
               std::cos(Real(2) * Real(M_PI) * u2);
    }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<uint64_t, 4> state_{};
};

/// Derives independent stream seeds from one master seed (training loop,
/// oracle noise and densification noise draw from separate streams).
inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    uint64_t z = master + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace gsdiff
