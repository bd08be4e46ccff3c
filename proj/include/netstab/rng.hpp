#pragma once

// =============================================================================
// Deterministic RNG. Hand-rolled distributions on top of xoshiro256++ so the
// same seed produces the same stream on every platform and standard library.
// =============================================================================

#include "netstab/core.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace netstab {

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        // Seed the four words through splitmix64, as the xoshiro authors suggest.
        std::uint64_t x = seed;
        for (auto& w : s_) {
            x = splitmix64(x);
            w = x == 0 ? 0x9e3779b97f4a7c15ULL : x;
        }
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi].
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller (cached second draw).
    double normal() noexcept {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 1e-300) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        // Multiply-shift rejection-free mapping; bias is negligible for our n.
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    Vec normal_vec(int dim) {
        Vec v(dim);
        for (int i = 0; i < dim; ++i) v(i) = normal();
        return v;
    }

    /// Uniform direction on the unit sphere.
    Vec sphere_dir(int dim) {
        Vec v = normal_vec(dim);
        double n = v.norm();
        while (n < 1e-12) {
            v = normal_vec(dim);
            n = v.norm();
        }
        return v / n;
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace netstab
