#pragma once

// =============================================================================
// netstab core: shared aliases, error taxonomy, seed derivation, hashing
// =============================================================================

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace netstab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// -----------------------------------------------------------------------------
// Errors. Each failure class the pipeline distinguishes gets its own type so
// callers (and the CLI exit-code map) can tell them apart.
// -----------------------------------------------------------------------------

struct NetstabError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed configuration or input file (also: truth outside its box).
struct LoadError : NetstabError {
    using NetstabError::NetstabError;
};

/// Topology that violates a structural requirement.
struct GraphError : NetstabError {
    using NetstabError::NetstabError;
};

/// Every candidate parameter set became empty: no model explains the data.
struct InconsistencyError : NetstabError {
    using NetstabError::NetstabError;
};

/// The column synthesis constraints admit no solution.
struct SynthesisError : NetstabError {
    using NetstabError::NetstabError;
};

/// Numerical kernel failure (LP/QP did not converge or certify).
struct NumericError : NetstabError {
    using NetstabError::NetstabError;
};

/// Causality violation: a subsystem touched data newer than its delay allows.
struct CausalityError : std::logic_error {
    using std::logic_error::logic_error;
};

// -----------------------------------------------------------------------------
// Seed derivation. Every random draw in an episode descends from the scenario
// seed through splitmix64 chaining, so runs are reproducible bit-for-bit and
// sub-streams are decorrelated. Documented in README.md.
// -----------------------------------------------------------------------------

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

[[nodiscard]] constexpr std::uint64_t seed_child(std::uint64_t parent, std::uint64_t tag) noexcept {
    return splitmix64(parent ^ splitmix64(tag));
}

[[nodiscard]] constexpr std::uint64_t seed_child(std::uint64_t parent, std::uint64_t tag,
                                                 std::uint64_t index) noexcept {
    return seed_child(seed_child(parent, tag), index);
}

// Stream tags (arbitrary distinct constants).
inline constexpr std::uint64_t kSeedSteiner = 0x5331;      // per-subsystem direction sets
inline constexpr std::uint64_t kSeedDisturbance = 0xd157;  // per-step disturbance draws
inline constexpr std::uint64_t kSeedSysid = 0x51d0;        // baseline excitation
inline constexpr std::uint64_t kSeedProbe = 0x960be;  // feasibility probe sampling

// -----------------------------------------------------------------------------
// FNV-1a over raw bytes; used to stamp models so stale columns are detectable.
// -----------------------------------------------------------------------------

[[nodiscard]] inline std::uint64_t hash_bytes(const void* data, std::size_t n,
                                              std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

[[nodiscard]] inline std::uint64_t hash_matrix(const Mat& m, std::uint64_t h = 0xcbf29ce484222325ULL) {
    h = hash_bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
    const std::int64_t dims[2] = {m.rows(), m.cols()};
    return hash_bytes(dims, sizeof(dims), h);
}

// -----------------------------------------------------------------------------
// Lossless double formatting (17 significant digits round-trips IEEE binary64).
// -----------------------------------------------------------------------------

[[nodiscard]] inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace netstab
