#pragma once

// =============================================================================
// Parameter vectors and dynamics assembly. Each subsystem owns the entries of
// its own update row: theta^i stacks the A-blocks for every dynamic neighbor
// (ascending id, row-major), then the B-blocks in the same order. Assembly
// scatters those blocks into the global (A, B) pair; the regressor turns one
// observed transition into the linear map theta -> predicted next state.
// =============================================================================

#include "netstab/core.hpp"
#include "netstab/rng.hpp"
#include "netstab/topology.hpp"

#include <string>
#include <vector>

namespace netstab {

/// Offsets of subsystem i's parameter blocks inside theta^i.
struct ThetaLayout {
    int owner = 0;
    std::vector<int> neighbors;  // N(i), ascending
    std::vector<int> a_offset;   // per neighbor: start of the A-block (n_i x n_j, row-major)
    std::vector<int> b_offset;   // per neighbor: start of the B-block (n_i x m_j, row-major)
    int dim = 0;
};

[[nodiscard]] inline ThetaLayout theta_layout(const NetworkTopology& t, int i) {
    ThetaLayout l;
    l.owner = i;
    l.neighbors = t.dyn_neighbors[static_cast<std::size_t>(i)];
    const int ni = t.state_dim(i);
    int off = 0;
    l.a_offset.reserve(l.neighbors.size());
    for (int j : l.neighbors) {
        l.a_offset.push_back(off);
        off += ni * t.state_dim(j);
    }
    l.b_offset.reserve(l.neighbors.size());
    for (int j : l.neighbors) {
        l.b_offset.push_back(off);
        off += ni * t.input_dim(j);
    }
    l.dim = off;
    return l;
}

/// Total parameter dimension across all subsystems.
[[nodiscard]] inline int theta_total_dim(const NetworkTopology& t) {
    int d = 0;
    for (int i = 0; i < t.count(); ++i) d += theta_layout(t, i).dim;
    return d;
}

struct GlobalDynamics {
    Mat A, B;
};

/// Scatters every subsystem's parameter vector into dense global matrices.
/// Entries outside the coupling pattern are exactly zero.
[[nodiscard]] inline GlobalDynamics assemble_global(const NetworkTopology& t,
                                                    const std::vector<Vec>& thetas) {
    if (static_cast<int>(thetas.size()) != t.count())
        throw LoadError("assemble_global: theta count mismatch");
    GlobalDynamics g;
    g.A = Mat::Zero(t.total_states, t.total_states);
    g.B = Mat::Zero(t.total_states, t.total_inputs);
    for (int i = 0; i < t.count(); ++i) {
        const ThetaLayout l = theta_layout(t, i);
        const Vec& th = thetas[static_cast<std::size_t>(i)];
        if (th.size() != l.dim)
            throw LoadError("assemble_global: theta dim mismatch at subsystem " + std::to_string(i));
        const int ni = t.state_dim(i);
        const int rb = t.state_base(i);
        for (std::size_t k = 0; k < l.neighbors.size(); ++k) {
            const int j = l.neighbors[k];
            const int nj = t.state_dim(j);
            const int mj = t.input_dim(j);
            for (int r = 0; r < ni; ++r)
                for (int c = 0; c < nj; ++c)
                    g.A(rb + r, t.state_base(j) + c) = th(l.a_offset[k] + r * nj + c);
            for (int r = 0; r < ni; ++r)
                for (int c = 0; c < mj; ++c)
                    g.B(rb + r, t.input_base(j) + c) = th(l.b_offset[k] + r * mj + c);
        }
    }
    return g;
}

/// Inverse of assemble_global for one subsystem: reads the blocks back out.
[[nodiscard]] inline Vec extract_local(const NetworkTopology& t, int i, const Mat& A, const Mat& B) {
    const ThetaLayout l = theta_layout(t, i);
    Vec th = Vec::Zero(l.dim);
    const int ni = t.state_dim(i);
    const int rb = t.state_base(i);
    for (std::size_t k = 0; k < l.neighbors.size(); ++k) {
        const int j = l.neighbors[k];
        const int nj = t.state_dim(j);
        const int mj = t.input_dim(j);
        for (int r = 0; r < ni; ++r)
            for (int c = 0; c < nj; ++c) th(l.a_offset[k] + r * nj + c) = A(rb + r, t.state_base(j) + c);
        for (int r = 0; r < ni; ++r)
            for (int c = 0; c < mj; ++c) th(l.b_offset[k] + r * mj + c) = B(rb + r, t.input_base(j) + c);
    }
    return th;
}

[[nodiscard]] inline Vec step_truth(const GlobalDynamics& g, const Vec& x, const Vec& u,
                                    const Vec& w) {
    return g.A * x + g.B * u + w;
}

/// Regressor for one observed transition: row r of the result, dotted with
/// theta^i, gives the model's prediction of subsystem i's state entry r.
/// x_nbr / u_nbr hold the previous state and input of each dynamic neighbor,
/// in N(i) order (so the caller can only feed it data it has actually heard).
[[nodiscard]] inline Mat local_regressor(const NetworkTopology& t, int i,
                                         const std::vector<Vec>& x_nbr,
                                         const std::vector<Vec>& u_nbr) {
    const ThetaLayout l = theta_layout(t, i);
    if (x_nbr.size() != l.neighbors.size() || u_nbr.size() != l.neighbors.size())
        throw LoadError("local_regressor: neighbor data count mismatch");
    const int ni = t.state_dim(i);
    Mat Z = Mat::Zero(ni, l.dim);
    for (std::size_t k = 0; k < l.neighbors.size(); ++k) {
        const int j = l.neighbors[k];
        const int nj = t.state_dim(j);
        const int mj = t.input_dim(j);
        if (x_nbr[k].size() != nj || u_nbr[k].size() != mj)
            throw LoadError("local_regressor: neighbor " + std::to_string(j) + " data dim mismatch");
        for (int r = 0; r < ni; ++r) {
            for (int c = 0; c < nj; ++c) Z(r, l.a_offset[k] + r * nj + c) = x_nbr[k](c);
            for (int c = 0; c < mj; ++c) Z(r, l.b_offset[k] + r * mj + c) = u_nbr[k](c);
        }
    }
    return Z;
}

/// Convenience overload slicing neighbor data out of global vectors.
[[nodiscard]] inline Mat local_regressor_global(const NetworkTopology& t, int i, const Vec& x,
                                                const Vec& u) {
    const ThetaLayout l = theta_layout(t, i);
    std::vector<Vec> xs, us;
    xs.reserve(l.neighbors.size());
    us.reserve(l.neighbors.size());
    for (int j : l.neighbors) {
        xs.push_back(x.segment(t.state_base(j), t.state_dim(j)));
        us.push_back(u.segment(t.input_base(j), t.input_dim(j)));
    }
    return local_regressor(t, i, xs, us);
}

/// Samples the parameter boxes (corners and interior) and reports the largest
/// Frobenius norms of the assembled matrices. Diagnostic only.
struct FrobeniusBound {
    double a_max = 0.0;
    double b_max = 0.0;
};

[[nodiscard]] inline FrobeniusBound sample_frobenius_bound(const NetworkTopology& t,
                                                           const std::vector<Vec>& lo,
                                                           const std::vector<Vec>& hi, int trials,
                                                           std::uint64_t seed) {
    FrobeniusBound fb;
    Rng rng(seed);
    std::vector<Vec> thetas(static_cast<std::size_t>(t.count()));
    for (int trial = 0; trial < trials; ++trial) {
        for (int i = 0; i < t.count(); ++i) {
            const Vec& l = lo[static_cast<std::size_t>(i)];
            const Vec& h = hi[static_cast<std::size_t>(i)];
            Vec th(l.size());
            for (int k = 0; k < l.size(); ++k) {
                if (trial % 2 == 0)  // corner
                    th(k) = rng.next_u64() & 1 ? h(k) : l(k);
                else  // interior
                    th(k) = rng.uniform(l(k), h(k));
            }
            thetas[static_cast<std::size_t>(i)] = th;
        }
        const GlobalDynamics g = assemble_global(t, thetas);
        fb.a_max = std::max(fb.a_max, g.A.norm());
        fb.b_max = std::max(fb.b_max, g.B.norm());
    }
    return fb;
}

}  // namespace netstab
