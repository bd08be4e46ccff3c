#pragma once

// =============================================================================
// Interconnection structure: dynamic coupling graph, communication graph,
// pairwise information delays, and the derived neighbor sets that decide who
// must hear from whom (and how stale that information is allowed to be).
// =============================================================================

#include "netstab/core.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace netstab {

/// Delay marker for pairs with no communication path.
inline constexpr int kUnreachable = std::numeric_limits<int>::max();

struct SubsystemSpec {
    int state_dim = 0;
    int input_dim = 0;  // may be zero (unactuated subsystem)
};

struct NetworkTopology {
    std::vector<SubsystemSpec> subsystems;
    // dyn_neighbors[i] = sorted list of j whose state/input enters subsystem i's
    // update (always contains i itself).
    std::vector<std::vector<int>> dyn_neighbors;
    // comm_out[s] = sorted list of destinations with a direct link s -> d
    // (always contains s: self links are free).
    std::vector<std::vector<int>> comm_out;

    // Global index bookkeeping.
    std::vector<int> state_offset, input_offset;
    int total_states = 0;
    int total_inputs = 0;

    [[nodiscard]] int count() const { return static_cast<int>(subsystems.size()); }
    [[nodiscard]] int state_dim(int i) const { return subsystems[static_cast<std::size_t>(i)].state_dim; }
    [[nodiscard]] int input_dim(int i) const { return subsystems[static_cast<std::size_t>(i)].input_dim; }
    [[nodiscard]] int state_base(int i) const { return state_offset[static_cast<std::size_t>(i)]; }
    [[nodiscard]] int input_base(int i) const { return input_offset[static_cast<std::size_t>(i)]; }

    /// Subsystem owning global state index g.
    [[nodiscard]] int owner_of_state(int g) const {
        int i = 0;
        while (i + 1 < count() && state_offset[static_cast<std::size_t>(i) + 1] <= g) ++i;
        return i;
    }
};

/// d(from -> to): length of the shortest directed communication path, i.e. how
/// many steps information produced at `from` needs before `to` can use it.
struct DelayTable {
    int n = 0;
    std::vector<int> d;  // row-major [from][to]

    [[nodiscard]] int from_to(int from, int to) const {
        return d[static_cast<std::size_t>(from) * static_cast<std::size_t>(n) +
                 static_cast<std::size_t>(to)];
    }
};

struct NeighborSets {
    int dbar = 0;
    // in[i]:  sources within dbar hops of i (information i's controller consumes).
    // out[i]: destinations within dbar hops of i (where i's decisions matter).
    // models[i]: subsystems whose dynamics rows i needs for column synthesis.
    std::vector<std::vector<int>> in, out, models;
    // Largest dbar-neighborhood measured in summed state dimensions.
    int nbar = 0;
};

namespace detail {

inline void sort_unique(std::vector<int>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace detail

// -----------------------------------------------------------------------------
// Construction / validation
// -----------------------------------------------------------------------------

/// Builds a topology from raw edge lists.
///   dyn_edges:  pairs {i, j} meaning subsystem j's state and input enter i's
///               update (j is a dynamic neighbor of i). Self pairs implied.
///   comm_edges: directed links {src, dst}. Self links implied.
inline NetworkTopology make_topology(std::vector<SubsystemSpec> subsystems,
                                     const std::vector<std::pair<int, int>>& dyn_edges,
                                     const std::vector<std::pair<int, int>>& comm_edges) {
    const int n = static_cast<int>(subsystems.size());
    if (n == 0) throw GraphError("topology: no subsystems");
    for (int i = 0; i < n; ++i) {
        if (subsystems[static_cast<std::size_t>(i)].state_dim < 1)
            throw GraphError("topology: subsystem " + std::to_string(i) + " has state_dim < 1");
        if (subsystems[static_cast<std::size_t>(i)].input_dim < 0)
            throw GraphError("topology: subsystem " + std::to_string(i) + " has negative input_dim");
    }
    auto check_id = [n](int v, const char* what) {
        if (v < 0 || v >= n)
            throw GraphError(std::string("topology: ") + what + " id " + std::to_string(v) +
                             " out of range");
    };

    NetworkTopology t;
    t.subsystems = std::move(subsystems);
    t.dyn_neighbors.assign(static_cast<std::size_t>(n), {});
    t.comm_out.assign(static_cast<std::size_t>(n), {});
    for (int i = 0; i < n; ++i) {
        t.dyn_neighbors[static_cast<std::size_t>(i)].push_back(i);
        t.comm_out[static_cast<std::size_t>(i)].push_back(i);
    }
    for (const auto& [i, j] : dyn_edges) {
        check_id(i, "dyn edge");
        check_id(j, "dyn edge");
        t.dyn_neighbors[static_cast<std::size_t>(i)].push_back(j);
    }
    for (const auto& [s, d] : comm_edges) {
        check_id(s, "comm edge");
        check_id(d, "comm edge");
        t.comm_out[static_cast<std::size_t>(s)].push_back(d);
    }
    for (auto& v : t.dyn_neighbors) detail::sort_unique(v);
    for (auto& v : t.comm_out) detail::sort_unique(v);

    t.state_offset.resize(static_cast<std::size_t>(n));
    t.input_offset.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        t.state_offset[static_cast<std::size_t>(i)] = t.total_states;
        t.input_offset[static_cast<std::size_t>(i)] = t.total_inputs;
        t.total_states += t.state_dim(i);
        t.total_inputs += t.input_dim(i);
    }
    return t;
}

/// Dynamic neighbors must be direct communication sources: every j in N(i)
/// needs a one-hop link j -> i. Returns the violating (i, j) pairs.
[[nodiscard]] inline std::vector<std::pair<int, int>> validate_assumption_comm(
    const NetworkTopology& t) {
    std::vector<std::pair<int, int>> bad;
    for (int i = 0; i < t.count(); ++i) {
        for (int j : t.dyn_neighbors[static_cast<std::size_t>(i)]) {
            const auto& out = t.comm_out[static_cast<std::size_t>(j)];
            if (!std::binary_search(out.begin(), out.end(), i)) bad.emplace_back(i, j);
        }
    }
    return bad;
}

// -----------------------------------------------------------------------------
// Delays and reachability
// -----------------------------------------------------------------------------

[[nodiscard]] inline DelayTable delay_table(const NetworkTopology& t) {
    const int n = t.count();
    DelayTable dt;
    dt.n = n;
    dt.d.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), kUnreachable);
    for (int s = 0; s < n; ++s) {
        // BFS over direct links.
        std::deque<int> q{s};
        dt.d[static_cast<std::size_t>(s) * static_cast<std::size_t>(n) + static_cast<std::size_t>(s)] = 0;
        while (!q.empty()) {
            const int u = q.front();
            q.pop_front();
            const int du =
                dt.d[static_cast<std::size_t>(s) * static_cast<std::size_t>(n) + static_cast<std::size_t>(u)];
            for (int v : t.comm_out[static_cast<std::size_t>(u)]) {
                auto& dv = dt.d[static_cast<std::size_t>(s) * static_cast<std::size_t>(n) +
                                static_cast<std::size_t>(v)];
                if (dv == kUnreachable) {
                    dv = du + 1;
                    q.push_back(v);
                }
            }
        }
    }
    return dt;
}

/// Support pattern of the k-th power of the communication matrix: entry (i, j)
/// is true iff information can travel j -> i in at most k hops (self links make
/// shorter paths count). Computed by literal boolean multiplication.
[[nodiscard]] inline std::vector<std::vector<bool>> comm_matrix_power(const NetworkTopology& t,
                                                                      int k) {
    if (k < 0) throw GraphError("comm_matrix_power: negative exponent");
    const int n = t.count();
    std::vector<std::vector<bool>> c(static_cast<std::size_t>(n),
                                     std::vector<bool>(static_cast<std::size_t>(n), false));
    for (int i = 0; i < n; ++i) c[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = true;
    std::vector<std::vector<bool>> base(static_cast<std::size_t>(n),
                                        std::vector<bool>(static_cast<std::size_t>(n), false));
    for (int s = 0; s < n; ++s)
        for (int d : t.comm_out[static_cast<std::size_t>(s)])
            base[static_cast<std::size_t>(d)][static_cast<std::size_t>(s)] = true;  // receiver row, sender col
    for (int step = 0; step < k; ++step) {
        std::vector<std::vector<bool>> next(static_cast<std::size_t>(n),
                                            std::vector<bool>(static_cast<std::size_t>(n), false));
        for (int i = 0; i < n; ++i)
            for (int m = 0; m < n; ++m)
                if (base[static_cast<std::size_t>(i)][static_cast<std::size_t>(m)])
                    for (int j = 0; j < n; ++j)
                        if (c[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)])
                            next[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                                next[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] || true;
        c = std::move(next);
    }
    return c;
}

// -----------------------------------------------------------------------------
// Neighbor sets
// -----------------------------------------------------------------------------

[[nodiscard]] inline NeighborSets neighbor_sets(const NetworkTopology& t, const DelayTable& dt,
                                                int dbar) {
    if (dbar < 0) throw GraphError("neighbor_sets: negative dbar");
    const int n = t.count();
    NeighborSets s;
    s.dbar = dbar;
    s.in.assign(static_cast<std::size_t>(n), {});
    s.out.assign(static_cast<std::size_t>(n), {});
    s.models.assign(static_cast<std::size_t>(n), {});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (dt.from_to(j, i) <= dbar) s.in[static_cast<std::size_t>(i)].push_back(j);
            if (dt.from_to(i, j) <= dbar) s.out[static_cast<std::size_t>(i)].push_back(j);
        }
    }
    // models[i]: subsystems whose update rows can see the out-neighborhood of i.
    for (int i = 0; i < n; ++i) {
        for (int l = 0; l < n; ++l) {
            for (int j : t.dyn_neighbors[static_cast<std::size_t>(l)]) {
                const auto& out = s.out[static_cast<std::size_t>(i)];
                if (std::binary_search(out.begin(), out.end(), j)) {
                    s.models[static_cast<std::size_t>(i)].push_back(l);
                    break;
                }
            }
        }
    }
    int nbar = 0;
    auto weight = [&](const std::vector<int>& members) {
        int w = 0;
        for (int m : members) w += t.state_dim(m);
        return w;
    };
    for (int i = 0; i < n; ++i) {
        nbar = std::max({nbar, weight(s.in[static_cast<std::size_t>(i)]),
                         weight(s.out[static_cast<std::size_t>(i)]),
                         weight(s.models[static_cast<std::size_t>(i)])});
    }
    s.nbar = nbar;
    return s;
}

}  // namespace netstab
