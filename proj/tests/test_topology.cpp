#include "netstab/topology.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

#include <set>
#include <utility>
#include <vector>

using namespace netstab;

namespace {

std::vector<SubsystemSpec> scalar_specs(int n) {
    return std::vector<SubsystemSpec>(static_cast<std::size_t>(n), SubsystemSpec{1, 1});
}

// Six-node test fixture. Designed so that: subsystem 5 is dynamically driven by
// {0, 2, 4}; there is no direct link 2 -> 0 but a two-hop path exists; every
// dynamic neighbor has a direct communication link (assumption check passes).
NetworkTopology fixture6() {
    const std::vector<std::pair<int, int>> dyn = {
        {1, 0}, {2, 1}, {3, 0}, {4, 3}, {5, 0}, {5, 2}, {5, 4}};
    const std::vector<std::pair<int, int>> comm = {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {0, 3}, {3, 0},
                                                   {3, 4}, {4, 3}, {0, 5}, {5, 0}, {2, 5}, {4, 5}};
    return make_topology(scalar_specs(6), dyn, comm);
}

// Brute-force model-set definition straight from the set builder's contract.
std::vector<int> models_oracle(const NetworkTopology& t, const std::vector<int>& out_i) {
    std::vector<int> m;
    for (int l = 0; l < t.count(); ++l) {
        bool hit = false;
        for (int j : t.dyn_neighbors[static_cast<std::size_t>(l)])
            if (std::find(out_i.begin(), out_i.end(), j) != out_i.end()) hit = true;
        if (hit) m.push_back(l);
    }
    return m;
}

NetworkTopology random_topology(int n, Rng& rng, double comm_density = 0.4,
                                double dyn_density = 0.3) {
    std::vector<std::pair<int, int>> comm, dyn;
    for (int s = 0; s < n; ++s)
        for (int d = 0; d < n; ++d) {
            if (s == d) continue;
            if (rng.uniform01() < comm_density) {
                comm.emplace_back(s, d);
                // Dynamic coupling only where the assumption allows it.
                if (rng.uniform01() < dyn_density) dyn.emplace_back(d, s);
            }
        }
    return make_topology(scalar_specs(n), dyn, comm);
}

}  // namespace

TEST_CASE("six-node fixture: neighbor lists and assumption check", "[topology]") {
    const auto t = fixture6();
    CHECK(t.dyn_neighbors[5] == std::vector<int>{0, 2, 4, 5});
    CHECK(t.dyn_neighbors[0] == std::vector<int>{0});
    CHECK(validate_assumption_comm(t).empty());

    // Dropping the link 2 -> 5 breaks the assumption for the pair (5, 2).
    const std::vector<std::pair<int, int>> dyn = {
        {1, 0}, {2, 1}, {3, 0}, {4, 3}, {5, 0}, {5, 2}, {5, 4}};
    const std::vector<std::pair<int, int>> comm = {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {0, 3},
                                                   {3, 0}, {3, 4}, {4, 3}, {0, 5}, {5, 0},
                                                   {4, 5}};
    const auto broken = make_topology(scalar_specs(6), dyn, comm);
    const auto bad = validate_assumption_comm(broken);
    REQUIRE(bad.size() == 1);
    CHECK(bad[0] == std::pair<int, int>{5, 2});
}

TEST_CASE("six-node fixture: two-hop reachability shows up at power two", "[topology]") {
    const auto t = fixture6();
    const auto c1 = comm_matrix_power(t, 1);
    const auto c2 = comm_matrix_power(t, 2);
    CHECK_FALSE(c1[0][2]);  // no direct link 2 -> 0
    CHECK(c2[0][2]);        // but 2 -> 1 -> 0 exists
    CHECK(delay_table(t).from_to(2, 0) == 2);
}

TEST_CASE("comm power zero is the identity", "[topology]") {
    const auto t = fixture6();
    const auto c0 = comm_matrix_power(t, 0);
    for (int i = 0; i < t.count(); ++i)
        for (int j = 0; j < t.count(); ++j) CHECK(c0[i][j] == (i == j));
}

TEST_CASE("chain: power k reaches exactly k hops", "[topology]") {
    const auto t = make_topology(scalar_specs(3), {}, {{0, 1}, {1, 2}});
    const auto c1 = comm_matrix_power(t, 1);
    const auto c2 = comm_matrix_power(t, 2);
    CHECK(c1[1][0]);
    CHECK_FALSE(c1[2][0]);
    CHECK(c2[2][0]);
    const auto dt = delay_table(t);
    CHECK(dt.from_to(0, 2) == 2);
    CHECK(dt.from_to(2, 0) == kUnreachable);
}

TEST_CASE("delay table: self is zero, ring distance, unreachable pairs", "[topology]") {
    const auto ring = make_topology(scalar_specs(4), {}, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
    const auto dt = delay_table(ring);
    for (int i = 0; i < 4; ++i) CHECK(dt.from_to(i, i) == 0);
    CHECK(dt.from_to(0, 2) == 2);
    CHECK(dt.from_to(2, 0) == 2);

    const auto split = make_topology(scalar_specs(4), {}, {{0, 1}, {2, 3}});
    const auto ds = delay_table(split);
    CHECK(ds.from_to(0, 3) == kUnreachable);
    const auto ns = neighbor_sets(split, ds, 5);
    CHECK(ns.in[3] == std::vector<int>{2, 3});
    CHECK(ns.out[0] == std::vector<int>{0, 1});
}

TEST_CASE("power support equals delay threshold on random graphs", "[topology]") {
    Rng rng(0x70b01);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(5));
        const auto t = random_topology(n, rng);
        const auto dt = delay_table(t);
        // Oracle adjacency (with self loops) for independent BFS.
        std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
        for (int s = 0; s < n; ++s) adj[static_cast<std::size_t>(s)] = t.comm_out[static_cast<std::size_t>(s)];
        for (int k = 0; k <= 5; ++k) {
            const auto ck = comm_matrix_power(t, k);
            const auto ok = oracle::bool_power(adj, k);
            for (int s = 0; s < n; ++s) {
                const auto dist = oracle::bfs_dist(adj, s);
                for (int d = 0; d < n; ++d) {
                    CHECK(ck[d][s] == (dt.from_to(s, d) <= k));
                    CHECK(ck[d][s] == ok[d][s]);
                    CHECK(dt.from_to(s, d) == dist[static_cast<std::size_t>(d)]);
                }
            }
        }
    }
}

TEST_CASE("neighbor sets: chain with dbar one and with full reach", "[topology]") {
    const auto t = make_topology(scalar_specs(3), {{1, 0}, {2, 1}},
                                 {{0, 1}, {1, 0}, {1, 2}, {2, 1}});
    const auto dt = delay_table(t);
    const auto ns1 = neighbor_sets(t, dt, 1);
    CHECK(ns1.out[0] == std::vector<int>{0, 1});
    CHECK(ns1.in[0] == std::vector<int>{0, 1});
    CHECK(ns1.out[1] == std::vector<int>{0, 1, 2});
    // models[0]: whose update rows touch {0,1}? N(0)={0}, N(1)={0,1}, N(2)={1,2}.
    CHECK(ns1.models[0] == std::vector<int>{0, 1, 2});

    const auto ns9 = neighbor_sets(t, dt, 9);
    for (int i = 0; i < 3; ++i) {
        CHECK(ns9.in[i] == std::vector<int>{0, 1, 2});
        CHECK(ns9.out[i] == std::vector<int>{0, 1, 2});
        CHECK(ns9.models[i] == std::vector<int>{0, 1, 2});
    }
}

TEST_CASE("model sets match their definition on random graphs", "[topology]") {
    Rng rng(0x70b02);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(5));
        const auto t = random_topology(n, rng);
        const auto dt = delay_table(t);
        for (int dbar = 0; dbar <= 3; ++dbar) {
            const auto ns = neighbor_sets(t, dt, dbar);
            for (int i = 0; i < n; ++i) {
                CHECK(ns.models[static_cast<std::size_t>(i)] ==
                      models_oracle(t, ns.out[static_cast<std::size_t>(i)]));
                // Everyone is their own in/out/model neighbor.
                for (const auto* s : {&ns.in, &ns.out, &ns.models}) {
                    const auto& v = (*s)[static_cast<std::size_t>(i)];
                    CHECK(std::find(v.begin(), v.end(), i) != v.end());
                }
            }
        }
    }
}

TEST_CASE("largest neighborhood weight counts state dimensions", "[topology]") {
    // Heterogeneous dims: sizes 2, 1, 3 on a directed chain 0 -> 1 -> 2.
    std::vector<SubsystemSpec> specs = {{2, 1}, {1, 0}, {3, 2}};
    const auto t = make_topology(specs, {}, {{0, 1}, {1, 2}});
    const auto dt = delay_table(t);
    const auto ns = neighbor_sets(t, dt, 1);
    // in[2] = {1, 2} -> 4 states; out[0] = {0, 1} -> 3; models sets are computed
    // from dynamic neighbors (all trivial here), so nbar = 4.
    CHECK(ns.nbar == 4);
}

TEST_CASE("malformed topologies are rejected", "[topology]") {
    CHECK_THROWS_AS(make_topology({}, {}, {}), GraphError);
    CHECK_THROWS_AS(make_topology({{0, 1}}, {}, {}), GraphError);
    CHECK_THROWS_AS(make_topology({{1, -1}}, {}, {}), GraphError);
    CHECK_THROWS_AS(make_topology(scalar_specs(2), {{0, 7}}, {}), GraphError);
    CHECK_THROWS_AS(make_topology(scalar_specs(2), {}, {{5, 0}}), GraphError);
    CHECK_THROWS_AS(comm_matrix_power(fixture6(), -1), GraphError);
}

TEST_CASE("global index bookkeeping", "[topology]") {
    std::vector<SubsystemSpec> specs = {{2, 1}, {1, 0}, {3, 2}};
    const auto t = make_topology(specs, {}, {});
    CHECK(t.total_states == 6);
    CHECK(t.total_inputs == 3);
    CHECK(t.state_base(2) == 3);
    CHECK(t.input_base(2) == 1);
    CHECK(t.owner_of_state(0) == 0);
    CHECK(t.owner_of_state(2) == 1);
    CHECK(t.owner_of_state(5) == 2);
}
