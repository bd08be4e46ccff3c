#include "netstab/consist.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "netstab/dynamics.hpp"
#include "netstab/rng.hpp"
#include "netstab/topology.hpp"

#include <cmath>
#include <vector>

using namespace netstab;

namespace {

Polytope square(double lo, double hi, int dim = 2) {
    return Polytope::box(Vec::Constant(dim, lo), Vec::Constant(dim, hi));
}

Mat row2(double a, double b) {
    Mat Z(1, 2);
    Z << a, b;
    return Z;
}

Vec scalar(double v) {
    Vec x(1);
    x << v;
    return x;
}

double support_value(const Polytope& p, const Vec& v) {
    const auto s = support_point(p, v);
    REQUIRE(s.status == SupportResult::Status::kOptimal);
    return s.value;
}

}  // namespace

TEST_CASE("one scalar observation brackets the state gain", "[consist]") {
    ConsistentSet cs(0, square(-2, 2), 0xc001);
    // Transition x(1) = a*x(0) + b*u(0) + w with x(0)=1, u(0)=0, x(1)=1, W=0.1.
    cs.observe(row2(1, 0), scalar(1), 0.1);
    Vec e0(2), e1(2);
    e0 << 1, 0;
    e1 << 0, 1;
    CHECK(support_value(cs.polytope(), e0) == Catch::Approx(1.1));
    CHECK(support_value(cs.polytope(), -e0) == Catch::Approx(-0.9));
    CHECK(support_value(cs.polytope(), e1) == Catch::Approx(2.0));
    CHECK(support_value(cs.polytope(), -e1) == Catch::Approx(2.0));
}

TEST_CASE("zero regressor rows only assert the disturbance bound", "[consist]") {
    ConsistentSet cs(0, square(-2, 2), 0xc002);
    const int before = cs.polytope().size();
    cs.observe(Mat::Zero(1, 2), scalar(0.05), 0.1);
    CHECK(cs.polytope().size() == before);
    CHECK_THROWS_AS(cs.observe(Mat::Zero(1, 2), scalar(0.2), 0.1), InconsistencyError);
}

TEST_CASE("contradictory data empties the set", "[consist]") {
    ConsistentSet cs(0, square(-1, 1), 0xc003);
    cs.observe(row2(1, 0), scalar(0.5), 0.1);   // a in [0.4, 0.6]
    CHECK_THROWS_AS(cs.observe(row2(1, 0), scalar(5.0), 0.1), InconsistencyError);
}

TEST_CASE("malformed observations are load errors", "[consist]") {
    ConsistentSet cs(0, square(-1, 1), 0xc004);
    CHECK_THROWS_AS(cs.observe(Mat::Zero(1, 3), scalar(0), 0.1), LoadError);
    CHECK_THROWS_AS(cs.observe(Mat::Zero(2, 2), scalar(0), 0.1), LoadError);
    CHECK_THROWS_AS(cs.observe(row2(1, 0), scalar(0), -0.1), LoadError);
}

TEST_CASE("the true parameter is never cut from the set", "[consist]") {
    std::vector<SubsystemSpec> specs = {{2, 1}, {1, 1}};
    const auto t = make_topology(specs, {{0, 1}, {1, 0}}, {{0, 1}, {1, 0}});
    Rng rng(0xc005);
    const double W = 0.3;

    std::vector<Vec> thetas;
    std::vector<ConsistentSet> sets;
    std::vector<Vec> probe_dirs;
    for (int i = 0; i < t.count(); ++i) {
        const int d = theta_layout(t, i).dim;
        Vec th(d);
        for (int k = 0; k < d; ++k) th(k) = rng.uniform(-0.6, 0.6);
        thetas.push_back(th);
        sets.emplace_back(i, Polytope::box(Vec(th.array() - 1.0), Vec(th.array() + 1.0)),
                          seed_child(0xc005, kSeedSteiner, i));
        probe_dirs.push_back(rng.sphere_dir(d));
    }
    const auto g = assemble_global(t, thetas);

    std::vector<double> last_support(static_cast<std::size_t>(t.count()),
                                     std::numeric_limits<double>::infinity());
    Vec x = Vec::Zero(t.total_states);
    for (int step = 0; step < 50; ++step) {
        const Vec u = rng.normal_vec(t.total_inputs);
        Vec w(t.total_states);
        for (int k = 0; k < w.size(); ++k) w(k) = rng.uniform(-W, W);
        const Vec x_next = step_truth(g, x, u, w);
        for (int i = 0; i < t.count(); ++i) {
            const Mat Z = local_regressor_global(t, i, x, u);
            auto& cs = sets[static_cast<std::size_t>(i)];
            cs.observe(Z, x_next.segment(t.state_base(i), t.state_dim(i)), W);
            CHECK(cs.polytope().contains(thetas[static_cast<std::size_t>(i)], 1e-9));
            if (step % 5 == 0) {
                const Vec& sel = cs.select(seed_child(0xc005, kSeedSteiner, i));
                CHECK(cs.polytope().contains(sel, 1e-7));
                // Nestedness, read through the support function.
                const double h =
                    support_value(cs.polytope(), probe_dirs[static_cast<std::size_t>(i)]);
                CHECK(h <= last_support[static_cast<std::size_t>(i)] + 1e-9);
                last_support[static_cast<std::size_t>(i)] = h;
            }
        }
        x = x_next;
    }
}

TEST_CASE("selection starts at the prior box center and stays put without cuts", "[consist]") {
    Vec lo(2), hi(2);
    lo << -1, -2;
    hi << 3, 0;
    ConsistentSet cs(0, Polytope::box(lo, hi), 0xc006);
    Rng rng(0xc006);

    // First selection matches the plain helper bit for bit.
    Rng replay(0xc006);
    const Vec direct = steiner_point(Polytope::box(lo, hi), 64 * 2, replay);
    const Vec first = cs.select(0xc006);
    CHECK((first - direct).norm() == 0.0);
    CHECK((first - Vec(0.5 * (lo + hi))).lpNorm<Eigen::Infinity>() < 1e-9);

    for (int step = 0; step < 20; ++step) {
        const Vec v = rng.sphere_dir(2);
        cs.observe(Mat(v.transpose()), scalar(0.0), 1e3);  // slab far outside the box
        const Vec sel = cs.select(0xc006);
        CHECK((sel - first).norm() == 0.0);
    }
    CHECK(cs.path_length() == 0.0);
    CHECK(cs.observation_count() == 20);
}

TEST_CASE("movement over an adversarial shrink stays within the Steiner budget", "[consist]") {
    const Polytope prior = square(-1, 1);
    ConsistentSet cs(0, prior, 0xc007);
    Rng rng(0xc007);
    Vec target(2);
    target << 0.28, -0.14;
    for (int step = 0; step < 100; ++step) {
        const Vec v = rng.sphere_dir(2);
        cs.observe(Mat(v.transpose()), scalar(v.dot(target)), 0.3);
        const Vec& sel = cs.select(0xc007);
        CHECK(cs.polytope().contains(sel, 1e-7));
    }
    const double budget = (2.0 / 2.0) * box_diameter(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
    CHECK(cs.path_length() <= budget * 1.1);
    CHECK(cs.path_length() > 0.0);
}

TEST_CASE("a fresh seed draws fresh directions but stays feasible", "[consist]") {
    ConsistentSet cs(0, square(-1, 1), 0xc008);
    cs.observe(row2(1, 0.2), scalar(0.4), 0.25);
    cs.observe(row2(-0.3, 1), scalar(-0.1), 0.25);
    const Vec a = cs.select(0xc008);
    const Vec b = cs.select(0x5eed);
    CHECK(cs.polytope().contains(a, 1e-7));
    CHECK(cs.polytope().contains(b, 1e-7));
    CHECK(cs.path_length() == Catch::Approx((a - b).norm()));
    CHECK((cs.current() - b).norm() == 0.0);
}

TEST_CASE("periodic pruning leaves selection and feasibility untouched", "[consist]") {
    ConsistentSet cs(0, square(-1, 1, 3), 0xc009);
    Rng rng(0xc009);
    Vec target(3);
    target << 0.2, -0.1, 0.05;
    Vec before_prune;
    int size_at_99 = 0;
    for (int step = 1; step <= 110; ++step) {
        const Vec v = rng.sphere_dir(3);
        cs.observe(Mat(v.transpose()), scalar(v.dot(target)), 50.0);  // never cuts the box
        if (step == 99) {
            before_prune = cs.select(0xc009);
            size_at_99 = cs.polytope().size();
        }
    }
    CHECK(size_at_99 == 6 + 2 * 99);
    CHECK(cs.polytope().size() <= 6 + 2 * 10);  // the sweep at step 100 drained the backlog
    const Vec after = cs.select(0xc009);
    CHECK((after - before_prune).norm() == 0.0);
    CHECK(cs.path_length() == 0.0);
}

TEST_CASE("a single candidate behaves exactly like plain consist", "[consist]") {
    ConsistentSet plain(0, square(-1, 1), 0xc00a);
    SetSelect ss(0, {square(-1, 1)}, 0xc00a);
    Rng rng(0xc00a);
    Vec target(2);
    target << -0.3, 0.4;
    for (int step = 0; step < 10; ++step) {
        const Vec v = rng.sphere_dir(2);
        const Mat Z(v.transpose());
        const Vec x = scalar(v.dot(target));
        plain.observe(Z, x, 0.4);
        ss.observe(Z, x, 0.4);
        CHECK((plain.select(0xc00a) - ss.select(0xc00a)).norm() == 0.0);
    }
    CHECK(ss.restart_count() == 0);
    CHECK(ss.active_index() == 0);
}

TEST_CASE("falsified candidates are discarded and history replays", "[consist]") {
    // Truth lives in the second box; the first is plausible only while the
    // regressor is weak.
    const Polytope far = square(2, 3);
    const Polytope near = square(-1, 1);
    SetSelect ss(0, {far, near}, 0xc00b);
    Vec theta(2);
    theta << 0.5, -0.3;

    ss.observe(row2(0.1, 0), scalar(0.05), 0.2);  // a in [-1.5, 2.5]: both alive
    CHECK(ss.restart_count() == 0);
    CHECK(ss.active_index() == 0);
    const Vec sel0 = ss.select(0xc00b);
    CHECK(far.contains(sel0, 1e-7));

    ss.observe(row2(1, 0), scalar(0.5), 0.2);  // a in [0.3, 0.7]: kills the far box
    CHECK(ss.restart_count() == 1);
    CHECK(ss.active_index() == 1);
    const Vec sel1 = ss.select(0xc00b);
    CHECK(near.contains(sel1, 1e-7));
    // Replay made the new active set honor the first observation too.
    CHECK(std::abs(0.1 * sel1(0) - 0.05) <= 0.2 + 1e-7);
    CHECK(std::abs(sel1(0) - 0.5) <= 0.2 + 1e-7);

    ss.observe(row2(0, 1), scalar(-0.3), 0.2);  // consistent with truth
    CHECK(ss.restart_count() == 1);

    // Now contradict everything that is left.
    CHECK_THROWS_AS(ss.observe(row2(1, 0), scalar(5.0), 0.2), InconsistencyError);
}
