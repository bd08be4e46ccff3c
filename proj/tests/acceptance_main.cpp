// Acceptance battery: one PASS/FAIL line per criterion, with the pinned
// tolerance printed next to the measurement. Exits nonzero if any line fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "netstab/cli.hpp"

using namespace netstab;

namespace {

int failures = 0;
std::map<int, std::string> lines;

void report(int index, const char* label, bool pass, const std::string& what) {
    char head[64];
    std::snprintf(head, sizeof head, "[%d/9] %-28s %s  ", index, label, pass ? "PASS" : "FAIL");
    lines[index] = head + what;
    if (!pass) ++failures;
}

std::string num(double v) { return netstab::detail::short_num(v); }

// ------------------------------------------------------------------ 1 and 9
//
// Random well-posed scenarios: the communication graph is complete (radius 1)
// or a star (radius 2), so the synthesis masks are full and feasibility only
// needs an invertible global B. Input blocks are kept diagonally dominant over
// the whole prior box; cross couplings enter through A.

Scenario random_scenario(int index) {
    Rng rng(seed_child(0xacce97u, static_cast<std::uint64_t>(index)));
    const int sizes[3] = {3, 5, 8};
    const int N = sizes[index % 3];
    const int dbar = 1 + index % 2;
    const int H = (index / 2) % 2 ? 5 : 3;

    std::vector<SubsystemSpec> shape;
    for (int i = 0; i < N; ++i) {
        const int n = 1 + static_cast<int>(rng.next_u64() & 1);
        shape.push_back({n, n});
    }

    std::vector<std::pair<int, int>> comm;
    if (dbar == 1) {
        for (int a = 0; a < N; ++a)
            for (int b = 0; b < N; ++b)
                if (a != b) comm.push_back({a, b});
    } else {
        for (int leaf = 1; leaf < N; ++leaf) {
            comm.push_back({0, leaf});
            comm.push_back({leaf, 0});
        }
    }

    // reader i may couple to any j with a one-hop link j -> i; cap the
    // in-degree so the parameter spaces stay small
    std::vector<std::pair<int, int>> dyn;
    for (int i = 0; i < N; ++i) {
        int taken = 0;
        for (const auto& [src, dst] : comm) {
            if (dst != i || taken >= 2) continue;
            if (rng.uniform(0.0, 1.0) < 0.6) {
                dyn.push_back({i, src});
                ++taken;
            }
        }
    }

    Scenario s;
    s.name = "random-" + std::to_string(index);
    s.topology = make_topology(shape, dyn, comm);
    const NetworkTopology& t = s.topology;
    for (int i = 0; i < N; ++i) {
        const int dim = theta_layout(t, i).dim;
        Vec tru(dim), lo(dim), hi(dim);
        int off = 0;
        auto put = [&](double v, double hw) {
            tru(off) = v;
            lo(off) = v - hw;
            hi(off) = v + hw;
            ++off;
        };
        for (int j : t.dyn_neighbors[static_cast<std::size_t>(i)])
            for (int r = 0; r < t.state_dim(i); ++r)
                for (int c = 0; c < t.state_dim(j); ++c) {
                    if (j == i && r == c)
                        put(rng.uniform(0.9, 1.2), 0.15);
                    else
                        put(rng.uniform(-0.2, 0.2), 0.1);
                }
        for (int j : t.dyn_neighbors[static_cast<std::size_t>(i)])
            for (int r = 0; r < t.state_dim(i); ++r)
                for (int c = 0; c < t.input_dim(j); ++c) {
                    if (j == i && r == c)
                        put(rng.uniform(0.9, 1.1), 0.1);
                    else if (j == i)
                        put(rng.uniform(-0.05, 0.05), 0.05);
                    else
                        put(0.0, 0.02);
                }
        s.theta_true.push_back(std::move(tru));
        s.theta_lo.push_back(std::move(lo));
        s.theta_hi.push_back(std::move(hi));
    }
    s.w_true = 0.08;
    s.w_assumed = 0.1;
    s.dbar = dbar;
    s.horizon_h = H;
    s.steps = 200;
    s.disturbance = "uniform";
    s.seed = seed_child(0xacce98u, static_cast<std::uint64_t>(index));
    return s;
}

void criteria_identity_and_envelope() {
    double worst_state = 0.0, worst_input = 0.0, worst_model_excess = 0.0;
    double worst_margin = std::numeric_limits<double>::infinity();
    bool dominated = true;
    for (int index = 0; index < 20; ++index) {
        const Scenario s = random_scenario(index);
        const auto t0 = std::chrono::steady_clock::now();
        const TraceLog tr = run_episode(s);
        log_debug(s.name + ": " +
                  std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                               t0)
                                     .count()) +
                  "s");
        const DelayTable dt = delay_table(s.topology);
        const NeighborSets ns = neighbor_sets(s.topology, dt, s.dbar);
        const IdentityReport ir = verify_closed_loop_identity(s.topology, dt, ns, tr);
        worst_state = std::max(worst_state, ir.max_state_residual);
        worst_input = std::max(worst_input, ir.max_input_residual);
        worst_model_excess =
            std::max(worst_model_excess, ir.max_model_residual - s.w_assumed);
        const ErrorSeries es = compute_error_series(s.topology, dt, ns, tr);
        const detail::EnvelopeCheck ec = detail::envelope_check(s, tr, es);
        dominated = dominated && ec.dominated;
        const ConvolutionBound cb = convolution_bound(ec.s0, s.w_assumed, s.horizon_h, es.total);
        for (std::size_t k = 0; k < tr.what.size(); ++k)
            worst_margin = std::min(worst_margin, cb(static_cast<long long>(k)) -
                                                      tr.what[k].lpNorm<Eigen::Infinity>());
    }
    report(1, "closed-loop identity",
           worst_state <= 1e-7 && worst_input <= 1e-7 && worst_model_excess <= 1e-7,
           "20 scenarios, residuals state " + num(worst_state) + " input " + num(worst_input) +
               " model excess " + num(worst_model_excess) + " (tol 1e-7)");
    report(9, "estimate envelope", dominated,
           "20 scenarios, min bound margin " + num(worst_margin) + " (tol -1e-9)");
}

// ---------------------------------------------------------------------- 2
//
// Dense oracle: eliminate the states through the recursion, solve the
// equality-constrained least squares over the stacked inputs by a full KKT
// factorization, and compare objective values.

double oracle_objective(const Mat& A, const Mat& B, int j, int H, const Mat& Q, const Mat& R) {
    const int n = static_cast<int>(A.rows());
    const int m = static_cast<int>(B.cols());
    const int nu = m * H;
    Mat F = Mat::Zero(n, nu);
    Vec a = Vec::Zero(n);
    a(j) = 1.0;
    Mat G = Mat::Zero(nu, nu);
    Vec g = Vec::Zero(nu);
    double c0 = Q(j, j);
    Mat C;
    Vec d;
    for (int k = 1; k <= H; ++k) {
        Mat Fn = A * F;
        Fn.middleCols((k - 1) * m, m) += B;
        F = Fn;
        a = (A * a).eval();
        if (k < H) {
            G += F.transpose() * Q * F;
            g += F.transpose() * (Q * a);
            c0 += a.dot(Q * a);
        } else {
            C = F;
            d = -a;
        }
    }
    for (int k = 0; k < H; ++k) G.block(k * m, k * m, m, m) += R;

    Mat kkt = Mat::Zero(nu + n, nu + n);
    kkt.topLeftCorner(nu, nu) = 2.0 * G;
    kkt.topRightCorner(nu, n) = C.transpose();
    kkt.bottomLeftCorner(n, nu) = C;
    Vec rhs(nu + n);
    rhs.head(nu) = -2.0 * g;
    rhs.tail(n) = d;
    const Vec sol = Eigen::FullPivLU<Mat>(kkt).solve(rhs);
    const Vec u = sol.head(nu);
    return u.dot(G * u) + 2.0 * g.dot(u) + c0;
}

void criterion_synthesis_optimality() {
    Rng rng(0x0bac1eu);
    double worst_rel = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(4));
        const int m = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        // m inputs reach at most m new directions per step: H*m >= n keeps
        // the H-step grammian generically nonsingular
        const int h_min = std::max(2, (n + m - 1) / m);
        const int H = h_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(6 - h_min)));
        Mat A(n, n), B(n, m);
        do {
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < n; ++c) A(r, c) = rng.uniform(-1.2, 1.2);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < m; ++c) B(r, c) = rng.uniform(-1.0, 1.0);
        } while (controllability_grammians(A, B, H).sigma_min_u < 1e-4);
        Vec q(n), r(m);
        for (int k = 0; k < n; ++k) q(k) = rng.uniform(0.5, 2.0);
        for (int k = 0; k < m; ++k) r(k) = rng.uniform(0.5, 2.0);
        const Mat Q = Mat(q.asDiagonal());
        const Mat R = Mat(r.asDiagonal());
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));

        const NetworkTopology t = make_topology({{n, m}}, {{0, 0}}, {});
        const SparsityMask mask = build_sparsity_masks(t, delay_table(t), 0, 1, H);
        const ClosedLoopColumn col = synthesize_column({A, B}, j, mask, Q, R);
        const double ref = oracle_objective(A, B, j, H, Q, R);
        worst_rel = std::max(worst_rel,
                             std::abs(col.objective - ref) / std::max(1.0, std::abs(ref)));
    }

    // hand-derived scalar instance: a = b = 1, H = 2
    const NetworkTopology t1 = make_topology({{1, 1}}, {{0, 0}}, {});
    const SparsityMask mask1 = build_sparsity_masks(t1, delay_table(t1), 0, 1, 2);
    const ClosedLoopColumn scalar = synthesize_column(
        {Mat::Ones(1, 1), Mat::Ones(1, 1)}, 0, mask1, Mat::Identity(1, 1), Mat::Identity(1, 1));
    const double hand = std::max({std::abs(scalar.phi_u[0](0) + 2.0 / 3.0),
                                  std::abs(scalar.phi_u[1](0) + 1.0 / 3.0),
                                  std::abs(scalar.phi_x[1](0) - 1.0 / 3.0)});

    report(2, "synthesis optimality", worst_rel <= 1e-8 && hand <= 1e-9,
           "50 models, worst relative objective gap " + num(worst_rel) +
               " (tol 1e-8); scalar hand oracle gap " + num(hand) + " (tol 1e-9)");
}

// ---------------------------------------------------------------------- 3
//
// The selector is exercised as a pure chaser: an adversary repeatedly cuts
// halfway between the current selection and a protected interior point. The
// cuts arrive as one-sided observations (the far side of the band is slack).

void criterion_path_length() {
    bool ok = true;
    double worst_ratio = 0.0;
    for (int d = 2; d <= 4; ++d) {
        const double diam = 2.0 * std::sqrt(static_cast<double>(d));
        const double bound = 1.1 * (static_cast<double>(d) / 2.0) * diam;
        for (int script = 0; script < 10; ++script) {
            const std::uint64_t tag = static_cast<std::uint64_t>(d * 16 + script);
            Rng rng(seed_child(0x5c71b7u, tag));
            ConsistentSet cs(0, Polytope::box(Vec::Constant(d, -1.0), Vec::Constant(d, 1.0)),
                             seed_child(0xd12u, tag));
            Vec survivor(d);
            for (int k = 0; k < d; ++k) survivor(k) = rng.uniform(-0.5, 0.5);
            const double slack = 20.0 * std::sqrt(static_cast<double>(d));
            Vec sel = cs.select(tag);
            for (int cut = 0; cut < 60; ++cut) {
                Vec normal = sel - survivor;
                if (normal.norm() < 1e-12) break;
                normal /= normal.norm();
                const double level = normal.dot(0.5 * (sel + survivor));
                cs.observe(normal.transpose(), Vec::Constant(1, level - slack), slack);
                sel = cs.select(tag);
            }
            worst_ratio = std::max(worst_ratio, cs.path_length() / bound);
            ok = ok && cs.path_length() <= bound;
        }
    }
    report(3, "selector path length", ok,
           "30 scripts over d in {2,3,4}, worst movement at " + num(100.0 * worst_ratio) +
               "% of 1.1*(d/2)*diam");
}

// ---------------------------------------------------------------------- 4

void criterion_envelope_oracle() {
    Rng rng(0x1e44a2u);
    const int T = 50;
    int violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int H = 1 + static_cast<int>(rng.below(5));
        const double L = rng.uniform(0.0, 3.0);
        const double W = rng.uniform(0.0, 0.5);
        const double s0 = rng.uniform(0.0, 5.0);
        std::vector<std::vector<double>> a(
            static_cast<std::size_t>(T) + 1,
            std::vector<double>(static_cast<std::size_t>(H) + 1, 0.0));
        if (trial % 2 == 0) {
            double total = 0.0;
            for (int t = 1; t <= T; ++t)
                for (int k = 1; k <= H; ++k) {
                    a[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
                        rng.uniform(0.0, 1.0);
                    total += a[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
                }
            const double scale = total > 0 ? L * rng.uniform(0.0, 1.0) / total : 0.0;
            for (auto& row : a)
                for (double& v : row) v *= scale;
        } else {
            a[1 + rng.below(static_cast<std::uint64_t>(T))]
             [1 + rng.below(static_cast<std::uint64_t>(H))] = L;
        }
        const auto bound = convolution_bound(s0, W, H, L);
        std::vector<double> s(static_cast<std::size_t>(T) + 1, 0.0);
        s[0] = s0;
        if (s[0] > bound(0) + 1e-9) ++violations;
        for (int t = 1; t <= T; ++t) {
            double v = W;
            for (int k = 1; k <= std::min(H, t); ++k)
                v += a[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] *
                     s[static_cast<std::size_t>(t - k)];
            s[static_cast<std::size_t>(t)] = v;
            if (v > bound(t) + 1e-9) ++violations;
        }
    }
    report(4, "envelope oracle", violations == 0,
           "1000 random recursions, " + std::to_string(violations) +
               " violations (tol 1e-9)");
}

// ---------------------------------------------------------------------- 5
//
// A compact family is the sample itself: its grammian extremes feed the
// sensitivity constants, and every pair must respect the Lipschitz bound.

void criterion_sensitivity() {
    Rng rng(0x5e4517u);
    const int H = 4;
    const Mat Q = Mat::Identity(2, 2);
    const Mat R = Mat::Identity(2, 2);
    const NetworkTopology t = make_topology({{2, 2}}, {{0, 0}}, {});
    const SparsityMask mask = build_sparsity_masks(t, delay_table(t), 0, 1, H);

    std::vector<Mat> As, Bs;
    SetBounds sb;
    sb.sigma_u_min = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 200; ++k) {
        Mat A(2, 2), B(2, 2);
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) {
                A(r, c) = r == c ? rng.uniform(0.8, 1.3) : rng.uniform(-0.3, 0.3);
                B(r, c) = r == c ? rng.uniform(0.9, 1.1) : rng.uniform(-0.1, 0.1);
            }
        const GrammianReport gr = controllability_grammians(A, B, H);
        sb.sigma_u_min = std::min(sb.sigma_u_min, gr.sigma_min_u);
        sb.sigma_u_max = std::max(sb.sigma_u_max, gr.sigma_max_u);
        sb.sigma_w_max = std::max(sb.sigma_w_max, gr.sigma_max_w);
        sb.alpha_H = std::max(sb.alpha_H, gr.alpha_H);
        sb.beta = std::max(sb.beta, operator_norm(B));
        As.push_back(std::move(A));
        Bs.push_back(std::move(B));
    }
    const SensitivityConstants sc = sensitivity_constants(sb, Q, R, H);

    int violations = 0;
    double worst_ratio = 0.0;
    for (int pair = 0; pair < 100; ++pair) {
        const Mat &A1 = As[2 * pair], &B1 = Bs[2 * pair];
        const Mat &A2 = As[2 * pair + 1], &B2 = Bs[2 * pair + 1];
        const double rhs =
            sc.gamma_a * (A1 - A2).norm() + sc.gamma_b * (B1 - B2).norm();
        for (int j = 0; j < 2; ++j) {
            const ClosedLoopColumn c1 = synthesize_column({A1, B1}, j, mask, Q, R);
            const ClosedLoopColumn c2 = synthesize_column({A2, B2}, j, mask, Q, R);
            double sq = 0.0;
            for (int k = 0; k <= H; ++k) sq += (c1.phi_x[k] - c2.phi_x[k]).squaredNorm();
            for (int k = 0; k < H; ++k) sq += (c1.phi_u[k] - c2.phi_u[k]).squaredNorm();
            const double lhs = std::sqrt(sq);
            worst_ratio = std::max(worst_ratio, lhs / rhs);
            if (lhs > rhs) ++violations;
        }
    }
    report(5, "synthesis sensitivity", violations == 0,
           "100 pairs x 2 columns, " + std::to_string(violations) +
               " violations, worst bound usage " + num(100.0 * worst_ratio) + "%");
}

// ---------------------------------------------------------------------- 6

void criterion_chain_stabilization() {
    const Scenario s = load_scenario(std::string(NETSTAB_SCENARIO_DIR) + "/chain5.json");
    const TraceLog tr = run_episode(s);
    const StabilityReport sr = stability_report(tr, s.t_stop);
    const double final_norm = tr.x.back().lpNorm<Eigen::Infinity>();
    const bool pass = !sr.diverged && std::isfinite(sr.sup_x) && sr.lambda < 0.0 &&
                      final_norm <= 1e-3 * sr.sup_x;
    report(6, "chain stabilization", pass,
           "sup " + num(sr.sup_x) + ", decay rate " + num(sr.lambda) + ", final/peak " +
               num(final_norm / sr.sup_x) + " (tol 1e-3)");
}

// ---------------------------------------------------------------------- 7

void criterion_baseline_separation() {
    Scenario s = load_scenario(std::string(NETSTAB_SCENARIO_DIR) + "/double_integrator.json");
    const TraceLog ours = run_episode(s);
    s.algorithm = "sysid-baseline";
    const TraceLog base = run_episode(s);
    const StabilityReport a = stability_report(ours, s.t_stop);
    const StabilityReport b = stability_report(base, s.t_stop);
    const double ratio = b.sup_x / a.sup_x;
    report(7, "baseline separation", ratio >= 10.0,
           "peak " + num(a.sup_x) + " vs baseline " + num(b.sup_x) + ", ratio " + num(ratio) +
               " (need >= 10)");
}

// ---------------------------------------------------------------------- 8
//
// Singleton prior: the selector can only return the truth, so the run must
// reduce to classical synthesis with exact disturbance recovery.

void criterion_known_model() {
    Scenario s;
    s.name = "singleton";
    s.topology = make_topology({{1, 1}}, {{0, 0}}, {});
    Vec th(2);
    th << 1.2, 1.0;
    s.theta_true = {th};
    s.theta_lo = {th};
    s.theta_hi = {th};
    s.w_true = 1.0;
    s.w_assumed = 1.0;
    s.horizon_h = 4;
    s.steps = 12;
    s.disturbance = "impulse-then-zero";
    s.t_stop = 1;
    s.seed = 11;
    const TraceLog tr = run_episode(s);

    double recover = tr.what[0].lpNorm<Eigen::Infinity>();
    for (std::size_t k = 1; k < tr.what.size(); ++k)
        recover = std::max(recover, (tr.what[k] - tr.w[k - 1]).lpNorm<Eigen::Infinity>());

    const DelayTable dt = delay_table(s.topology);
    const NeighborSets ns = neighbor_sets(s.topology, dt, s.dbar);
    const GlobalOperators ops =
        assemble_from_bundles(s.topology, dt, ns, tr.bundles, 0, s.horizon_h);
    const double w0 = tr.w[0](0);
    double impulse = 0.0;
    for (long long t = 1; t <= tr.steps; ++t) {
        const double want = t - 1 <= s.horizon_h
                                ? ops.phi_x[static_cast<std::size_t>(t - 1)](0, 0) * w0
                                : 0.0;
        impulse = std::max(impulse, std::abs(tr.x[static_cast<std::size_t>(t)](0) - want));
    }
    report(8, "known-model reduction", recover <= 1e-10 && impulse <= 1e-10,
           "recovery gap " + num(recover) + ", impulse response gap " + num(impulse) +
               " (tol 1e-10)");
}

}  // namespace

int main(int argc, char** argv) {
    // an optional argument narrows the battery to the named criteria,
    // e.g. `netstab_acceptance 35` runs only 3 and 5
    const auto wanted = [&](char c) { return argc < 2 || std::strchr(argv[1], c) != nullptr; };
    std::printf("acceptance battery, 9 criteria\n");
    if (wanted('1') || wanted('9')) criteria_identity_and_envelope();
    if (wanted('2')) criterion_synthesis_optimality();
    if (wanted('3')) criterion_path_length();
    if (wanted('4')) criterion_envelope_oracle();
    if (wanted('5')) criterion_sensitivity();
    if (wanted('6')) criterion_chain_stabilization();
    if (wanted('7')) criterion_baseline_separation();
    if (wanted('8')) criterion_known_model();
    for (const auto& [index, line] : lines) std::printf("%s\n", line.c_str());
    if (failures) {
        std::printf("%d criterion(s) FAILED\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
