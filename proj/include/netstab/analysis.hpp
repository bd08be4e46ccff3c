#pragma once

// =============================================================================
// Post-hoc trace analysis. Everything here re-derives its claims from the
// logged record alone: the per-step drift of the implemented closed-loop
// operators, the closed-form envelope that drift implies for the estimate
// recursion, the exact state/input representation identities, decay and
// divergence metrics, and side-by-side run comparison.
// =============================================================================

#include "netstab/controller.hpp"
#include "netstab/core.hpp"
#include "netstab/dynamics.hpp"
#include "netstab/sim.hpp"
#include "netstab/topology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace netstab {

namespace detail {

/// Induced infinity norm (max absolute row sum): the right operator norm for
/// propagating entrywise-bounded vectors.
[[nodiscard]] inline double inf_norm(const Mat& m) {
    if (m.size() == 0) return 0.0;
    return m.cwiseAbs().rowwise().sum().maxCoeff();
}

}  // namespace detail

/// Per-tick drift of the in-effect closed-loop operators: how far yesterday's
/// operators, pushed once through today's selected model, land from today's
/// operators. drift[t-1][k-1] covers tick t >= 1 and tap k in 1..H; the total
/// is the budget the envelope bound consumes.
struct ErrorSeries {
    int horizon = 0;
    std::vector<std::vector<double>> drift;
    std::vector<double> cumulative;  // running total after each covered tick
    double total = 0.0;
};

[[nodiscard]] inline ErrorSeries compute_error_series(const NetworkTopology& t,
                                                      const DelayTable& dt, const NeighborSets& ns,
                                                      const TraceLog& tr) {
    if (tr.theta.empty()) throw LoadError("error series: the run kept no model trace");
    const int H = tr.horizon_h;
    const long long T = static_cast<long long>(tr.theta.size());
    ErrorSeries es;
    es.horizon = H;
    GlobalOperators prev = assemble_from_bundles(t, dt, ns, tr.bundles, 0, H);
    for (long long tick = 1; tick < T; ++tick) {
        const GlobalDynamics g = assemble_global(t, tr.theta[static_cast<std::size_t>(tick)]);
        GlobalOperators cur = assemble_from_bundles(t, dt, ns, tr.bundles, tick, H);
        std::vector<double> row(static_cast<std::size_t>(H));
        for (int k = 1; k <= H; ++k)
            row[static_cast<std::size_t>(k - 1)] = detail::inf_norm(
                g.A * prev.phi_x[static_cast<std::size_t>(k - 1)] +
                g.B * prev.phi_u[static_cast<std::size_t>(k - 1)] -
                cur.phi_x[static_cast<std::size_t>(k)]);
        for (double v : row) es.total += v;
        es.drift.push_back(std::move(row));
        es.cumulative.push_back(es.total);
        prev = std::move(cur);
    }
    return es;
}

/// Closed-form envelope for sequences obeying s_t <= sum_k a_t[k] s_{t-k} + W
/// over a window of H taps, when the coefficient mass across the whole run is
/// at most L: geometric forgetting of s0 plus a drift-amplified noise floor.
struct ConvolutionBound {
    double s0 = 0.0;
    double noise = 0.0;
    double mass = 0.0;
    int horizon = 1;

    [[nodiscard]] double operator()(long long t) const {
        const double e = std::exp(1.0);
        return std::exp(-static_cast<double>(t) / horizon) * std::exp(mass) * s0 +
               noise * (std::exp(mass) + e - 1.0) / (e - 1.0);
    }
};

[[nodiscard]] inline ConvolutionBound convolution_bound(double s0, double noise, int horizon,
                                                        double mass) {
    if (horizon < 1) throw LoadError("convolution bound: horizon must be at least 1");
    if (s0 < 0 || noise < 0 || mass < 0)
        throw LoadError("convolution bound: arguments must be non-negative");
    return ConvolutionBound{s0, noise, mass, horizon};
}

/// Exact bookkeeping residuals of a run: how far the logged states and inputs
/// are from the convolution of the in-effect operators with the logged
/// estimates, and how far the logged transitions stray from each tick's
/// selected model (consistency puts the latter within the assumed bound).
struct IdentityReport {
    double max_state_residual = 0.0;
    double max_input_residual = 0.0;
    double max_model_residual = 0.0;
};

[[nodiscard]] inline IdentityReport verify_closed_loop_identity(const NetworkTopology& t,
                                                                const DelayTable& dt,
                                                                const NeighborSets& ns,
                                                                const TraceLog& tr) {
    if (tr.theta.empty())
        throw LoadError("identity check: the run kept no model trace");
    const int H = tr.horizon_h;
    const long long T = static_cast<long long>(tr.theta.size());
    IdentityReport rep;
    for (long long tick = 0; tick < T; ++tick) {
        const GlobalOperators ops = assemble_from_bundles(t, dt, ns, tr.bundles, tick, H);
        Vec x_pred = Vec::Zero(t.total_states);
        Vec u_pred = Vec::Zero(t.total_inputs);
        for (long long k = 0; k <= std::min<long long>(H - 1, tick); ++k) {
            const Vec& wh = tr.what[static_cast<std::size_t>(tick - k)];
            x_pred += ops.phi_x[static_cast<std::size_t>(k)] * wh;
            u_pred += ops.phi_u[static_cast<std::size_t>(k)] * wh;
        }
        rep.max_state_residual = std::max(
            rep.max_state_residual,
            (x_pred - tr.x[static_cast<std::size_t>(tick)]).lpNorm<Eigen::Infinity>());
        rep.max_input_residual = std::max(
            rep.max_input_residual,
            (u_pred - tr.u[static_cast<std::size_t>(tick)]).lpNorm<Eigen::Infinity>());
        if (tick >= 1) {
            const GlobalDynamics g =
                assemble_global(t, tr.theta[static_cast<std::size_t>(tick)]);
            const Vec res = tr.x[static_cast<std::size_t>(tick)] -
                            g.A * tr.x[static_cast<std::size_t>(tick) - 1] -
                            g.B * tr.u[static_cast<std::size_t>(tick) - 1];
            rep.max_model_residual =
                std::max(rep.max_model_residual, res.lpNorm<Eigen::Infinity>());
        }
    }
    return rep;
}

inline constexpr double kDivergenceGate = 1e9;
inline constexpr double kRestTol = 1e-9;

/// Peak norms plus a decay rate fitted to the post-quiet tail. The fit skips
/// the first H ticks after t_stop (estimates of pre-quiet disturbances are
/// still flushing through the window) and stops at the first tick the state
/// is at rest. Fewer than two usable points yield -inf when the trajectory
/// ended at rest and 0 when there was simply nothing to fit.
struct StabilityReport {
    double sup_x = 0.0;
    double sup_u = 0.0;
    double lambda = 0.0;
    bool diverged = false;
    long long blowup_time = -1;
    long long fit_begin = 0;
    long long fit_end = 0;  // exclusive
};

[[nodiscard]] inline StabilityReport stability_report(const TraceLog& tr, long long t_stop) {
    StabilityReport rep;
    for (std::size_t i = 0; i < tr.x.size(); ++i) {
        const double nx = tr.x[i].lpNorm<Eigen::Infinity>();
        if (nx > rep.sup_x) rep.sup_x = nx;
        if (!rep.diverged && (nx > kDivergenceGate || !std::isfinite(nx))) {
            rep.diverged = true;
            rep.blowup_time = static_cast<long long>(i);
        }
    }
    for (const Vec& u : tr.u) rep.sup_u = std::max(rep.sup_u, u.lpNorm<Eigen::Infinity>());

    const long long T = static_cast<long long>(tr.x.size());
    rep.fit_begin = std::min<long long>(t_stop + tr.horizon_h, T);
    rep.fit_end = rep.fit_begin;
    while (rep.fit_end < T &&
           tr.x[static_cast<std::size_t>(rep.fit_end)].lpNorm<Eigen::Infinity>() >= kRestTol)
        ++rep.fit_end;

    const long long pts = rep.fit_end - rep.fit_begin;
    if (pts < 2) {
        const bool at_rest =
            !tr.x.empty() && tr.x.back().lpNorm<Eigen::Infinity>() < kRestTol && !rep.diverged;
        rep.lambda = at_rest ? -std::numeric_limits<double>::infinity() : 0.0;
        return rep;
    }
    double st = 0, sy = 0, stt = 0, sty = 0;
    for (long long i = rep.fit_begin; i < rep.fit_end; ++i) {
        const double ti = static_cast<double>(i - rep.fit_begin);
        const double yi = std::log(tr.x[static_cast<std::size_t>(i)].lpNorm<Eigen::Infinity>());
        st += ti;
        sy += yi;
        stt += ti * ti;
        sty += ti * yi;
    }
    const double n = static_cast<double>(pts);
    rep.lambda = (n * sty - st * sy) / (n * stt - st * st);
    return rep;
}

/// Side-by-side metrics of two runs. Error totals are NaN for runs that kept
/// no model trace; movement is zero for runs that kept none. The peak ratio
/// follows IEEE division (inf when only the first run stayed at zero).
struct RunComparison {
    double sup_x_a = 0.0, sup_x_b = 0.0;
    double sup_u_a = 0.0, sup_u_b = 0.0;
    double peak_ratio = 0.0;  // sup_x_b / sup_x_a
    double movement_a = 0.0, movement_b = 0.0;
    double error_total_a = 0.0, error_total_b = 0.0;
};

[[nodiscard]] inline RunComparison compare_runs(const NetworkTopology& t, const DelayTable& dt,
                                                const NeighborSets& ns, const TraceLog& a,
                                                const TraceLog& b) {
    RunComparison c;
    for (const Vec& x : a.x) c.sup_x_a = std::max(c.sup_x_a, x.lpNorm<Eigen::Infinity>());
    for (const Vec& x : b.x) c.sup_x_b = std::max(c.sup_x_b, x.lpNorm<Eigen::Infinity>());
    for (const Vec& u : a.u) c.sup_u_a = std::max(c.sup_u_a, u.lpNorm<Eigen::Infinity>());
    for (const Vec& u : b.u) c.sup_u_b = std::max(c.sup_u_b, u.lpNorm<Eigen::Infinity>());
    c.peak_ratio = c.sup_x_b / c.sup_x_a;
    c.movement_a = a.movement.empty() ? 0.0 : a.movement.back();
    c.movement_b = b.movement.empty() ? 0.0 : b.movement.back();
    c.error_total_a = a.theta.empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : compute_error_series(t, dt, ns, a).total;
    c.error_total_b = b.theta.empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : compute_error_series(t, dt, ns, b).total;
    return c;
}

}  // namespace netstab
