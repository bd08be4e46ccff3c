#pragma once

// =============================================================================
// Episode driver. Runs the closed loop tick by tick: deliver queued messages,
// fold the newest transition into each subsystem's consistent set, re-select a
// model, re-synthesize columns when the delayed model view changed, estimate
// the local disturbance, act, then let the plant and the disturbance policy
// move the state. Every random draw descends from the scenario seed, and the
// loop is single-threaded, so a scenario replays bit for bit.
// =============================================================================

#include "netstab/consist.hpp"
#include "netstab/controller.hpp"
#include "netstab/core.hpp"
#include "netstab/dynamics.hpp"
#include "netstab/geometry.hpp"
#include "netstab/rng.hpp"
#include "netstab/sls.hpp"
#include "netstab/topology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

namespace netstab {

/// Everything needed to reproduce one run. Q and R left empty mean identity;
/// x0 left empty means the origin.
struct Scenario {
    std::string name;
    NetworkTopology topology;
    std::vector<Vec> theta_true;            // ground-truth parameters per subsystem
    std::vector<Vec> theta_lo, theta_hi;    // prior box per subsystem
    double w_true = 0.0;                    // actual disturbance magnitude
    double w_assumed = 0.0;                 // bound the learners certify against
    int dbar = 1;                           // locality radius (hops)
    int horizon_h = 1;                      // column horizon
    long long steps = 0;
    Mat Q, R;
    std::string disturbance = "uniform";    // uniform | sign-adversary | impulse-then-zero
    long long t_stop = 0;                   // impulse-then-zero: first disturbance-free tick
    std::uint64_t seed = 0;
    std::string algorithm = "consist-sls";  // consist-sls | sysid-baseline | zero-control
    bool synth_on_change_only = false;      // skip synthesis when the delayed model is unchanged
    Vec x0;
};

inline void validate_scenario(const Scenario& s) {
    const NetworkTopology& t = s.topology;
    if (t.count() < 1) throw LoadError("scenario: empty topology");
    if (s.steps < 1) throw LoadError("scenario: steps must be positive");
    if (s.dbar < 1) throw LoadError("scenario: dbar must be at least 1");
    if (s.horizon_h < 1) throw LoadError("scenario: horizon must be at least 1");
    if (s.w_true < 0) throw LoadError("scenario: negative disturbance magnitude");
    if (s.w_assumed < s.w_true)
        throw LoadError("scenario: assumed disturbance bound " + std::to_string(s.w_assumed) +
                        " is below the actual magnitude " + std::to_string(s.w_true));
    if (!validate_assumption_comm(t).empty())
        throw LoadError("scenario: a dynamic coupling has no one-hop communication link");
    const int N = t.count();
    if (static_cast<int>(s.theta_true.size()) != N || static_cast<int>(s.theta_lo.size()) != N ||
        static_cast<int>(s.theta_hi.size()) != N)
        throw LoadError("scenario: theta lists must have one entry per subsystem");
    for (int i = 0; i < N; ++i) {
        const int dim = theta_layout(t, i).dim;
        const Vec& tru = s.theta_true[static_cast<std::size_t>(i)];
        const Vec& lo = s.theta_lo[static_cast<std::size_t>(i)];
        const Vec& hi = s.theta_hi[static_cast<std::size_t>(i)];
        if (tru.size() != dim || lo.size() != dim || hi.size() != dim)
            throw LoadError("scenario: theta dimension mismatch at subsystem " + std::to_string(i));
        if ((lo.array() > hi.array()).any())
            throw LoadError("scenario: empty prior box at subsystem " + std::to_string(i));
        if ((tru.array() < lo.array()).any() || (tru.array() > hi.array()).any())
            throw LoadError("scenario: true parameters escape the prior box at subsystem " +
                            std::to_string(i));
    }
    if (s.disturbance != "uniform" && s.disturbance != "sign-adversary" &&
        s.disturbance != "impulse-then-zero")
        throw LoadError("scenario: unknown disturbance policy '" + s.disturbance + "'");
    if (s.t_stop < 0) throw LoadError("scenario: negative t_stop");
    if (s.algorithm != "consist-sls" && s.algorithm != "sysid-baseline" &&
        s.algorithm != "zero-control")
        throw LoadError("scenario: unknown algorithm '" + s.algorithm + "'");
    if (s.algorithm == "sysid-baseline" && N != 1)
        throw LoadError("scenario: sysid-baseline requires a centralized (single subsystem) run");
    if (s.Q.size() && (s.Q.rows() != t.total_states || s.Q.cols() != t.total_states))
        throw LoadError("scenario: Q must be square over the global state");
    if (s.R.size() && (s.R.rows() != t.total_inputs || s.R.cols() != t.total_inputs))
        throw LoadError("scenario: R must be square over the global input");
    if (s.x0.size() && s.x0.size() != t.total_states)
        throw LoadError("scenario: x0 dimension mismatch");
}

/// Complete record of a run. x has steps+1 entries; u, w, what one per tick.
/// theta and movement are kept only by runs that maintain them (consist-sls).
struct TraceLog {
    std::string scenario;
    std::string algorithm;
    int horizon_h = 0;
    long long steps = 0;
    std::vector<Vec> x;
    std::vector<Vec> u, w, what;
    std::vector<std::vector<Vec>> theta;   // per tick: the selected model of each subsystem
    std::vector<SubController> bundles;    // shipped bundles, stamp-ascending per owner
    std::vector<double> movement;          // cumulative selection travel after each tick
    long long ident_done = -1;             // sysid-baseline: first certainty-equivalence tick
};

/// Point-to-point queues with per-link hop delay. A payload becomes visible to
/// its receiver exactly at the due tick; each tick drains everything due, and
/// a leftover from an earlier tick means the loop skipped a delivery.
class MessageBus {
  public:
    MessageBus(const DelayTable& dt, const NeighborSets& ns)
        : dt_(&dt), ns_(&ns), n_(static_cast<int>(ns.in.size())) {
        const std::size_t links = static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_);
        what_q_.resize(links);
        col_q_.resize(links);
    }

    void send_what(int src, long long time, const Vec& payload) {
        for (int dst : ns_->out[static_cast<std::size_t>(src)]) {
            if (dst == src) continue;
            what_q_[link(dst, src)].push_back(
                {time + dt_->from_to(src, dst), time, payload});
        }
    }

    void send_columns(int src, const SubController& sc) {
        for (int dst : ns_->out[static_cast<std::size_t>(src)]) {
            if (dst == src) continue;
            col_q_[link(dst, src)].push_back({sc.stamp + dt_->from_to(src, dst), sc});
        }
    }

    void deliver(long long time, std::vector<ControllerState>& states) {
        for (int dst = 0; dst < n_; ++dst) {
            for (int src : ns_->in[static_cast<std::size_t>(dst)]) {
                if (src == dst) continue;
                auto& cq = col_q_[link(dst, src)];
                while (!cq.empty() && cq.front().due <= time) {
                    if (cq.front().due < time)
                        throw CausalityError("bus: missed a column delivery on link " +
                                             std::to_string(src) + "->" + std::to_string(dst));
                    states[static_cast<std::size_t>(dst)].receive_columns(
                        std::move(cq.front().sc));
                    cq.pop_front();
                }
                auto& wq = what_q_[link(dst, src)];
                while (!wq.empty() && wq.front().due <= time) {
                    if (wq.front().due < time)
                        throw CausalityError("bus: missed an estimate delivery on link " +
                                             std::to_string(src) + "->" + std::to_string(dst));
                    states[static_cast<std::size_t>(dst)].receive_what(
                        src, wq.front().stamp, std::move(wq.front().payload));
                    wq.pop_front();
                }
            }
        }
    }

  private:
    struct WhatMsg {
        long long due = 0;
        long long stamp = 0;
        Vec payload;
    };
    struct ColMsg {
        long long due = 0;
        SubController sc;
    };

    [[nodiscard]] std::size_t link(int dst, int src) const {
        return static_cast<std::size_t>(dst) * static_cast<std::size_t>(n_) +
               static_cast<std::size_t>(src);
    }

    const DelayTable* dt_;
    const NeighborSets* ns_;
    int n_;
    std::vector<std::deque<WhatMsg>> what_q_;
    std::vector<std::deque<ColMsg>> col_q_;
};

namespace detail {

/// Scenario disturbance generator. The adversary pushes with full magnitude
/// along the plant's most expansive direction; the impulse policy draws
/// uniformly until t_stop and is exactly zero afterwards.
class DisturbancePolicy {
  public:
    DisturbancePolicy(const Scenario& s, const GlobalDynamics& truth)
        : w_(s.w_true),
          t_stop_(s.t_stop),
          n_(static_cast<int>(truth.A.rows())),
          rng_(seed_child(s.seed, kSeedDisturbance)) {
        if (s.disturbance == "sign-adversary") {
            kind_ = Kind::Adversary;
            Eigen::JacobiSVD<Mat> svd(truth.A, Eigen::ComputeFullV);
            v_ = svd.matrixV().col(0);
        } else if (s.disturbance == "impulse-then-zero") {
            kind_ = Kind::Impulse;
        }
    }

    [[nodiscard]] Vec operator()(long long t, const Vec& x) {
        switch (kind_) {
            case Kind::Adversary: {
                const double proj = v_.dot(x);
                Vec w(n_);
                for (int r = 0; r < n_; ++r) w(r) = w_ * (v_(r) * proj >= 0 ? 1.0 : -1.0);
                return w;
            }
            case Kind::Impulse:
                if (t >= t_stop_) return Vec::Zero(n_);
                [[fallthrough]];
            case Kind::Uniform: {
                Vec w(n_);
                for (int r = 0; r < n_; ++r) w(r) = rng_.uniform(-w_, w_);
                return w;
            }
        }
        return Vec::Zero(n_);
    }

  private:
    enum class Kind { Uniform, Adversary, Impulse };
    Kind kind_ = Kind::Uniform;
    double w_;
    long long t_stop_;
    int n_;
    Rng rng_;
    Vec v_;
};

[[nodiscard]] inline bool same_vec(const Vec& a, const Vec& b) {
    return a.size() == b.size() && (a.array() == b.array()).all();
}

[[nodiscard]] inline bool same_thetas(const std::vector<Vec>& a, const std::vector<Vec>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!same_vec(a[i], b[i])) return false;
    return true;
}

/// Equality of the operative content only; stamps and solver diagnostics are
/// ignored so an unchanged controller is never re-shipped.
[[nodiscard]] inline bool same_columns(const std::vector<ClosedLoopColumn>& a,
                                       const std::vector<ClosedLoopColumn>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t q = 0; q < a.size(); ++q) {
        if (a[q].phi_x.size() != b[q].phi_x.size() || a[q].phi_u.size() != b[q].phi_u.size())
            return false;
        for (std::size_t k = 0; k < a[q].phi_x.size(); ++k)
            if (!same_vec(a[q].phi_x[k], b[q].phi_x[k])) return false;
        for (std::size_t k = 0; k < a[q].phi_u.size(); ++k)
            if (!same_vec(a[q].phi_u[k], b[q].phi_u[k])) return false;
    }
    return true;
}

inline TraceLog run_zero_control(const Scenario& s, const NetworkTopology& t,
                                 const GlobalDynamics& truth) {
    TraceLog tr;
    tr.scenario = s.name;
    tr.algorithm = s.algorithm;
    tr.horizon_h = s.horizon_h;
    tr.steps = s.steps;
    DisturbancePolicy pol(s, truth);
    Vec x = s.x0.size() ? s.x0 : Vec::Zero(t.total_states);
    tr.x.push_back(x);
    for (long long tick = 0; tick < s.steps; ++tick) {
        const Vec u = Vec::Zero(t.total_inputs);
        const Vec w = pol(tick, x);
        x = step_truth(truth, x, u, w);
        tr.u.push_back(u);
        tr.w.push_back(w);
        tr.what.push_back(Vec::Zero(t.total_states));
        tr.x.push_back(x);
    }
    return tr;
}

inline TraceLog run_consist_sls(const Scenario& s, const NetworkTopology& t, const DelayTable& dt,
                                const NeighborSets& ns, const GlobalDynamics& truth, const Mat& Q,
                                const Mat& R) {
    const int N = t.count();
    const int H = s.horizon_h;
    TraceLog tr;
    tr.scenario = s.name;
    tr.algorithm = s.algorithm;
    tr.horizon_h = H;
    tr.steps = s.steps;

    std::vector<std::uint64_t> sel_seed(static_cast<std::size_t>(N));
    std::vector<ConsistentSet> sets;
    sets.reserve(static_cast<std::size_t>(N));
    std::vector<ControllerState> states;
    states.reserve(static_cast<std::size_t>(N));
    std::vector<SparsityMask> masks;
    masks.reserve(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        sel_seed[static_cast<std::size_t>(i)] =
            seed_child(s.seed, kSeedSteiner, static_cast<std::uint64_t>(i));
        sets.emplace_back(i,
                          Polytope::box(s.theta_lo[static_cast<std::size_t>(i)],
                                        s.theta_hi[static_cast<std::size_t>(i)]),
                          sel_seed[static_cast<std::size_t>(i)]);
        states.emplace_back(t, dt, ns.in[static_cast<std::size_t>(i)], i, H);
        masks.push_back(build_sparsity_masks(t, dt, i, s.dbar, H));
    }
    MessageBus bus(dt, ns);
    DisturbancePolicy pol(s, truth);

    std::vector<std::vector<Vec>> sel_hist;                // [tick][subsystem]
    std::vector<std::vector<Vec>> last_model(static_cast<std::size_t>(N));
    std::vector<std::vector<ClosedLoopColumn>> last_shipped(static_cast<std::size_t>(N));

    Vec x = s.x0.size() ? s.x0 : Vec::Zero(t.total_states);
    Vec x_prev, u_prev;
    tr.x.push_back(x);

    for (long long tick = 0; tick < s.steps; ++tick) {
        bus.deliver(tick, states);

        // Learn from the newest transition, then re-select a plausible model.
        sel_hist.emplace_back(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i) {
            auto& cs = sets[static_cast<std::size_t>(i)];
            if (tick >= 1)
                cs.observe(local_regressor_global(t, i, x_prev, u_prev),
                           x.segment(t.state_base(i), t.state_dim(i)), s.w_assumed);
            sel_hist.back()[static_cast<std::size_t>(i)] =
                cs.select(sel_seed[static_cast<std::size_t>(i)]);
        }

        // Re-synthesize from each subsystem's delayed view of the selections.
        // A synthesis failure re-selects under a fresh direction set; bundles
        // ship only when their operative content actually changed.
        for (int i = 0; i < N; ++i) {
            for (int retry = 0;; ++retry) {
                std::vector<Vec> view(static_cast<std::size_t>(N));
                for (int l = 0; l < N; ++l) {
                    const long long lag = dt.from_to(l, i);
                    const long long at = std::max<long long>(0, tick - lag);
                    view[static_cast<std::size_t>(l)] =
                        sel_hist[static_cast<std::size_t>(at)][static_cast<std::size_t>(l)];
                }
                if (s.synth_on_change_only && tick > 0 &&
                    same_thetas(view, last_model[static_cast<std::size_t>(i)]))
                    break;
                try {
                    const GlobalDynamics model = assemble_global(t, view);
                    std::vector<ClosedLoopColumn> cols;
                    cols.reserve(static_cast<std::size_t>(t.state_dim(i)));
                    for (int q = 0; q < t.state_dim(i); ++q)
                        cols.push_back(synthesize_column(model, t.state_base(i) + q,
                                                         masks[static_cast<std::size_t>(i)], Q, R,
                                                         tick, static_cast<std::uint64_t>(tick)));
                    last_model[static_cast<std::size_t>(i)] = std::move(view);
                    if (tick == 0 ||
                        !same_columns(cols, last_shipped[static_cast<std::size_t>(i)])) {
                        SubController sc{i, tick, cols};
                        states[static_cast<std::size_t>(i)].receive_columns(sc);
                        bus.send_columns(i, sc);
                        tr.bundles.push_back(std::move(sc));
                        last_shipped[static_cast<std::size_t>(i)] = std::move(cols);
                    }
                    break;
                } catch (const SynthesisError&) {
                    if (retry >= 3) throw;
                    sel_seed[static_cast<std::size_t>(i)] =
                        seed_child(sel_seed[static_cast<std::size_t>(i)], kSeedSteiner,
                                   static_cast<std::uint64_t>(retry));
                    sel_hist.back()[static_cast<std::size_t>(i)] =
                        sets[static_cast<std::size_t>(i)].select(
                            sel_seed[static_cast<std::size_t>(i)]);
                }
            }
        }

        // Estimate, broadcast, act.
        Vec what_all(t.total_states);
        for (int i = 0; i < N; ++i) {
            const Vec wi = states[static_cast<std::size_t>(i)].estimate_disturbance(
                tick, x.segment(t.state_base(i), t.state_dim(i)));
            what_all.segment(t.state_base(i), t.state_dim(i)) = wi;
            bus.send_what(i, tick, wi);
        }
        Vec u(t.total_inputs);
        for (int i = 0; i < N; ++i)
            u.segment(t.input_base(i), t.input_dim(i)) =
                states[static_cast<std::size_t>(i)].compute_control(tick);

        const Vec w = pol(tick, x);
        double travel = 0;
        for (const auto& cs : sets) travel += cs.path_length();

        x_prev = x;
        u_prev = u;
        x = step_truth(truth, x, u, w);
        tr.u.push_back(u);
        tr.w.push_back(w);
        tr.what.push_back(what_all);
        tr.theta.push_back(sel_hist.back());
        tr.movement.push_back(travel);
        tr.x.push_back(x);
    }
    return tr;
}

inline TraceLog run_sysid_baseline(const Scenario& s, const NetworkTopology& t,
                                   const DelayTable& dt, const NeighborSets& ns,
                                   const GlobalDynamics& truth, const Mat& Q, const Mat& R) {
    const int n = t.total_states;
    const int m = t.total_inputs;
    const int H = s.horizon_h;
    constexpr double kGrowth = 1.5;   // geometric excitation ramp
    constexpr double kIdTol = 0.05;   // required identification margin

    TraceLog tr;
    tr.scenario = s.name;
    tr.algorithm = s.algorithm;
    tr.horizon_h = H;
    tr.steps = s.steps;
    DisturbancePolicy pol(s, truth);
    Rng rng(seed_child(s.seed, kSeedSysid));
    Vec x = s.x0.size() ? s.x0 : Vec::Zero(n);
    tr.x.push_back(x);

    // Phase 1: ramp the plant along cycling axes until least squares pins the
    // model down to the required margin. The loud input drowns the bounded
    // disturbance, so the residual bound shrinks as the ramp grows.
    Mat Ahat, Bhat;
    bool identified = false;
    long long tick = 0;
    for (; tick < s.steps; ++tick) {
        Vec u = Vec::Zero(m);
        if (m > 0)
            u(static_cast<int>(tick % m)) = ((rng.next_u64() & 1u) ? 1.0 : -1.0) *
                                            std::pow(kGrowth, static_cast<double>(tick));
        const Vec w = pol(tick, x);
        x = step_truth(truth, x, u, w);
        tr.u.push_back(u);
        tr.w.push_back(w);
        tr.what.push_back(Vec::Zero(n));
        tr.x.push_back(x);

        const long long rows = tick + 1;
        if (rows < n + m) continue;
        Mat Phi(rows, n + m), Y(rows, n);
        for (long long r = 0; r < rows; ++r) {
            Phi.row(r).head(n) = tr.x[static_cast<std::size_t>(r)].transpose();
            Phi.row(r).tail(m) = tr.u[static_cast<std::size_t>(r)].transpose();
            Y.row(r) = tr.x[static_cast<std::size_t>(r) + 1].transpose();
        }
        Eigen::JacobiSVD<Mat> svd(Phi, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const double smin = svd.singularValues().minCoeff();
        if (smin <= 1e-12) continue;
        if (s.w_assumed * std::sqrt(static_cast<double>(rows * n)) / smin > kIdTol) continue;
        const Mat AB = svd.solve(Y);
        Ahat = AB.topRows(n).transpose();
        Bhat = AB.bottomRows(m).transpose();
        identified = true;
        ++tick;
        break;
    }
    if (!identified)
        throw NumericError("sysid-baseline: identification did not converge within the episode");
    tr.ident_done = tick;

    // Phase 2: certainty equivalence. Treat the state at handover as a fresh
    // disturbance by seeding an all-zero estimate window behind it.
    const GlobalDynamics model{Ahat, Bhat};
    const SparsityMask mask = build_sparsity_masks(t, dt, 0, s.dbar, H);
    SubController sc{0, tick, {}};
    sc.columns.reserve(static_cast<std::size_t>(n));
    for (int q = 0; q < n; ++q)
        sc.columns.push_back(
            synthesize_column(model, q, mask, Q, R, tick, static_cast<std::uint64_t>(tick)));
    ControllerState st(t, dt, ns.in[0], 0, H);
    st.receive_columns(sc);
    tr.bundles.push_back(std::move(sc));
    for (long long past = std::max<long long>(0, tick - (H - 1)); past < tick; ++past)
        st.receive_what(0, past, Vec::Zero(n));

    for (; tick < s.steps; ++tick) {
        const Vec wi = st.estimate_disturbance(tick, x);
        const Vec u = st.compute_control(tick);
        const Vec w = pol(tick, x);
        x = step_truth(truth, x, u, w);
        tr.u.push_back(u);
        tr.w.push_back(w);
        tr.what.push_back(wi);
        tr.x.push_back(x);
    }
    return tr;
}

}  // namespace detail

/// Validates the scenario and runs it to completion under its algorithm.
[[nodiscard]] inline TraceLog run_episode(const Scenario& s) {
    validate_scenario(s);
    const NetworkTopology& t = s.topology;
    const DelayTable dt = delay_table(t);
    const NeighborSets ns = neighbor_sets(t, dt, s.dbar);
    const GlobalDynamics truth = assemble_global(t, s.theta_true);
    const Mat Q = s.Q.size() ? s.Q : Mat::Identity(t.total_states, t.total_states);
    const Mat R = s.R.size() ? s.R : Mat::Identity(t.total_inputs, t.total_inputs);
    if (s.algorithm == "zero-control") return detail::run_zero_control(s, t, truth);
    if (s.algorithm == "sysid-baseline")
        return detail::run_sysid_baseline(s, t, dt, ns, truth, Q, R);
    return detail::run_consist_sls(s, t, dt, ns, truth, Q, R);
}

}  // namespace netstab
