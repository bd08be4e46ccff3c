#pragma once

// =============================================================================
// Distributed controller runtime. Each subsystem estimates the disturbance
// hitting its own states by subtracting, from its observation, the response
// predicted by delayed neighbor columns and delayed neighbor estimates; its
// input is the convolution of those estimates with the delayed input columns:
//
//   what^i(t) = x^i(t) - sum_j sum_{k>=max(1,d(j->i))} phi^{j,x}[k](i) what^j(t-k)
//   u^i(t)    =          sum_j sum_{k>=d(j->i)}        phi^{j,u}[k](i) what^j(t-k)
//
// where phi^j is j's column bundle as of time t - d(j->i). Lags k < d(j->i)
// carry structurally zero coefficients (the synthesis mask), so skipping them
// is exact and keeps every read causal. The same delayed views assemble into
// the global closed-loop operators used by the rollout identities.
// =============================================================================

#include "netstab/core.hpp"
#include "netstab/sls.hpp"
#include "netstab/topology.hpp"

#include <algorithm>
#include <deque>
#include <string>
#include <utility>
#include <vector>

namespace netstab {

/// One subsystem's stamped bundle of synthesized columns, one per owned state
/// index in ascending order. A bundle stamped s is that subsystem's controller
/// from time s until it ships a newer one.
struct SubController {
    int owner = 0;
    long long stamp = 0;
    std::vector<ClosedLoopColumn> columns;
};

/// Per-subsystem controller memory: ring buffers of own and neighbor
/// disturbance estimates (window exactly H) and the received column bundles
/// per in-neighbor. Mutated only by its owner; the message bus is the only
/// path data takes between subsystems.
class ControllerState {
  public:
    ControllerState(const NetworkTopology& t, const DelayTable& dt, std::vector<int> in_neighbors,
                    int owner, int H)
        : topo_(&t), owner_(owner), H_(H), in_(std::move(in_neighbors)) {
        if (H < 1) throw LoadError("ControllerState: H < 1");
        if (owner < 0 || owner >= t.count()) throw LoadError("ControllerState: owner out of range");
        if (!std::is_sorted(in_.begin(), in_.end()) ||
            !std::binary_search(in_.begin(), in_.end(), owner_))
            throw GraphError("ControllerState: in-neighborhood must be sorted and contain the owner");
        delays_.reserve(in_.size());
        for (int j : in_) delays_.push_back(dt.from_to(j, owner_));
        whats_.resize(in_.size());
        history_.resize(in_.size());
    }

    [[nodiscard]] int owner() const { return owner_; }
    [[nodiscard]] int horizon() const { return H_; }
    [[nodiscard]] const std::vector<int>& in_neighbors() const { return in_; }

    /// Records a column bundle from an in-neighbor (or the owner itself).
    /// Stamps must arrive strictly increasing per source.
    void receive_columns(SubController sc) {
        const int s = slot(sc.owner);
        if (static_cast<int>(sc.columns.size()) != topo_->state_dim(sc.owner))
            throw LoadError("receive_columns: bundle from " + std::to_string(sc.owner) +
                            " must hold one column per owned state");
        for (int q = 0; q < static_cast<int>(sc.columns.size()); ++q) {
            const auto& col = sc.columns[static_cast<std::size_t>(q)];
            if (col.horizon != H_) throw LoadError("receive_columns: horizon mismatch");
            if (col.state_index != topo_->state_base(sc.owner) + q)
                throw LoadError("receive_columns: columns must be ascending by state index");
        }
        auto& hist = history_[static_cast<std::size_t>(s)];
        if (!hist.empty() && sc.stamp <= hist.back().stamp)
            throw CausalityError("receive_columns: stamp from " + std::to_string(sc.owner) +
                                 " does not advance");
        hist.push_back(std::move(sc));
    }

    /// Records what^j(time) as delivered by the bus. Times must arrive
    /// strictly increasing per source; the window keeps the H newest.
    void receive_what(int j, long long time, Vec what) {
        const int s = slot(j);
        if (what.size() != topo_->state_dim(j))
            throw LoadError("receive_what: dimension mismatch from " + std::to_string(j));
        auto& buf = whats_[static_cast<std::size_t>(s)];
        if (!buf.empty() && time <= buf.back().first)
            throw CausalityError("receive_what: time from " + std::to_string(j) +
                                 " does not advance");
        buf.emplace_back(time, std::move(what));
        while (static_cast<int>(buf.size()) > H_) buf.pop_front();
    }

    /// Latest bundle from j stamped at or before `cutoff`; a cutoff earlier
    /// than everything received falls back to the first bundle (the warm-up
    /// columns shipped at time zero).
    [[nodiscard]] const SubController& columns_as_of(int j, long long cutoff) const {
        const auto& hist = history_[static_cast<std::size_t>(slot(j))];
        if (hist.empty())
            throw CausalityError("columns_as_of: subsystem " + std::to_string(owner_) +
                                 " has no columns from " + std::to_string(j));
        const SubController* best = &hist.front();
        for (const auto& sc : hist)
            if (sc.stamp <= cutoff) best = &sc;
        return *best;
    }

    /// Disturbance estimate for the owner's states at time t; appends the
    /// result to the owner's own window.
    [[nodiscard]] Vec estimate_disturbance(long long t, const Vec& x_own) {
        if (t < 0) throw LoadError("estimate_disturbance: negative time");
        if (x_own.size() != topo_->state_dim(owner_))
            throw LoadError("estimate_disturbance: observation dimension mismatch");
        const int xb = topo_->state_base(owner_);
        const int nx = topo_->state_dim(owner_);
        Vec what = x_own;
        for (std::size_t s = 0; s < in_.size(); ++s) {
            const int j = in_[s];
            const long long lo = std::max<long long>(std::max(1, delays_[s]), 0);
            const long long hi = std::min<long long>(H_ - 1, t);
            if (lo > hi) continue;
            const auto& sc = columns_as_of(j, t - delays_[s]);
            for (long long k = lo; k <= hi; ++k) {
                const Vec& wj = delayed_what(static_cast<int>(s), t - k);
                for (int q = 0; q < static_cast<int>(sc.columns.size()); ++q)
                    what -= sc.columns[static_cast<std::size_t>(q)]
                                .phi_x[static_cast<std::size_t>(k)]
                                .segment(xb, nx) *
                            wj(q);
            }
        }
        receive_what(owner_, t, what);
        return what;
    }

    /// Control input for the owner's actuators at time t. Requires the
    /// owner's own estimate for t to be recorded already.
    [[nodiscard]] Vec compute_control(long long t) const {
        if (t < 0) throw LoadError("compute_control: negative time");
        const int ub = topo_->input_base(owner_);
        const int mu = topo_->input_dim(owner_);
        Vec u = Vec::Zero(mu);
        for (std::size_t s = 0; s < in_.size(); ++s) {
            const int j = in_[s];
            const long long lo = std::max(delays_[s], 0);
            const long long hi = std::min<long long>(H_ - 1, t);
            if (lo > hi) continue;
            const auto& sc = columns_as_of(j, t - delays_[s]);
            for (long long k = lo; k <= hi; ++k) {
                const Vec& wj = delayed_what(static_cast<int>(s), t - k);
                for (int q = 0; q < static_cast<int>(sc.columns.size()); ++q)
                    u += sc.columns[static_cast<std::size_t>(q)]
                             .phi_u[static_cast<std::size_t>(k)]
                             .segment(ub, mu) *
                         wj(q);
            }
        }
        return u;
    }

  private:
    [[nodiscard]] int slot(int j) const {
        const auto it = std::lower_bound(in_.begin(), in_.end(), j);
        if (it == in_.end() || *it != j)
            throw GraphError("subsystem " + std::to_string(j) + " is not in the in-neighborhood of " +
                             std::to_string(owner_));
        return static_cast<int>(it - in_.begin());
    }

    [[nodiscard]] const Vec& delayed_what(int s, long long time) const {
        const auto& buf = whats_[static_cast<std::size_t>(s)];
        for (auto it = buf.rbegin(); it != buf.rend(); ++it)
            if (it->first == time) return it->second;
        throw CausalityError("subsystem " + std::to_string(owner_) + " is missing what^" +
                             std::to_string(in_[static_cast<std::size_t>(s)]) + "(" +
                             std::to_string(time) + ")");
    }

    const NetworkTopology* topo_;
    int owner_, H_;
    std::vector<int> in_;
    std::vector<int> delays_;
    std::vector<std::deque<std::pair<long long, Vec>>> whats_;
    std::vector<std::vector<SubController>> history_;
};

// -----------------------------------------------------------------------------
// Global operators
// -----------------------------------------------------------------------------

/// The closed-loop maps implied by everyone's delayed views at one instant:
/// block (i, j) of Phi_x[k] is the i-rows of j's columns as j's bundle stood
/// at time t - d(j->i). Phi_x[0] is exactly the identity. Blocks are sourced
/// from each sender's own version timeline, which matches what the receiver
/// held whenever a delivery could have happened and pins the early entries
/// (t < d(j->i)) to the initial bundle.
struct GlobalOperators {
    int horizon = 0;
    std::vector<Mat> phi_x;  // k = 0..H
    std::vector<Mat> phi_u;  // k = 0..H-1
};

[[nodiscard]] inline GlobalOperators assemble_global_operators(
    const NetworkTopology& t, const DelayTable& dt, const std::vector<ControllerState>& states,
    long long time) {
    if (static_cast<int>(states.size()) != t.count())
        throw LoadError("assemble_global_operators: one state per subsystem required");
    for (int i = 0; i < t.count(); ++i)
        if (states[static_cast<std::size_t>(i)].owner() != i)
            throw LoadError("assemble_global_operators: states must be ordered by owner");
    const int H = states.front().horizon();
    for (const auto& s : states)
        if (s.horizon() != H) throw LoadError("assemble_global_operators: horizon mismatch");

    GlobalOperators ops;
    ops.horizon = H;
    ops.phi_x.assign(static_cast<std::size_t>(H) + 1, Mat::Zero(t.total_states, t.total_states));
    ops.phi_u.assign(static_cast<std::size_t>(H), Mat::Zero(t.total_inputs, t.total_states));
    for (int i = 0; i < t.count(); ++i) {
        const auto& st = states[static_cast<std::size_t>(i)];
        const int xb = t.state_base(i), nx = t.state_dim(i);
        const int ub = t.input_base(i), mu = t.input_dim(i);
        for (int j : st.in_neighbors()) {
            const auto& sc =
                states[static_cast<std::size_t>(j)].columns_as_of(j, time - dt.from_to(j, i));
            for (int q = 0; q < static_cast<int>(sc.columns.size()); ++q) {
                const auto& col = sc.columns[static_cast<std::size_t>(q)];
                const int gc = t.state_base(j) + q;
                for (int k = 0; k <= H; ++k)
                    ops.phi_x[static_cast<std::size_t>(k)].block(xb, gc, nx, 1) =
                        col.phi_x[static_cast<std::size_t>(k)].segment(xb, nx);
                for (int k = 0; k < H; ++k)
                    ops.phi_u[static_cast<std::size_t>(k)].block(ub, gc, mu, 1) =
                        col.phi_u[static_cast<std::size_t>(k)].segment(ub, mu);
            }
        }
    }
    if (!(ops.phi_x[0].array() == Mat::Identity(t.total_states, t.total_states).array()).all())
        throw NumericError("assemble_global_operators: step-0 state map is not the identity");
    return ops;
}

/// Same operators rebuilt post hoc from a flat list of stamped bundles (a
/// trace's column log): per sender, the latest bundle stamped at or before
/// t - d(j->i), falling back to the sender's first bundle for early times.
/// Bundles must be stamp-ascending per owner.
[[nodiscard]] inline GlobalOperators assemble_from_bundles(const NetworkTopology& t,
                                                           const DelayTable& dt,
                                                           const NeighborSets& ns,
                                                           const std::vector<SubController>& bundles,
                                                           long long time, int H) {
    std::vector<std::vector<const SubController*>> timeline(static_cast<std::size_t>(t.count()));
    for (const auto& sc : bundles) {
        if (sc.owner < 0 || sc.owner >= t.count())
            throw LoadError("assemble_from_bundles: bundle owner out of range");
        auto& tl = timeline[static_cast<std::size_t>(sc.owner)];
        if (!tl.empty() && sc.stamp <= tl.back()->stamp)
            throw LoadError("assemble_from_bundles: stamps must ascend per owner");
        tl.push_back(&sc);
    }
    auto resolve = [&](int j, long long cutoff) -> const SubController& {
        const auto& tl = timeline[static_cast<std::size_t>(j)];
        if (tl.empty())
            throw LoadError("assemble_from_bundles: no bundle from subsystem " + std::to_string(j));
        const SubController* best = tl.front();
        for (const SubController* sc : tl)
            if (sc->stamp <= cutoff) best = sc;
        return *best;
    };

    GlobalOperators ops;
    ops.horizon = H;
    ops.phi_x.assign(static_cast<std::size_t>(H) + 1, Mat::Zero(t.total_states, t.total_states));
    ops.phi_u.assign(static_cast<std::size_t>(H), Mat::Zero(t.total_inputs, t.total_states));
    for (int i = 0; i < t.count(); ++i) {
        const int xb = t.state_base(i), nx = t.state_dim(i);
        const int ub = t.input_base(i), mu = t.input_dim(i);
        for (int j : ns.in[static_cast<std::size_t>(i)]) {
            const auto& sc = resolve(j, time - dt.from_to(j, i));
            if (static_cast<int>(sc.columns.size()) != t.state_dim(j))
                throw LoadError("assemble_from_bundles: bundle size mismatch from " +
                                std::to_string(j));
            for (int q = 0; q < static_cast<int>(sc.columns.size()); ++q) {
                const auto& col = sc.columns[static_cast<std::size_t>(q)];
                if (col.horizon != H) throw LoadError("assemble_from_bundles: horizon mismatch");
                const int gc = t.state_base(j) + q;
                for (int k = 0; k <= H; ++k)
                    ops.phi_x[static_cast<std::size_t>(k)].block(xb, gc, nx, 1) =
                        col.phi_x[static_cast<std::size_t>(k)].segment(xb, nx);
                for (int k = 0; k < H; ++k)
                    ops.phi_u[static_cast<std::size_t>(k)].block(ub, gc, mu, 1) =
                        col.phi_u[static_cast<std::size_t>(k)].segment(ub, mu);
            }
        }
    }
    if (!(ops.phi_x[0].array() == Mat::Identity(t.total_states, t.total_states).array()).all())
        throw NumericError("assemble_from_bundles: step-0 state map is not the identity");
    return ops;
}

}  // namespace netstab
