#pragma once

// =============================================================================
// Consistent-set maintenance and Steiner-point parameter selection. Each
// subsystem owns one ConsistentSet: a polytope over its local parameter
// vector that only ever shrinks as transitions are observed, plus a cached
// support table that makes per-step reselection cheap (a direction is only
// re-solved when a new halfspace cuts off its cached argmax). SetSelect
// layers a union of candidate polytopes on top for non-convex priors.
// =============================================================================

#include "netstab/core.hpp"
#include "netstab/geometry.hpp"
#include "netstab/rng.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace netstab {

inline constexpr int kPrunePeriod = 100;  // observations between prune sweeps
inline constexpr int kPruneBudget = 200;  // LP solves per sweep

class ConsistentSet {
public:
    /// `prior` must be bounded (it is the known parameter box, so it is).
    /// `sample_count` <= 0 picks the default of 64 per ambient dimension.
    ConsistentSet(int owner, Polytope prior, std::uint64_t direction_seed, int sample_count = 0)
        : owner_(owner), poly_(std::move(prior)) {
        sample_count_ = sample_count > 0 ? sample_count : 64 * poly_.dim();
        reseed(direction_seed);
    }

    /// Narrows the set with one observed transition: every regressor row r
    /// contributes |Z_r theta - x_next(r)| <= w_bound as two halfspaces. Rows
    /// with a vanishing regressor carry no parameter information and only
    /// assert the disturbance bound itself. Throws InconsistencyError when
    /// the data contradicts w_bound.
    void observe(const Mat& Z, const Vec& x_next, double w_bound) {
        observe_impl(Z, x_next, w_bound, true);
    }

    /// Replay path: like observe() but skips the emptiness certificate so a
    /// long history can be ingested with one verify_nonempty() at the end.
    /// Sound because the set only ever shrinks.
    void observe_deferred(const Mat& Z, const Vec& x_next, double w_bound) {
        observe_impl(Z, x_next, w_bound, false);
    }

    void verify_nonempty() {
        if (have_hint_ && poly_.contains(hint_, kLpTol)) return;
        auto f = find_feasible(poly_);
        if (!f) throw InconsistencyError(empty_message());
        hint_ = *f;
        have_hint_ = true;
    }

    /// Steiner-point selection over the current set. The direction set is
    /// fixed per seed, so repeated selection without new cuts returns the
    /// identical point and adds no movement. Passing a different seed draws
    /// fresh directions (used to escape synthesis-hostile selections).
    const Vec& select(std::uint64_t seed) {
        if (seed != dir_seed_) reseed(seed);
        for (std::size_t m = 0; m < dirs_.size(); ++m) {
            if (valid_[m]) continue;
            const SupportResult s = support_point(poly_, dirs_[m], have_hint_ ? &hint_ : nullptr);
            if (s.status == SupportResult::Status::kUnbounded)
                throw NumericError("consist: unbounded consistent set; prior box missing");
            if (s.status == SupportResult::Status::kEmpty) throw InconsistencyError(empty_message());
            h_[m] = s.value;
            argmax_[m] = s.point;
            valid_[m] = true;
            hint_ = s.point;
            have_hint_ = true;
        }
        Vec est = steiner_estimate(dirs_, h_, poly_.dim());
        if (!poly_.contains(est, 1e-9))
            est = project_onto(poly_, est, have_hint_ ? &hint_ : nullptr).point;
        if (!history_.empty()) movement_ += (est - history_.back()).norm();
        history_.push_back(std::move(est));
        return history_.back();
    }

    [[nodiscard]] const Vec& current() const {
        if (history_.empty()) throw NetstabError("consist: no parameter selected yet");
        return history_.back();
    }

    [[nodiscard]] int owner() const { return owner_; }
    [[nodiscard]] const Polytope& polytope() const { return poly_; }
    [[nodiscard]] double path_length() const { return movement_; }
    [[nodiscard]] const std::vector<Vec>& history() const { return history_; }
    [[nodiscard]] int observation_count() const { return obs_count_; }

private:
    [[nodiscard]] std::string empty_message() const {
        return "consist: subsystem " + std::to_string(owner_) +
               " has an empty consistent set; the assumed disturbance bound is too small";
    }

    void reseed(std::uint64_t seed) {
        dir_seed_ = seed;
        Rng rng(seed);
        dirs_ = steiner_directions(poly_.dim(), sample_count_, rng);
        h_.assign(dirs_.size(), 0.0);
        argmax_.assign(dirs_.size(), Vec());
        valid_.assign(dirs_.size(), false);
    }

    void observe_impl(const Mat& Z, const Vec& x, double w, bool certify) {
        if (Z.cols() != poly_.dim())
            throw LoadError("consist: regressor width " + std::to_string(Z.cols()) +
                            " does not match parameter dimension " + std::to_string(poly_.dim()));
        if (Z.rows() != x.size()) throw LoadError("consist: regressor/observation row mismatch");
        if (w < 0.0) throw LoadError("consist: negative disturbance bound");
        ++obs_count_;
        const int first_new = poly_.size();
        for (int r = 0; r < Z.rows(); ++r) {
            const Vec a = Z.row(r).transpose();
            if (a.norm() < 1e-12) {
                if (std::abs(x(r)) > w + kLpTol)
                    throw InconsistencyError(
                        "consist: subsystem " + std::to_string(owner_) + " observed |x| = " +
                        format_g17(std::abs(x(r))) +
                        " with a zero regressor, exceeding the assumed bound " + format_g17(w));
                continue;
            }
            poly_.add(a, x(r) + w, obs_count_);
            poly_.add(-a, w - x(r), obs_count_);
        }
        for (std::size_t m = 0; m < dirs_.size(); ++m) {
            if (!valid_[m]) continue;
            for (int i = first_new; i < poly_.size(); ++i) {
                const auto& row = poly_.rows()[static_cast<std::size_t>(i)];
                if (row.a.dot(argmax_[m]) > row.b + 1e-12) {
                    valid_[m] = false;
                    break;
                }
            }
        }
        if (have_hint_ && !poly_.contains(hint_, kLpTol)) have_hint_ = false;
        if (certify) verify_nonempty();
        if (obs_count_ % kPrunePeriod == 0) prune_redundant(poly_, kPruneBudget);
    }

    int owner_;
    Polytope poly_;
    int sample_count_ = 0;
    std::uint64_t dir_seed_ = 0;
    std::vector<Vec> dirs_;
    std::vector<double> h_;
    std::vector<Vec> argmax_;
    std::vector<bool> valid_;
    Vec hint_;
    bool have_hint_ = false;
    std::vector<Vec> history_;
    double movement_ = 0.0;
    int obs_count_ = 0;
};

/// Union-of-polytopes prior. Runs ConsistentSet on one candidate at a time;
/// when observations falsify the active candidate, the next surviving one
/// (lowest index) is activated and the entire observation history is replayed
/// into it, so whatever it selects is consistent with all past data, not just
/// future data. Only when every candidate has been falsified is the
/// inconsistency real.
class SetSelect {
public:
    SetSelect(int owner, std::vector<Polytope> candidates, std::uint64_t direction_seed,
              int sample_count = 0)
        : owner_(owner), candidates_(std::move(candidates)), dir_seed_(direction_seed),
          sample_count_(sample_count) {
        if (candidates_.empty()) throw LoadError("setselect: needs at least one candidate set");
        const int d = candidates_.front().dim();
        for (const auto& c : candidates_)
            if (c.dim() != d) throw LoadError("setselect: candidate dimension mismatch");
        dead_.assign(candidates_.size(), false);
        active_ = build(0);
        active_idx_ = 0;
    }

    void observe(const Mat& Z, const Vec& x, double w) {
        history_.push_back({Z, x, w});
        try {
            active_->observe(Z, x, w);
            return;
        } catch (const InconsistencyError&) {
            dead_[static_cast<std::size_t>(active_idx_)] = true;
        }
        reactivate();
    }

    const Vec& select(std::uint64_t seed) {
        for (;;) {
            try {
                return active_->select(seed);
            } catch (const InconsistencyError&) {
                dead_[static_cast<std::size_t>(active_idx_)] = true;
                reactivate();
            }
        }
    }

    [[nodiscard]] const ConsistentSet& active() const { return *active_; }
    [[nodiscard]] int active_index() const { return active_idx_; }
    [[nodiscard]] int restart_count() const { return restarts_; }

private:
    struct Observation {
        Mat Z;
        Vec x;
        double w = 0.0;
    };

    [[nodiscard]] std::unique_ptr<ConsistentSet> build(int idx) {
        return std::make_unique<ConsistentSet>(
            owner_, candidates_[static_cast<std::size_t>(idx)], dir_seed_, sample_count_);
    }

    void reactivate() {
        for (std::size_t k = 0; k < candidates_.size(); ++k) {
            if (dead_[k]) continue;
            ++restarts_;
            auto cs = build(static_cast<int>(k));
            bool alive = true;
            try {
                for (const auto& o : history_) cs->observe_deferred(o.Z, o.x, o.w);
                cs->verify_nonempty();
            } catch (const InconsistencyError&) {
                alive = false;
            }
            if (alive) {
                active_ = std::move(cs);
                active_idx_ = static_cast<int>(k);
                return;
            }
            dead_[k] = true;
        }
        throw InconsistencyError("setselect: subsystem " + std::to_string(owner_) +
                                 " falsified every candidate set; the assumed disturbance bound "
                                 "is too small");
    }

    int owner_;
    std::vector<Polytope> candidates_;
    std::uint64_t dir_seed_;
    int sample_count_;
    std::vector<bool> dead_;
    std::unique_ptr<ConsistentSet> active_;
    int active_idx_ = 0;
    int restarts_ = 0;
    std::vector<Observation> history_;
};

}  // namespace netstab
