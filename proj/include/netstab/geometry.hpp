#pragma once

// =============================================================================
// Convex geometry kernel: halfspace polytopes, a dense two-phase simplex LP
// solver (Bland's rule, so it never cycles), Euclidean projection by a primal
// active-set method, and Monte-Carlo Steiner point estimation with antithetic
// orthonormal direction batches.
// =============================================================================

#include "netstab/core.hpp"
#include "netstab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace netstab {

inline constexpr double kLpTol = 1e-9;          // simplex pivot / feasibility tolerance
inline constexpr double kProjKktTol = 1e-7;     // projection optimality certificate
inline constexpr double kPruneMargin = 1e-9;    // redundancy slack in prune LPs

// -----------------------------------------------------------------------------
// Polytope
// -----------------------------------------------------------------------------

/// One inequality a.dot(x) <= b with unit-norm a. `generation` records when the
/// row was added (0 = initial box), which is what keeps the nestedness
/// bookkeeping honest: rows are only ever appended, never loosened.
struct Halfspace {
    Vec a;
    double b = 0.0;
    int generation = 0;
};

class Polytope {
public:
    explicit Polytope(int dim) : dim_(dim) {
        if (dim < 1) throw NumericError("polytope: dimension must be positive");
    }

    [[nodiscard]] static Polytope box(const Vec& lo, const Vec& hi) {
        if (lo.size() != hi.size()) throw NumericError("polytope box: lo/hi size mismatch");
        Polytope p(static_cast<int>(lo.size()));
        for (int k = 0; k < lo.size(); ++k) {
            if (lo(k) > hi(k)) throw NumericError("polytope box: lo > hi at entry " + std::to_string(k));
            Vec a = Vec::Zero(lo.size());
            a(k) = 1.0;
            p.add(a, hi(k), 0);
            p.add(-a, -lo(k), 0);
        }
        return p;
    }

    /// Appends a row after normalizing it. Rows with (near-)zero normals carry
    /// no direction and are rejected; the caller decides what a zero row means.
    void add(Vec a, double b, int generation) {
        const double n = a.norm();
        if (!(n > 1e-14)) throw NumericError("polytope: degenerate halfspace normal");
        rows_.push_back({a / n, b / n, generation});
    }

    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] int size() const { return static_cast<int>(rows_.size()); }
    [[nodiscard]] const std::vector<Halfspace>& rows() const { return rows_; }

    [[nodiscard]] bool contains(const Vec& x, double tol) const {
        for (const auto& r : rows_)
            if (r.a.dot(x) > r.b + tol) return false;
        return true;
    }

    /// Largest constraint violation at x (<= 0 means feasible).
    [[nodiscard]] double violation(const Vec& x) const {
        double v = -std::numeric_limits<double>::infinity();
        for (const auto& r : rows_) v = std::max(v, r.a.dot(x) - r.b);
        return v;
    }

    void remove_rows(const std::vector<int>& sorted_indices) {
        std::vector<Halfspace> kept;
        kept.reserve(rows_.size());
        std::size_t k = 0;
        for (int i = 0; i < static_cast<int>(rows_.size()); ++i) {
            if (k < sorted_indices.size() && sorted_indices[k] == i) {
                ++k;
                continue;
            }
            kept.push_back(std::move(rows_[static_cast<std::size_t>(i)]));
        }
        rows_ = std::move(kept);
    }

private:
    int dim_;
    std::vector<Halfspace> rows_;
};

[[nodiscard]] inline double box_diameter(const Vec& lo, const Vec& hi) { return (hi - lo).norm(); }

// -----------------------------------------------------------------------------
// Dense two-phase simplex.
//
// Canonical problem: maximize c.dot(z) subject to A z <= b, z >= 0. Rows with
// negative b get an artificial variable and phase 1 minimizes the artificial
// sum; both phases pick the lowest-index improving column and break ratio ties
// by lowest basis index (Bland's rule).
// -----------------------------------------------------------------------------

struct SimplexResult {
    enum class Status { kOptimal, kInfeasible, kUnbounded };
    Status status = Status::kInfeasible;
    Vec z;
    double value = 0.0;
};

namespace detail {

class SimplexTableau {
public:
    SimplexTableau(const Mat& A, const Vec& b) : m_(static_cast<int>(A.rows())), n_(static_cast<int>(A.cols())) {
        int n_art = 0;
        for (int i = 0; i < m_; ++i)
            if (b(i) < 0.0) ++n_art;
        cols_ = n_ + m_ + n_art;
        T_ = Mat::Zero(m_, cols_);
        rhs_ = Vec::Zero(m_);
        basis_.resize(static_cast<std::size_t>(m_));
        art_begin_ = n_ + m_;
        int art = art_begin_;
        for (int i = 0; i < m_; ++i) {
            const double s = b(i) < 0.0 ? -1.0 : 1.0;
            T_.row(i).head(n_) = s * A.row(i);
            T_(i, n_ + i) = s;
            rhs_(i) = s * b(i);
            if (s < 0.0) {
                T_(i, art) = 1.0;
                basis_[static_cast<std::size_t>(i)] = art++;
            } else {
                basis_[static_cast<std::size_t>(i)] = n_ + i;
            }
        }
    }

    [[nodiscard]] bool needs_phase1() const { return cols_ > art_begin_; }

    /// Returns false when the artificial sum cannot be driven to zero.
    bool phase1() {
        Eigen::RowVectorXd d = Eigen::RowVectorXd::Zero(cols_);
        for (int r = 0; r < m_; ++r)
            if (basis_[static_cast<std::size_t>(r)] >= art_begin_) d -= T_.row(r);
        // d holds reduced costs of "minimize artificial sum".
        for (int iter = 0; iter < kMaxIter; ++iter) {
            double art_sum = 0.0;
            for (int r = 0; r < m_; ++r)
                if (basis_[static_cast<std::size_t>(r)] >= art_begin_) art_sum += rhs_(r);
            if (art_sum <= 1e-11) break;
            int enter = -1;
            for (int j = 0; j < art_begin_; ++j) {
                if (d(j) < -kLpTol) {
                    enter = j;
                    break;
                }
            }
            if (enter < 0) return false;  // optimal but artificials remain positive
            const int leave = ratio_row(enter);
            if (leave < 0) return false;  // should not happen in phase 1
            pivot(leave, enter, &d);
        }
        double art_sum = 0.0;
        for (int r = 0; r < m_; ++r)
            if (basis_[static_cast<std::size_t>(r)] >= art_begin_) art_sum += rhs_(r);
        if (art_sum > 1e-9) return false;
        drive_out_artificials();
        return true;
    }

    SimplexResult::Status phase2(const Vec& c) {
        Eigen::RowVectorXd d = Eigen::RowVectorXd::Zero(cols_);
        d.head(n_) = c.transpose();
        for (int r = 0; r < m_; ++r) {
            const int b = basis_[static_cast<std::size_t>(r)];
            if (d(b) != 0.0) d -= d(b) * T_.row(r);
        }
        for (int iter = 0; iter < kMaxIter; ++iter) {
            int enter = -1;
            for (int j = 0; j < art_begin_; ++j) {
                if (d(j) > kLpTol) {
                    enter = j;
                    break;
                }
            }
            if (enter < 0) return SimplexResult::Status::kOptimal;
            const int leave = ratio_row(enter);
            if (leave < 0) return SimplexResult::Status::kUnbounded;
            pivot(leave, enter, &d);
        }
        throw NumericError("simplex: iteration cap hit");
    }

    [[nodiscard]] Vec structural_solution() const {
        Vec z = Vec::Zero(n_);
        for (int r = 0; r < m_; ++r) {
            const int b = basis_[static_cast<std::size_t>(r)];
            if (b < n_) z(b) = std::max(0.0, rhs_(r));
        }
        return z;
    }

private:
    static constexpr int kMaxIter = 200000;

    [[nodiscard]] int ratio_row(int enter) const {
        int leave = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int r = 0; r < m_; ++r) {
            const double a = T_(r, enter);
            if (a > kLpTol) {
                const double ratio = std::max(0.0, rhs_(r)) / a;
                if (ratio < best - 1e-12 ||
                    (ratio < best + 1e-12 && leave >= 0 &&
                     basis_[static_cast<std::size_t>(r)] < basis_[static_cast<std::size_t>(leave)])) {
                    best = ratio;
                    leave = r;
                }
            }
        }
        return leave;
    }

    void pivot(int r, int j, Eigen::RowVectorXd* d) {
        const double piv = T_(r, j);
        T_.row(r) /= piv;
        rhs_(r) /= piv;
        for (int q = 0; q < m_; ++q) {
            if (q == r) continue;
            const double f = T_(q, j);
            if (f != 0.0) {
                T_.row(q) -= f * T_.row(r);
                rhs_(q) -= f * rhs_(r);
                if (rhs_(q) < 0.0 && rhs_(q) > -1e-11) rhs_(q) = 0.0;
            }
        }
        const double fd = (*d)(j);
        if (fd != 0.0) *d -= fd * T_.row(r);
        basis_[static_cast<std::size_t>(r)] = j;
    }

    void drive_out_artificials() {
        for (int r = 0; r < m_; ++r) {
            if (basis_[static_cast<std::size_t>(r)] < art_begin_) continue;
            int j = -1;
            for (int cand = 0; cand < art_begin_; ++cand) {
                if (std::abs(T_(r, cand)) > kLpTol) {
                    j = cand;
                    break;
                }
            }
            if (j >= 0) {
                Eigen::RowVectorXd dummy = Eigen::RowVectorXd::Zero(cols_);
                pivot(r, j, &dummy);
            }
            // An all-zero row is a redundant constraint; the artificial stays
            // basic at value zero and, being banned from entering columns, is
            // inert for phase 2.
        }
    }

    int m_, n_, cols_, art_begin_;
    Mat T_;
    Vec rhs_;
    std::vector<int> basis_;
};

}  // namespace detail

[[nodiscard]] inline SimplexResult simplex_max(const Mat& A, const Vec& b, const Vec& c) {
    detail::SimplexTableau tab(A, b);
    SimplexResult res;
    if (tab.needs_phase1() && !tab.phase1()) {
        res.status = SimplexResult::Status::kInfeasible;
        return res;
    }
    res.status = tab.phase2(c);
    if (res.status != SimplexResult::Status::kOptimal) return res;
    res.z = tab.structural_solution();
    res.value = c.dot(res.z);
    return res;
}

// -----------------------------------------------------------------------------
// Support function over a polytope (free variables, optional warm hint)
// -----------------------------------------------------------------------------

struct SupportResult {
    enum class Status { kOptimal, kEmpty, kUnbounded };
    Status status = Status::kEmpty;
    double value = 0.0;
    Vec point;
};

namespace detail {

inline void stack_polytope(const Polytope& p, Mat* A, Vec* b) {
    const int m = p.size();
    const int d = p.dim();
    A->resize(m, d);
    b->resize(m);
    for (int i = 0; i < m; ++i) {
        A->row(i) = p.rows()[static_cast<std::size_t>(i)].a.transpose();
        (*b)(i) = p.rows()[static_cast<std::size_t>(i)].b;
    }
}

}  // namespace detail

/// Maximizes v.dot(x) over the polytope. If `hint` is a known feasible point
/// the variables are shifted so the slack basis is immediately feasible and
/// phase 1 is skipped entirely.
[[nodiscard]] inline SupportResult support_point(const Polytope& p, const Vec& v,
                                                 const Vec* hint = nullptr) {
    const int d = p.dim();
    Mat G;
    Vec h;
    detail::stack_polytope(p, &G, &h);

    Vec shift = Vec::Zero(d);
    if (hint != nullptr && hint->size() == d && p.contains(*hint, kLpTol)) {
        shift = *hint;
        h -= G * shift;
        for (int i = 0; i < h.size(); ++i)
            if (h(i) < 0.0) h(i) = 0.0;  // within tolerance of feasible; clamp inward
    }

    Mat A(G.rows(), 2 * d);
    A.leftCols(d) = G;
    A.rightCols(d) = -G;
    Vec c(2 * d);
    c.head(d) = v;
    c.tail(d) = -v;

    const SimplexResult lp = simplex_max(A, h, c);
    SupportResult out;
    switch (lp.status) {
        case SimplexResult::Status::kInfeasible:
            out.status = SupportResult::Status::kEmpty;
            return out;
        case SimplexResult::Status::kUnbounded:
            out.status = SupportResult::Status::kUnbounded;
            return out;
        case SimplexResult::Status::kOptimal:
            break;
    }
    out.status = SupportResult::Status::kOptimal;
    out.point = shift + lp.z.head(d) - lp.z.tail(d);
    out.value = v.dot(out.point);
    return out;
}

/// Phase-1 feasibility: any point of P, or nothing when P is empty.
[[nodiscard]] inline std::optional<Vec> find_feasible(const Polytope& p) {
    const SupportResult r = support_point(p, Vec::Zero(p.dim()));
    if (r.status != SupportResult::Status::kOptimal) return std::nullopt;
    return r.point;
}

// -----------------------------------------------------------------------------
// Euclidean projection onto a polytope (primal active-set QP)
// -----------------------------------------------------------------------------

struct ProjectionResult {
    Vec point;
    double kkt_residual = 0.0;
};

[[nodiscard]] inline ProjectionResult project_onto(const Polytope& p, const Vec& x0,
                                                   const Vec* feasible_hint = nullptr) {
    const int d = p.dim();
    const int m = p.size();
    if (p.contains(x0, 0.0)) return {x0, 0.0};

    Vec x;
    if (feasible_hint != nullptr && feasible_hint->size() == d && p.contains(*feasible_hint, kLpTol)) {
        x = *feasible_hint;
    } else {
        auto f = find_feasible(p);
        if (!f) throw InconsistencyError("project_onto: empty polytope");
        x = *f;
    }

    std::vector<int> active;
    for (int i = 0; i < m; ++i)
        if (std::abs(p.rows()[static_cast<std::size_t>(i)].a.dot(x) -
                     p.rows()[static_cast<std::size_t>(i)].b) <= 1e-10)
            active.push_back(i);

    Vec lambda;
    const int max_iter = 100 * (m + d) + 100;
    for (int iter = 0; iter < max_iter; ++iter) {
        // Equality-constrained projection onto the current active set.
        Mat Aw(static_cast<int>(active.size()), d);
        Vec bw(static_cast<int>(active.size()));
        for (std::size_t k = 0; k < active.size(); ++k) {
            Aw.row(static_cast<int>(k)) = p.rows()[static_cast<std::size_t>(active[k])].a.transpose();
            bw(static_cast<int>(k)) = p.rows()[static_cast<std::size_t>(active[k])].b;
        }
        Vec xs;
        if (active.empty()) {
            xs = x0;
            lambda.resize(0);
        } else {
            Eigen::CompleteOrthogonalDecomposition<Mat> cod(Aw * Aw.transpose());
            lambda = cod.solve(Aw * x0 - bw);
            xs = x0 - Aw.transpose() * lambda;
        }

        if ((xs - x).norm() <= 1e-12 * std::max(1.0, x.norm())) {
            // Stationary on the active set: check multiplier signs.
            int drop = -1;
            double most_neg = -1e-10;
            for (int k = 0; k < lambda.size(); ++k) {
                if (lambda(k) < most_neg) {
                    most_neg = lambda(k);
                    drop = k;
                }
            }
            if (drop < 0) break;  // KKT satisfied
            active.erase(active.begin() + drop);
            continue;
        }

        // Step toward xs, stopping at the first blocking constraint.
        const Vec step = xs - x;
        double alpha = 1.0;
        int block = -1;
        for (int i = 0; i < m; ++i) {
            if (std::find(active.begin(), active.end(), i) != active.end()) continue;
            const auto& row = p.rows()[static_cast<std::size_t>(i)];
            const double adv = row.a.dot(step);
            if (adv > 1e-13) {
                const double room = row.b - row.a.dot(x);
                const double a = room / adv;
                if (a < alpha - 1e-14) {
                    alpha = std::max(0.0, a);
                    block = i;
                }
            }
        }
        x += alpha * step;
        if (block >= 0)
            active.push_back(block);
        else if (alpha >= 1.0)
            x = xs;
    }

    // Certificate: stationarity with clamped multipliers + primal feasibility.
    Vec stat = x - x0;
    for (std::size_t k = 0; k < active.size(); ++k) {
        const double lk = k < static_cast<std::size_t>(lambda.size())
                              ? std::max(0.0, lambda(static_cast<int>(k)))
                              : 0.0;
        stat += lk * p.rows()[static_cast<std::size_t>(active[k])].a;
    }
    double res = stat.norm();
    res = std::max(res, p.violation(x));
    if (res > kProjKktTol)
        throw NumericError("project_onto: optimality certificate failed, residual " +
                           format_g17(res));
    return {x, res};
}

// -----------------------------------------------------------------------------
// Steiner point estimation
// -----------------------------------------------------------------------------

/// Directions come in antithetic orthonormal batches: each batch is the column
/// set of a random orthogonal matrix plus all negations, so every batch's
/// sum(v v^T) is exactly 2I. That makes the estimator exact on singletons and
/// keeps the chasing path bound tight without astronomical sample counts.
[[nodiscard]] inline std::vector<Vec> steiner_directions(int dim, int count, Rng& rng) {
    const int per_batch = 2 * dim;
    const int batches = std::max(1, (count + per_batch - 1) / per_batch);
    std::vector<Vec> dirs;
    dirs.reserve(static_cast<std::size_t>(batches * per_batch));
    for (int b = 0; b < batches; ++b) {
        Mat gauss(dim, dim);
        for (int r = 0; r < dim; ++r)
            for (int c = 0; c < dim; ++c) gauss(r, c) = rng.normal();
        Eigen::HouseholderQR<Mat> qr(gauss);
        Mat q = qr.householderQ();
        const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
        for (int c = 0; c < dim; ++c)
            if (r(c, c) < 0.0) q.col(c) *= -1.0;
        for (int c = 0; c < dim; ++c) {
            dirs.push_back(q.col(c));
            dirs.push_back(-q.col(c));
        }
    }
    return dirs;
}

/// Monte-Carlo Steiner estimate from precomputed support values:
/// (dim / M) * sum_m v_m h_m.
[[nodiscard]] inline Vec steiner_estimate(const std::vector<Vec>& dirs,
                                          const std::vector<double>& support_values, int dim) {
    Vec est = Vec::Zero(dim);
    for (std::size_t m = 0; m < dirs.size(); ++m) est += dirs[m] * support_values[m];
    est *= static_cast<double>(dim) / static_cast<double>(dirs.size());
    return est;
}

/// Steiner point of P: sample_count support evaluations (rounded up to full
/// antithetic batches), then a projection repair if the raw estimate escaped P.
[[nodiscard]] inline Vec steiner_point(const Polytope& p, int sample_count, Rng& rng) {
    const int d = p.dim();
    const std::vector<Vec> dirs = steiner_directions(d, sample_count, rng);
    std::vector<double> h(dirs.size());
    Vec hint;
    bool have_hint = false;
    for (std::size_t m = 0; m < dirs.size(); ++m) {
        const SupportResult s = support_point(p, dirs[m], have_hint ? &hint : nullptr);
        if (s.status != SupportResult::Status::kOptimal)
            throw InconsistencyError("steiner_point: empty or unbounded polytope");
        h[m] = s.value;
        hint = s.point;
        have_hint = true;
    }
    Vec est = steiner_estimate(dirs, h, d);
    if (!p.contains(est, 1e-9)) est = project_onto(p, est, &hint).point;
    return est;
}

// -----------------------------------------------------------------------------
// Redundancy pruning
// -----------------------------------------------------------------------------

struct PruneStats {
    int removed_duplicate = 0;
    int removed_lp = 0;
    int lp_solves = 0;
};

/// Removes rows that cannot change the feasible set: exact duplicates and
/// looser parallel copies first, then rows whose support over the remaining
/// set already stays below their offset. Generation-0 rows (the initial box)
/// are never dropped, so boundedness is preserved. `budget` caps LP solves.
inline PruneStats prune_redundant(Polytope& p, int budget) {
    PruneStats stats;
    const int m = p.size();
    std::vector<int> drop;

    // Parallel-row pass: keep only the tightest among rows with equal normals.
    std::vector<bool> dead(static_cast<std::size_t>(m), false);
    for (int i = 0; i < m; ++i) {
        if (dead[static_cast<std::size_t>(i)]) continue;
        for (int j = i + 1; j < m; ++j) {
            if (dead[static_cast<std::size_t>(j)]) continue;
            const auto& ri = p.rows()[static_cast<std::size_t>(i)];
            const auto& rj = p.rows()[static_cast<std::size_t>(j)];
            if ((ri.a - rj.a).lpNorm<Eigen::Infinity>() < 1e-12) {
                // Same direction: the larger offset is redundant. Prefer keeping
                // the generation-0 row when offsets tie.
                if (ri.b <= rj.b && rj.generation != 0) {
                    dead[static_cast<std::size_t>(j)] = true;
                } else if (rj.b < ri.b && ri.generation != 0) {
                    dead[static_cast<std::size_t>(i)] = true;
                    break;
                }
            }
        }
    }
    for (int i = 0; i < m; ++i)
        if (dead[static_cast<std::size_t>(i)]) drop.push_back(i);
    stats.removed_duplicate = static_cast<int>(drop.size());
    p.remove_rows(drop);

    // LP pass, oldest observation rows first.
    std::vector<int> order;
    for (int i = 0; i < p.size(); ++i)
        if (p.rows()[static_cast<std::size_t>(i)].generation > 0) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const auto& ra = p.rows()[static_cast<std::size_t>(a)];
        const auto& rb = p.rows()[static_cast<std::size_t>(b)];
        return ra.generation != rb.generation ? ra.generation < rb.generation : a < b;
    });

    std::vector<bool> gone(static_cast<std::size_t>(p.size()), false);
    std::vector<int> lp_drop;
    Vec hint;
    bool have_hint = false;
    for (int idx : order) {
        if (stats.lp_solves >= budget) break;
        // Build the polytope without row idx (and without rows already gone).
        Polytope q(p.dim());
        for (int i = 0; i < p.size(); ++i) {
            if (i == idx || gone[static_cast<std::size_t>(i)]) continue;
            const auto& r = p.rows()[static_cast<std::size_t>(i)];
            q.add(r.a, r.b, r.generation);
        }
        const auto& cand = p.rows()[static_cast<std::size_t>(idx)];
        ++stats.lp_solves;
        const SupportResult s = support_point(q, cand.a, have_hint ? &hint : nullptr);
        if (s.status != SupportResult::Status::kOptimal) continue;  // keep on any anomaly
        hint = s.point;
        have_hint = true;
        if (s.value <= cand.b + kPruneMargin) {
            gone[static_cast<std::size_t>(idx)] = true;
            lp_drop.push_back(idx);
        }
    }
    std::sort(lp_drop.begin(), lp_drop.end());
    stats.removed_lp = static_cast<int>(lp_drop.size());
    p.remove_rows(lp_drop);
    return stats;
}

}  // namespace netstab
