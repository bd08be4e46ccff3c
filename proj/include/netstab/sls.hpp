#pragma once

// =============================================================================
// Closed-loop column synthesis. Each subsystem turns its model estimate into
// one column of the finite-horizon closed-loop response per owned state index:
// minimize the weighted H2 energy of the column subject to the rollout
// recursion, a hard zero at the horizon, and communication-range supports.
// In-mask states are eliminated through the recursion, so the decision
// variables are the free input entries; boundary and terminal rows become the
// equality constraints of a least-squares problem solved on the constraint
// nullspace. Also here: controllability grammians, the synthesis sensitivity
// constants, the column decay fit, and a feasibility probe over parameter
// boxes.
// =============================================================================

#include "netstab/core.hpp"
#include "netstab/dynamics.hpp"
#include "netstab/rng.hpp"
#include "netstab/topology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace netstab {

/// Relative pivot threshold for every rank decision in the synthesis path.
inline constexpr double kRankTol = 1e-10;

// -----------------------------------------------------------------------------
// Sparsity masks
// -----------------------------------------------------------------------------

/// Allowed support of subsystem `owner`'s columns, one index set per horizon
/// step k = 0..H-1: everything reachable from the owner within k communication
/// hops, capped at the locality radius dbar. Step 0 is always exactly the
/// owner's own block; the sets grow with k and saturate once k >= dbar.
struct SparsityMask {
    int owner = 0;
    int horizon = 0;
    std::vector<std::vector<int>> subsystems;     // per k, ascending ids
    std::vector<std::vector<int>> state_allowed;  // per k, global state indices
    std::vector<std::vector<int>> input_allowed;  // per k, global input indices
};

[[nodiscard]] inline SparsityMask build_sparsity_masks(const NetworkTopology& t,
                                                       const DelayTable& dt, int owner, int dbar,
                                                       int H) {
    if (H < 1) throw LoadError("build_sparsity_masks: H < 1");
    if (dbar < 0) throw LoadError("build_sparsity_masks: negative dbar");
    if (owner < 0 || owner >= t.count()) throw LoadError("build_sparsity_masks: owner out of range");
    SparsityMask m;
    m.owner = owner;
    m.horizon = H;
    m.subsystems.resize(static_cast<std::size_t>(H));
    m.state_allowed.resize(static_cast<std::size_t>(H));
    m.input_allowed.resize(static_cast<std::size_t>(H));
    for (int k = 0; k < H; ++k) {
        const int reach = std::min(k, dbar);
        auto& subs = m.subsystems[static_cast<std::size_t>(k)];
        for (int l = 0; l < t.count(); ++l)
            if (dt.from_to(owner, l) <= reach) subs.push_back(l);
        auto& sa = m.state_allowed[static_cast<std::size_t>(k)];
        auto& ia = m.input_allowed[static_cast<std::size_t>(k)];
        for (int l : subs) {
            for (int r = 0; r < t.state_dim(l); ++r) sa.push_back(t.state_base(l) + r);
            for (int r = 0; r < t.input_dim(l); ++r) ia.push_back(t.input_base(l) + r);
        }
    }
    return m;
}

// -----------------------------------------------------------------------------
// Columns
// -----------------------------------------------------------------------------

/// One synthesized closed-loop column: the response of every state (phi_x) and
/// input (phi_u) to a unit disturbance entering at `state_index`. Stored dense;
/// positions outside the mask are exact zeros.
struct ClosedLoopColumn {
    int owner = 0;
    int state_index = 0;
    int horizon = 0;
    std::vector<Vec> phi_x;  // H+1 entries, phi_x[0] = e_j, phi_x[H] = 0
    std::vector<Vec> phi_u;  // H entries
    long long synthesized_at = 0;
    std::uint64_t model_stamp = 0;
    double objective = 0.0;
    double kkt_residual = 0.0;
};

namespace detail {

[[nodiscard]] inline std::vector<char> index_flags(int n, const std::vector<int>& idx) {
    std::vector<char> f(static_cast<std::size_t>(n), 0);
    for (int i : idx) f[static_cast<std::size_t>(i)] = 1;
    return f;
}

}  // namespace detail

/// Solves the column problem for the unit injection at global state index j:
///
///   min   sum_k phi_x[k]' Q phi_x[k] + phi_u[k]' R phi_u[k]
///   s.t.  phi_x[0] = e_j,  phi_x[H] = 0,
///         phi_x[k+1] = A phi_x[k] + B phi_u[k],
///         supports within the mask at every step.
///
/// Masked-zero entries are dropped, in-mask states are eliminated through the
/// recursion, and the remaining equality-constrained least squares in the free
/// input entries is solved on the constraint nullspace. The KKT residual of
/// that system (primal infeasibility and projected gradient) is reported as
/// the optimality certificate.
[[nodiscard]] inline ClosedLoopColumn synthesize_column(const GlobalDynamics& model,
                                                        int state_index, const SparsityMask& mask,
                                                        const Mat& Q, const Mat& R,
                                                        long long synthesized_at = 0,
                                                        std::uint64_t model_stamp = 0) {
    const int n = static_cast<int>(model.A.rows());
    const int m = static_cast<int>(model.B.cols());
    const int H = mask.horizon;
    if (model.A.cols() != n || model.B.rows() != n)
        throw LoadError("synthesize_column: model dimensions disagree");
    if (Q.rows() != n || Q.cols() != n || R.rows() != m || R.cols() != m)
        throw LoadError("synthesize_column: weight dimensions disagree");
    if (H < 1 || static_cast<int>(mask.state_allowed.size()) != H)
        throw LoadError("synthesize_column: malformed mask");
    {
        const auto& own = mask.state_allowed[0];
        if (!std::binary_search(own.begin(), own.end(), state_index))
            throw LoadError("synthesize_column: state index " + std::to_string(state_index) +
                            " not in the owner's step-0 mask");
    }

    // Free-variable layout: the in-mask input entries, step blocks ascending.
    std::vector<int> u_off(static_cast<std::size_t>(H), 0);
    int nu = 0;
    for (int k = 0; k < H; ++k) {
        u_off[static_cast<std::size_t>(k)] = nu;
        nu += static_cast<int>(mask.input_allowed[static_cast<std::size_t>(k)].size());
    }

    // phi_x[k] restricted to its mask is affine in the free inputs:
    // phi_x[k](S_k) = X[k] u + c[k].
    std::vector<Mat> X(static_cast<std::size_t>(H));
    std::vector<Vec> cst(static_cast<std::size_t>(H));
    {
        const auto& s0 = mask.state_allowed[0];
        X[0] = Mat::Zero(static_cast<int>(s0.size()), nu);
        cst[0] = Vec::Zero(static_cast<int>(s0.size()));
        for (std::size_t r = 0; r < s0.size(); ++r)
            if (s0[r] == state_index) cst[0](static_cast<int>(r)) = 1.0;
    }

    // Equality constraints E u = h: boundary rows (reachable but masked out)
    // and the terminal rows forcing phi_x[H] = 0. Tags remember which step and
    // global state row each constraint came from, for error reporting.
    std::vector<Eigen::RowVectorXd> erow;
    std::vector<double> erhs;
    std::vector<std::pair<int, int>> etag;  // (step k, global row)

    for (int k = 0; k < H; ++k) {
        const auto& Sk = mask.state_allowed[static_cast<std::size_t>(k)];
        const auto& Ik = mask.input_allowed[static_cast<std::size_t>(k)];
        const Mat Ak = model.A(Eigen::all, Sk);
        const Mat Bk = Ik.empty() ? Mat::Zero(n, 0) : Mat(model.B(Eigen::all, Ik));
        const int nik = static_cast<int>(Ik.size());

        std::vector<char> nontrivial(static_cast<std::size_t>(n), 0);
        for (int r = 0; r < n; ++r) {
            bool nz = false;
            for (int c = 0; c < Ak.cols() && !nz; ++c) nz = Ak(r, c) != 0.0;
            for (int c = 0; c < nik && !nz; ++c) nz = Bk(r, c) != 0.0;
            nontrivial[static_cast<std::size_t>(r)] = nz;
        }

        auto push_constraint = [&](int r) {
            Eigen::RowVectorXd row = Ak.row(r) * X[static_cast<std::size_t>(k)];
            if (nik > 0) row.segment(u_off[static_cast<std::size_t>(k)], nik) += Bk.row(r);
            erow.push_back(std::move(row));
            erhs.push_back(-(Ak.row(r) * cst[static_cast<std::size_t>(k)]).value());
            etag.emplace_back(k, r);
        };

        if (k + 1 < H) {
            const auto& Sn = mask.state_allowed[static_cast<std::size_t>(k) + 1];
            const Mat Ann = Ak(Sn, Eigen::all);
            X[static_cast<std::size_t>(k) + 1] = Ann * X[static_cast<std::size_t>(k)];
            if (nik > 0)
                X[static_cast<std::size_t>(k) + 1].middleCols(u_off[static_cast<std::size_t>(k)],
                                                              nik) += Bk(Sn, Eigen::all);
            cst[static_cast<std::size_t>(k) + 1] = Ann * cst[static_cast<std::size_t>(k)];
            const auto inmask = detail::index_flags(n, Sn);
            for (int r = 0; r < n; ++r)
                if (nontrivial[static_cast<std::size_t>(r)] && !inmask[static_cast<std::size_t>(r)])
                    push_constraint(r);
        } else {
            for (int r = 0; r < n; ++r)
                if (nontrivial[static_cast<std::size_t>(r)]) push_constraint(r);
        }
    }

    const int me = static_cast<int>(erow.size());
    Mat E(me, nu);
    Vec h(me);
    for (int r = 0; r < me; ++r) {
        E.row(r) = erow[static_cast<std::size_t>(r)];
        h(r) = erhs[static_cast<std::size_t>(r)];
    }

    // Objective in the free inputs: u' G u + 2 g' u + c0.
    Mat G = Mat::Zero(nu, nu);
    Vec g = Vec::Zero(nu);
    double c0 = Q(state_index, state_index);
    for (int k = 1; k < H; ++k) {
        const auto& Sk = mask.state_allowed[static_cast<std::size_t>(k)];
        const Mat Qs = Q(Sk, Sk);
        G.noalias() += X[static_cast<std::size_t>(k)].transpose() * Qs * X[static_cast<std::size_t>(k)];
        g.noalias() += X[static_cast<std::size_t>(k)].transpose() * (Qs * cst[static_cast<std::size_t>(k)]);
        c0 += cst[static_cast<std::size_t>(k)].dot(Qs * cst[static_cast<std::size_t>(k)]);
    }
    for (int k = 0; k < H; ++k) {
        const auto& Ik = mask.input_allowed[static_cast<std::size_t>(k)];
        if (!Ik.empty()) {
            const int nik = static_cast<int>(Ik.size());
            G.block(u_off[static_cast<std::size_t>(k)], u_off[static_cast<std::size_t>(k)], nik,
                    nik) += Mat(R(Ik, Ik));
        }
    }

    auto infeasible = [&](const Vec& residual) -> SynthesisError {
        int worst = 0;
        residual.cwiseAbs().maxCoeff(&worst);
        const auto [step, row] = etag[static_cast<std::size_t>(worst)];
        return SynthesisError("synthesize_column: column " + std::to_string(state_index) +
                              " has no support-conforming solution (deficient constraint at step " +
                              std::to_string(step) + ", state row " + std::to_string(row) + ")");
    };

    Vec u = Vec::Zero(nu);
    Mat N;  // orthonormal basis of the constraint nullspace (empty if pinned)
    if (nu == 0) {
        if (me > 0 && h.cwiseAbs().maxCoeff() > 1e-12) throw infeasible(-h);
    } else if (me == 0) {
        u = Eigen::LDLT<Mat>(G).solve(-g);
        N = Mat::Identity(nu, nu);
    } else {
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(E);
        cod.setThreshold(kRankTol);
        const int rank = static_cast<int>(cod.rank());

        Mat aug(me, nu + 1);
        aug << E, h;
        Eigen::ColPivHouseholderQR<Mat> qr_aug(aug);
        qr_aug.setThreshold(kRankTol);

        const Vec up = cod.solve(h);
        const Vec primal = E * up - h;
        const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
        if (static_cast<int>(qr_aug.rank()) > rank || primal.cwiseAbs().maxCoeff() > 1e-7 * scale)
            throw infeasible(primal.size() > 0 ? primal : h);

        Eigen::ColPivHouseholderQR<Mat> qr_t(E.transpose());
        qr_t.setThreshold(kRankTol);
        if (static_cast<int>(qr_t.rank()) != rank)
            throw NumericError("synthesize_column: rank disagreement between E and E^T");
        const int nn = nu - rank;
        if (nn == 0) {
            u = up;
        } else {
            const Mat Qfull = qr_t.householderQ() * Mat::Identity(nu, nu);
            N = Qfull.rightCols(nn);
            const Mat Gn = N.transpose() * G * N;
            const Vec z = Eigen::LDLT<Mat>(Gn).solve(-N.transpose() * (G * up + g));
            u = up + N * z;
        }
    }

    double kkt = 0.0;
    if (nu > 0) {
        if (me > 0) kkt = (E * u - h).cwiseAbs().maxCoeff();
        if (N.cols() > 0) {
            const Vec pg = N.transpose() * (2.0 * (G * u + g));
            kkt = std::max(kkt, pg.cwiseAbs().maxCoeff());
        }
    }

    ClosedLoopColumn col;
    col.owner = mask.owner;
    col.state_index = state_index;
    col.horizon = H;
    col.synthesized_at = synthesized_at;
    col.model_stamp = model_stamp;
    col.phi_x.assign(static_cast<std::size_t>(H) + 1, Vec::Zero(n));
    col.phi_u.assign(static_cast<std::size_t>(H), Vec::Zero(m));
    col.phi_x[0](state_index) = 1.0;
    for (int k = 1; k < H; ++k) {
        const Vec xv = X[static_cast<std::size_t>(k)] * u + cst[static_cast<std::size_t>(k)];
        const auto& Sk = mask.state_allowed[static_cast<std::size_t>(k)];
        for (std::size_t r = 0; r < Sk.size(); ++r)
            col.phi_x[static_cast<std::size_t>(k)](Sk[r]) = xv(static_cast<int>(r));
    }
    for (int k = 0; k < H; ++k) {
        const auto& Ik = mask.input_allowed[static_cast<std::size_t>(k)];
        for (std::size_t r = 0; r < Ik.size(); ++r)
            col.phi_u[static_cast<std::size_t>(k)](Ik[r]) =
                u(u_off[static_cast<std::size_t>(k)] + static_cast<int>(r));
    }
    col.objective = nu > 0 ? u.dot(G * u) + 2.0 * g.dot(u) + c0 : c0;
    col.kkt_residual = kkt;
    return col;
}

// -----------------------------------------------------------------------------
// Verification
// -----------------------------------------------------------------------------

struct ColumnCheck {
    double recursion_residual = 0.0;  // worst dynamics row over all steps
    double boundary_residual = 0.0;   // unit injection at 0, zero at H
    double mask_violation = 0.0;      // largest magnitude outside the mask

    [[nodiscard]] double worst() const {
        return std::max({recursion_residual, boundary_residual, mask_violation});
    }
};

/// Recomputes every invariant of a column against a model and mask. Diagnostic
/// only: never throws, reports the worst violations found.
[[nodiscard]] inline ColumnCheck verify_column(const ClosedLoopColumn& col,
                                               const GlobalDynamics& model,
                                               const SparsityMask& mask) {
    ColumnCheck r;
    const int n = static_cast<int>(model.A.rows());
    const int H = col.horizon;
    Vec ej = Vec::Zero(n);
    ej(col.state_index) = 1.0;
    r.boundary_residual = (col.phi_x[0] - ej).lpNorm<Eigen::Infinity>();
    r.boundary_residual = std::max(
        r.boundary_residual, col.phi_x[static_cast<std::size_t>(H)].lpNorm<Eigen::Infinity>());
    for (int k = 0; k < H; ++k) {
        const Vec res = col.phi_x[static_cast<std::size_t>(k) + 1] -
                        model.A * col.phi_x[static_cast<std::size_t>(k)] -
                        model.B * col.phi_u[static_cast<std::size_t>(k)];
        r.recursion_residual = std::max(r.recursion_residual, res.lpNorm<Eigen::Infinity>());
        const auto sf = detail::index_flags(n, mask.state_allowed[static_cast<std::size_t>(k)]);
        for (int i = 0; i < n; ++i)
            if (!sf[static_cast<std::size_t>(i)])
                r.mask_violation =
                    std::max(r.mask_violation, std::abs(col.phi_x[static_cast<std::size_t>(k)](i)));
        const auto uf = detail::index_flags(static_cast<int>(model.B.cols()),
                                            mask.input_allowed[static_cast<std::size_t>(k)]);
        for (int i = 0; i < static_cast<int>(uf.size()); ++i)
            if (!uf[static_cast<std::size_t>(i)])
                r.mask_violation =
                    std::max(r.mask_violation, std::abs(col.phi_u[static_cast<std::size_t>(k)](i)));
    }
    return r;
}

// -----------------------------------------------------------------------------
// Grammians and sensitivity constants
// -----------------------------------------------------------------------------

struct GrammianReport {
    Mat W_u, W_w;
    double alpha_H = 1.0;  // max_{0<=k<=H} ||A^k||_2
    double sigma_min_u = 0.0, sigma_max_u = 0.0;
    double sigma_min_w = 0.0, sigma_max_w = 0.0;
};

[[nodiscard]] inline double operator_norm(const Mat& M) {
    if (M.rows() == 0 || M.cols() == 0) return 0.0;
    return Eigen::JacobiSVD<Mat>(M).singularValues()(0);
}

/// H-step controllability grammians for the input and disturbance channels,
/// by the recursion W <- A W A' + const term.
[[nodiscard]] inline GrammianReport controllability_grammians(const Mat& A, const Mat& B, int H) {
    const int n = static_cast<int>(A.rows());
    if (A.cols() != n || B.rows() != n) throw LoadError("controllability_grammians: bad dimensions");
    if (H < 1) throw LoadError("controllability_grammians: H < 1");
    GrammianReport rep;
    const Mat BBt = B * B.transpose();
    rep.W_u = BBt;
    rep.W_w = Mat::Identity(n, n);
    for (int k = 1; k < H; ++k) {
        rep.W_u = A * rep.W_u * A.transpose() + BBt;
        rep.W_w = A * rep.W_w * A.transpose() + Mat::Identity(n, n);
    }
    rep.W_u = 0.5 * (rep.W_u + rep.W_u.transpose()).eval();
    rep.W_w = 0.5 * (rep.W_w + rep.W_w.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Mat> eu(rep.W_u), ew(rep.W_w);
    rep.sigma_min_u = std::max(0.0, eu.eigenvalues().minCoeff());
    rep.sigma_max_u = std::max(0.0, eu.eigenvalues().maxCoeff());
    rep.sigma_min_w = std::max(0.0, ew.eigenvalues().minCoeff());
    rep.sigma_max_w = std::max(0.0, ew.eigenvalues().maxCoeff());

    Mat P = Mat::Identity(n, n);
    rep.alpha_H = 1.0;
    for (int k = 1; k <= H; ++k) {
        P = A * P;
        rep.alpha_H = std::max(rep.alpha_H, operator_norm(P));
    }
    return rep;
}

/// Family-level bounds feeding the sensitivity constants: extremal grammian
/// singular values, the largest power norm, and the largest input gain over
/// every model the family can produce.
struct SetBounds {
    double sigma_u_min = 0.0;
    double sigma_u_max = 0.0;
    double sigma_w_max = 0.0;
    double alpha_H = 1.0;
    double beta = 0.0;  // largest ||B||_2
};

struct SensitivityConstants {
    double gamma_a = 0.0;
    double gamma_b = 0.0;
    double kappa_cd = 1.0;
    double gamma_1 = 0.0, gamma_2 = 0.0;  // intermediate aggregates
};

/// Lipschitz constants of the optimal column w.r.t. model perturbations,
/// assembled from the family bounds: for any two family members,
/// ||phi*_1 - phi*_2|| <= gamma_a ||A_1 - A_2||_F + gamma_b ||B_1 - B_2||_F.
[[nodiscard]] inline SensitivityConstants sensitivity_constants(const SetBounds& sb, const Mat& Q,
                                                                const Mat& R, int H) {
    if (H < 1) throw LoadError("sensitivity_constants: H < 1");
    if (!(sb.sigma_u_min > 0.0))
        throw SynthesisError("sensitivity_constants: family is not H-controllable (sigma_u_min = 0)");
    Eigen::SelfAdjointEigenSolver<Mat> eq(0.5 * (Q + Q.transpose())), er(0.5 * (R + R.transpose()));
    if (eq.eigenvalues().minCoeff() <= 0.0 || er.eigenvalues().minCoeff() <= 0.0)
        throw LoadError("sensitivity_constants: weights must be positive definite");
    const double c_min = std::sqrt(eq.eigenvalues().minCoeff());
    const double c_max = std::sqrt(eq.eigenvalues().maxCoeff());
    const double d_min = std::sqrt(er.eigenvalues().minCoeff());
    const double d_max = std::sqrt(er.eigenvalues().maxCoeff());

    const double gu = std::sqrt(H * sb.sigma_u_max);          // input response gain
    const double gw = std::sqrt(H * sb.sigma_w_max);          // disturbance response gain
    const double p_norm = std::sqrt(sb.sigma_u_max);          // reachability map
    const double p_inv = 1.0 / std::sqrt(sb.sigma_u_min);     // its pseudo-inverse
    const double f_inv = 1.0 / d_min;                         // reduced LS pseudo-inverse
    const double g_norm =
        (c_max * std::sqrt(static_cast<double>(H)) * p_norm + d_max) * p_inv * sb.alpha_H;
    const double golden = 0.5 * (1.0 + std::sqrt(5.0));
    const double a = sb.alpha_H;

    SensitivityConstants out;
    out.kappa_cd = std::max(c_max, d_max) / std::min(c_min, d_min);
    out.gamma_1 = a * a * H * (1.0 + gu) * p_inv;
    out.gamma_2 = a * p_inv * (1.0 + golden * p_inv + golden * p_inv * gu) +
                  g_norm * (2.0 * f_inv) +
                  golden * g_norm * (2.0 * f_inv) * p_inv * p_inv * (2.0 * p_norm) * (1.0 + gu);
    out.gamma_a = out.kappa_cd * out.gamma_1 + out.kappa_cd * out.gamma_2 * sb.beta * gw * gw;
    out.gamma_b = out.kappa_cd * out.gamma_2 * gw;
    return out;
}

// -----------------------------------------------------------------------------
// Decay fit
// -----------------------------------------------------------------------------

/// Envelope ||[phi_x[k]; phi_u[k]]||_2 <= coeff * rate^k, valid for every
/// column it was fitted on (rate from a log-linear fit, coeff inflated to
/// cover all samples).
struct DecayFit {
    double coeff = 0.0;
    double rate = 1.0;
};

[[nodiscard]] inline DecayFit fit_decay(const std::vector<ClosedLoopColumn>& cols) {
    std::vector<std::pair<int, double>> pts;
    for (const auto& c : cols) {
        for (int k = 0; k <= c.horizon; ++k) {
            double s2 = c.phi_x[static_cast<std::size_t>(k)].squaredNorm();
            if (k < c.horizon) s2 += c.phi_u[static_cast<std::size_t>(k)].squaredNorm();
            const double s = std::sqrt(s2);
            if (s > 0.0) pts.emplace_back(k, s);
        }
    }
    DecayFit fit;
    if (pts.empty()) return {0.0, 0.5};
    bool multi = false;
    for (const auto& [k, s] : pts) multi = multi || k != pts.front().first;
    if (!multi) {
        fit.rate = 0.5;
    } else {
        double sk = 0, sl = 0, skk = 0, skl = 0;
        for (const auto& [k, s] : pts) {
            sk += k;
            sl += std::log(s);
            skk += static_cast<double>(k) * k;
            skl += k * std::log(s);
        }
        const double np = static_cast<double>(pts.size());
        const double slope = (np * skl - sk * sl) / (np * skk - sk * sk);
        fit.rate = std::max(1e-6, std::exp(slope));
    }
    for (const auto& [k, s] : pts) fit.coeff = std::max(fit.coeff, s / std::pow(fit.rate, k));
    return fit;
}

// -----------------------------------------------------------------------------
// Feasibility probe
// -----------------------------------------------------------------------------

struct ProbeReport {
    int trials = 0;
    int failures = 0;
    double pass_rate = 1.0;
    std::string worst_witness;  // first failing draw, empty when all passed
    DecayFit decay;             // envelope over every column that synthesized
};

/// Samples the parameter boxes (corners on even trials, interior otherwise)
/// and attempts every column of every subsystem at the given locality radius
/// and horizon. All-pass is evidence, not proof, that the family is
/// synthesizable at (dbar, H).
[[nodiscard]] inline ProbeReport fir_feasibility_probe(const NetworkTopology& t,
                                                       const std::vector<Vec>& lo,
                                                       const std::vector<Vec>& hi, int dbar, int H,
                                                       int trials, std::uint64_t seed) {
    if (trials < 1) throw LoadError("fir_feasibility_probe: trials < 1");
    if (static_cast<int>(lo.size()) != t.count() || static_cast<int>(hi.size()) != t.count())
        throw LoadError("fir_feasibility_probe: box count mismatch");
    for (int i = 0; i < t.count(); ++i) {
        const auto d = theta_layout(t, i).dim;
        if (lo[static_cast<std::size_t>(i)].size() != d || hi[static_cast<std::size_t>(i)].size() != d)
            throw LoadError("fir_feasibility_probe: box dim mismatch at subsystem " +
                            std::to_string(i));
    }

    const DelayTable dt = delay_table(t);
    std::vector<SparsityMask> masks;
    masks.reserve(static_cast<std::size_t>(t.count()));
    for (int i = 0; i < t.count(); ++i) masks.push_back(build_sparsity_masks(t, dt, i, dbar, H));
    const Mat Q = Mat::Identity(t.total_states, t.total_states);
    const Mat R = Mat::Identity(t.total_inputs, t.total_inputs);

    Rng rng(seed_child(seed, kSeedProbe));
    ProbeReport rep;
    rep.trials = trials;
    std::vector<ClosedLoopColumn> cols;
    std::vector<Vec> thetas(static_cast<std::size_t>(t.count()));
    for (int trial = 0; trial < trials; ++trial) {
        for (int i = 0; i < t.count(); ++i) {
            const Vec& l = lo[static_cast<std::size_t>(i)];
            const Vec& h = hi[static_cast<std::size_t>(i)];
            Vec th(l.size());
            for (int k = 0; k < l.size(); ++k) {
                if (trial % 2 == 0)
                    th(k) = rng.next_u64() & 1 ? h(k) : l(k);
                else
                    th(k) = rng.uniform(l(k), h(k));
            }
            thetas[static_cast<std::size_t>(i)] = th;
        }
        const GlobalDynamics model = assemble_global(t, thetas);
        bool ok = true;
        for (int i = 0; i < t.count() && ok; ++i) {
            for (int r = 0; r < t.state_dim(i) && ok; ++r) {
                const int j = t.state_base(i) + r;
                try {
                    cols.push_back(
                        synthesize_column(model, j, masks[static_cast<std::size_t>(i)], Q, R));
                } catch (const NetstabError& e) {
                    ok = false;
                    if (rep.worst_witness.empty())
                        rep.worst_witness = "trial " + std::to_string(trial) + ", subsystem " +
                                            std::to_string(i) + ", state " + std::to_string(j) +
                                            ": " + e.what();
                }
            }
        }
        if (!ok) ++rep.failures;
    }
    rep.pass_rate = 1.0 - static_cast<double>(rep.failures) / static_cast<double>(trials);
    rep.decay = fit_decay(cols);
    return rep;
}

}  // namespace netstab
