#pragma once

// Fixed-effects quantile regression:
//
//   min_{alpha, beta} (1/nT) sum_i omega_i sum_t rho_tau(y_it - alpha_i - x_it' beta)
//
// solved as the bounded-variable dual linear program
//
//   min c'a  s.t.  A a = b,  0 <= a <= 1,
//
// with A = W*' (W* the omega-scaled design [X | unit indicators]), c = -y* and
// b = (1 - tau) A 1, by a Mehrotra predictor-corrector interior-point method.
// The normal-equations matrix A Q A' has an n x n diagonal block for the
// intercepts, so every Newton step costs one p x p factorisation after block
// elimination. The interior solution is then rounded to the nearby vertex and
// accepted only if the vertex carries a valid dual certificate.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "panelqr/check_loss.hpp"
#include "panelqr/error.hpp"
#include "panelqr/panel.hpp"

namespace panelqr {

struct SolverOptions {
    /// Relative duality gap at which the interior-point iteration stops.
    double gap_tolerance = 1e-7;
    int max_iterations = 200;
    /// Fraction of the distance to the boundary taken by each step.
    double step_scale = 0.9995;
    /// Upper bound on the centering parameter sigma = (affine gap / gap)^3 of
    /// the corrector step; 1 leaves the adaptive rule unconstrained.
    double centering = 1.0;
    /// Round the interior solution to an optimal vertex when one can be certified.
    bool purify = true;
};

struct SubgradientReport {
    Eigen::VectorXd per_unit_score;
    Eigen::VectorXd per_unit_bound;
    double aggregate_score_norm = 0.0;
    double aggregate_bound = 0.0;
    bool satisfied = false;
};

struct SolverDiagnostics {
    int iterations = 0;
    /// Relative duality gap of the returned solution.
    double duality_gap = 0.0;
    bool converged = false;
    /// The returned point is a basic solution with a verified dual certificate.
    bool vertex_certified = false;
    SubgradientReport subgradient_report;
};

struct QuantileFit {
    QuantileLevel tau{0.5};
    Eigen::VectorXd alpha;
    Eigen::VectorXd beta;
    /// n x T, residuals(i, t) = y_it - alpha_i - x_it' beta.
    Eigen::MatrixXd residuals;
    double objective = 0.0;
    SolverDiagnostics diagnostics;
};

/// y_it - alpha_i - x_it' beta, always accumulated in the same order.
inline Eigen::MatrixXd compute_residuals(const PanelDataset& data, const Eigen::VectorXd& alpha,
                                         const Eigen::VectorXd& beta) {
    const std::size_t n = data.n(), T = data.T(), p = data.p();
    if (static_cast<std::size_t>(alpha.size()) != n || static_cast<std::size_t>(beta.size()) != p)
        throw Error(ErrorKind::DimensionMismatch, "parameter vectors do not match the panel");
    Eigen::MatrixXd e(n, T);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < T; ++t) {
            double fitted = alpha[static_cast<Eigen::Index>(i)];
            for (std::size_t j = 0; j < p; ++j) fitted += data.x(i, t, j) * beta[static_cast<Eigen::Index>(j)];
            e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = data.y(i, t) - fitted;
        }
    return e;
}

inline double objective_from_residuals(const Eigen::MatrixXd& residuals, double tau, const WeightVector& weights) {
    const auto n = residuals.rows(), T = residuals.cols();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double unit = 0.0;
        for (Eigen::Index t = 0; t < T; ++t) unit += check_loss(tau, residuals(i, t));
        total += weights[static_cast<std::size_t>(i)] * unit;
    }
    return total / static_cast<double>(n * T);
}

/// (1/nT) sum_i omega_i sum_t rho_tau(y_it - alpha_i - x_it' beta).
inline double evaluate_objective(const PanelDataset& data, QuantileLevel tau, const WeightVector& weights,
                                 const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta) {
    if (weights.size() != data.n()) throw Error(ErrorKind::DimensionMismatch, "weight vector length differs from n");
    return objective_from_residuals(compute_residuals(data, alpha, beta), tau.value(), weights);
}

/// Subgradient bounds that every exact solution satisfies when the data are in
/// general position: per unit |(1/T) sum_t psi(e_it)| <= min(n+p, T)/T, and
/// ||(1/nT) sum_i omega_i sum_t x_it psi(e_it)|| <= (n+p)/(nT) max_i omega_i max_it ||x_it||.
inline SubgradientReport verify_subgradient(const QuantileFit& fit, const PanelDataset& data, QuantileLevel tau,
                                            const WeightVector& weights) {
    const std::size_t n = data.n(), T = data.T(), p = data.p();
    if (weights.size() != n || static_cast<std::size_t>(fit.residuals.rows()) != n ||
        static_cast<std::size_t>(fit.residuals.cols()) != T || static_cast<std::size_t>(fit.beta.size()) != p)
        throw Error(ErrorKind::DimensionMismatch, "fit does not match the panel or weights");

    const double tau_v = tau.value();
    const double nT = static_cast<double>(n * T);
    SubgradientReport report;
    report.per_unit_score.resize(static_cast<Eigen::Index>(n));
    report.per_unit_bound.setConstant(static_cast<Eigen::Index>(n),
                                      static_cast<double>(std::min(n + p, T)) / static_cast<double>(T));
    Eigen::VectorXd covariate_score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    double max_x_norm = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < n; ++i) {
        double unit = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double psi = score(tau_v, fit.residuals(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
            unit += psi;
            double sq = 0.0;
            for (std::size_t j = 0; j < p; ++j) {
                const double xv = data.x(i, t, j);
                covariate_score[static_cast<Eigen::Index>(j)] += weights[i] * xv * psi;
                sq += xv * xv;
            }
            max_x_norm = std::max(max_x_norm, std::sqrt(sq));
        }
        const auto ii = static_cast<Eigen::Index>(i);
        report.per_unit_score[ii] = unit / static_cast<double>(T);
        if (std::abs(report.per_unit_score[ii]) > report.per_unit_bound[ii] * (1.0 + 1e-12)) ok = false;
    }
    report.aggregate_score_norm = covariate_score.norm() / nT;
    report.aggregate_bound = static_cast<double>(n + p) / nT * weights.max() * max_x_norm;
    if (report.aggregate_score_norm > report.aggregate_bound * (1.0 + 1e-9) + 1e-300) ok = false;
    report.satisfied = ok;
    return report;
}

namespace detail {

/// Operator view of A = W*' for one (data, weights) pair.
class ScaledDesign {
public:
    ScaledDesign(const PanelDataset& data, const WeightVector& weights)
        : n_(data.n()), T_(data.T()), p_(data.p()), N_(data.observations()), X_(data.covariates().data()),
          omega_(weights.values()) {}

    std::size_t n() const noexcept { return n_; }
    std::size_t p() const noexcept { return p_; }
    std::size_t N() const noexcept { return N_; }
    double x(std::size_t k, std::size_t j) const noexcept { return X_[j * N_ + k]; }
    double omega(std::size_t i) const noexcept { return omega_[i]; }

    /// out = A v, split into covariate (p) and intercept (n) blocks.
    void apply(const Eigen::VectorXd& v, Eigen::VectorXd& out_b, Eigen::VectorXd& out_a) const {
        out_b.setZero(static_cast<Eigen::Index>(p_));
        out_a.resize(static_cast<Eigen::Index>(n_));
        const double* vk = v.data();
        double* ob = out_b.data();
        for (std::size_t i = 0; i < n_; ++i) {
            const std::size_t k0 = i * T_;
            double unit = 0.0;
            for (std::size_t t = 0; t < T_; ++t) unit += vk[k0 + t];
            out_a[static_cast<Eigen::Index>(i)] = omega_[i] * unit;
            for (std::size_t j = 0; j < p_; ++j) {
                const double* xj = X_ + j * N_ + k0;
                double acc = 0.0;
                for (std::size_t t = 0; t < T_; ++t) acc += xj[t] * vk[k0 + t];
                ob[j] += omega_[i] * acc;
            }
        }
    }

    /// out = A' [yb; ya].
    void apply_transpose(const Eigen::VectorXd& yb, const Eigen::VectorXd& ya, Eigen::VectorXd& out) const {
        out.resize(static_cast<Eigen::Index>(N_));
        double* o = out.data();
        for (std::size_t i = 0; i < n_; ++i) {
            const std::size_t k0 = i * T_;
            const double a = ya[static_cast<Eigen::Index>(i)], om = omega_[i];
            if (p_ == 1) {
                const double b = yb[0];
                const double* x0 = X_ + k0;
                for (std::size_t t = 0; t < T_; ++t) o[k0 + t] = om * (a + x0[t] * b);
                continue;
            }
            for (std::size_t t = 0; t < T_; ++t) o[k0 + t] = a;
            for (std::size_t j = 0; j < p_; ++j) {
                const double* xj = X_ + j * N_ + k0;
                const double b = yb[static_cast<Eigen::Index>(j)];
                for (std::size_t t = 0; t < T_; ++t) o[k0 + t] += xj[t] * b;
            }
            for (std::size_t t = 0; t < T_; ++t) o[k0 + t] *= om;
        }
    }

    /// Factor A diag(q) A' by eliminating the diagonal intercept block.
    void factor(const Eigen::VectorXd& q) {
        const auto p = static_cast<Eigen::Index>(p_);
        D_.resize(static_cast<Eigen::Index>(n_));
        C_.setZero(p, static_cast<Eigen::Index>(n_));
        Eigen::MatrixXd schur = Eigen::MatrixXd::Zero(p, p);
        const double* qk = q.data();
        for (std::size_t i = 0; i < n_; ++i) {
            const std::size_t k0 = i * T_;
            const double w2 = omega_[i] * omega_[i];
            double d = 0.0;
            for (std::size_t t = 0; t < T_; ++t) d += qk[k0 + t];
            D_[static_cast<Eigen::Index>(i)] = w2 * d;
            for (std::size_t j = 0; j < p_; ++j) {
                const double* xj = X_ + j * N_ + k0;
                double cj = 0.0;
                for (std::size_t t = 0; t < T_; ++t) cj += qk[k0 + t] * xj[t];
                C_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = w2 * cj;
                for (std::size_t l = 0; l <= j; ++l) {
                    const double* xl = X_ + l * N_ + k0;
                    double m = 0.0;
                    for (std::size_t t = 0; t < T_; ++t) m += qk[k0 + t] * xj[t] * xl[t];
                    schur(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) += w2 * m;
                }
            }
        }
        for (std::size_t i = 0; i < n_; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            for (Eigen::Index j = 0; j < p; ++j)
                for (Eigen::Index l = 0; l <= j; ++l) schur(j, l) -= C_(j, ii) * C_(l, ii) / D_[ii];
        }
        schur = schur.selfadjointView<Eigen::Lower>();
        if (p > 0) {
            ldlt_.compute(schur);
            if (ldlt_.info() != Eigen::Success || !(ldlt_.vectorD().minCoeff() > 0.0)) {
                const double ridge = 1e-13 * std::max(schur.trace(), std::numeric_limits<double>::min());
                schur.diagonal().array() += ridge;
                ldlt_.compute(schur);
            }
        }
    }

    /// Solve (A Q A') [db; da] = [rb; ra] with the last factorisation.
    void solve(const Eigen::VectorXd& rb, const Eigen::VectorXd& ra, Eigen::VectorXd& db, Eigen::VectorXd& da) const {
        const auto p = static_cast<Eigen::Index>(p_);
        Eigen::VectorXd reduced = rb;
        for (std::size_t i = 0; i < n_; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            reduced -= C_.col(ii) * (ra[ii] / D_[ii]);
        }
        db = p > 0 ? Eigen::VectorXd(ldlt_.solve(reduced)) : Eigen::VectorXd(0);
        da.resize(static_cast<Eigen::Index>(n_));
        for (std::size_t i = 0; i < n_; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            da[ii] = (ra[ii] - C_.col(ii).dot(db)) / D_[ii];
        }
    }

private:
    std::size_t n_, T_, p_, N_;
    const double* X_;
    std::span<const double> omega_;
    Eigen::VectorXd D_;
    Eigen::MatrixXd C_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

/// Relative gap below which the solver starts attempting vertex recovery.
inline constexpr double kVertexHandoffGap = 1e-3;

inline void check_design(const PanelDataset& data) {
    const std::size_t n = data.n(), T = data.T(), p = data.p();
    if (n * T <= n + p)
        throw Error(ErrorKind::DegenerateDesign, "need more observations (nT) than parameters (n + p)");
    if (p == 0) return;
    // Covariates must keep full rank after sweeping out the unit intercepts.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    Eigen::VectorXd mean(static_cast<Eigen::Index>(p)), dev(static_cast<Eigen::Index>(p));
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean.setZero();
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < p; ++j) mean[static_cast<Eigen::Index>(j)] += data.x(i, t, j);
        mean /= static_cast<double>(T);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < p; ++j) {
                dev[static_cast<Eigen::Index>(j)] = data.x(i, t, j) - mean[static_cast<Eigen::Index>(j)];
                scale += data.x(i, t, j) * data.x(i, t, j);
            }
            gram.noalias() += dev * dev.transpose();
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues()[0] > 1e-11 * std::max(scale, 1e-300)))
        throw Error(ErrorKind::DegenerateDesign,
                    "covariates are collinear with the unit intercepts (within-unit design is rank deficient)");
}

struct InteriorPointResult {
    Eigen::VectorXd alpha, beta;
    int iterations = 0;
    double relative_gap = std::numeric_limits<double>::infinity();
    bool converged = false;
    bool stopped_early = false;
};

/// Runs the predictor-corrector iteration. Once the relative gap drops below
/// `handoff_gap`, `try_finish(alpha, beta)` is offered the current point every
/// iteration; returning true stops the iteration.
template <class Finish>
InteriorPointResult interior_point(const PanelDataset& data, double tau, const WeightVector& weights,
                                   const SolverOptions& opt, double handoff_gap, Finish&& try_finish) {
    ScaledDesign A(data, weights);
    const std::size_t n = data.n(), T = data.T();
    const auto N = static_cast<Eigen::Index>(data.observations());
    const Eigen::VectorXd& y = data.response();

    // Objective vector c = -y*.
    Eigen::VectorXd c(N);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0, k = i * T; t < T; ++t, ++k)
            c[static_cast<Eigen::Index>(k)] = -weights[i] * y[static_cast<Eigen::Index>(k)];
    const double y_scale = c.cwiseAbs().sum();

    Eigen::VectorXd x = Eigen::VectorXd::Constant(N, 1.0 - tau);
    Eigen::VectorXd s = Eigen::VectorXd::Constant(N, tau);

    // Dual start: weighted least squares fit, then residual perturbation so
    // that z, w > 0 while A'y + z - w = c holds exactly.
    Eigen::VectorXd yb, ya, rb, ra, Aty;
    A.factor(Eigen::VectorXd::Ones(N));
    A.apply(c, rb, ra);
    A.solve(rb, ra, yb, ya);
    A.apply_transpose(yb, ya, Aty);
    Eigen::VectorXd r = c - Aty;
    const double shift = std::max(1e-3 * r.cwiseAbs().mean(), 1e-12 * (1.0 + y_scale / static_cast<double>(N)));
    Eigen::VectorXd z = r.cwiseMax(0.0).array() + shift;
    Eigen::VectorXd w = (-r).cwiseMax(0.0).array() + shift;

    InteriorPointResult out;
    Eigen::VectorXd q(N), dx(N), dz(N), dw(N), dyb, dya, rhs(N), xinv(N), sinv(N), zinv(N), winv(N), dxdz(N), dsdw(N);
    // Largest step keeping v + step * dv >= 0, from the maximum of -dv/v.
    auto step_from = [](double worst) { return worst > 0.0 ? 1.0 / worst : std::numeric_limits<double>::infinity(); };
    int it = 0;
    for (;; ++it) {
        // Scaled residuals are w - z while dual feasibility holds.
        double comp = 0.0, primal = 0.0;
        for (Eigen::Index k = 0; k < N; ++k) {
            comp += x[k] * z[k] + s[k] * w[k];
            primal += check_loss(tau, w[k] - z[k]);
        }
        out.relative_gap = comp / std::max(primal, 1e-12 * (1.0 + y_scale));
        if (out.relative_gap <= opt.gap_tolerance) {
            out.converged = true;
            break;
        }
        if (out.relative_gap <= handoff_gap && try_finish(Eigen::VectorXd(-ya), Eigen::VectorXd(-yb))) {
            out.stopped_early = true;
            break;
        }
        if (it >= opt.max_iterations) break;

        // Affine scaling (predictor) direction.
        for (Eigen::Index k = 0; k < N; ++k) {
            xinv[k] = 1.0 / x[k];
            sinv[k] = 1.0 / s[k];
            zinv[k] = 1.0 / z[k];
            winv[k] = 1.0 / w[k];
            q[k] = 1.0 / (z[k] * xinv[k] + w[k] * sinv[k]);
            r[k] = z[k] - w[k];
            rhs[k] = q[k] * r[k];
        }
        A.factor(q);
        A.apply(rhs, rb, ra);
        A.solve(rb, ra, dyb, dya);
        A.apply_transpose(dyb, dya, Aty);
        double wx = 0.0, ws = 0.0, wz = 0.0, ww = 0.0;
        for (Eigen::Index k = 0; k < N; ++k) {
            const double d = q[k] * (Aty[k] - r[k]);
            dx[k] = d;
            const double rz = d * xinv[k] + 1.0, rw = 1.0 - d * sinv[k];
            dz[k] = -z[k] * rz;
            dw[k] = -w[k] * rw;
            wx = std::max(wx, -d * xinv[k]);
            ws = std::max(ws, d * sinv[k]);
            wz = std::max(wz, rz);
            ww = std::max(ww, rw);
        }
        double fp = std::min(opt.step_scale * std::min(step_from(wx), step_from(ws)), 1.0);
        double fd = std::min(opt.step_scale * std::min(step_from(wz), step_from(ww)), 1.0);

        if (std::min(fp, fd) < 1.0) {
            // Mehrotra corrector; sigma = (affine gap ratio)^3, capped by opt.centering.
            double g = 0.0;
            for (Eigen::Index k = 0; k < N; ++k)
                g += (x[k] + fp * dx[k]) * (z[k] + fd * dz[k]) + (s[k] - fp * dx[k]) * (w[k] + fd * dw[k]);
            const double ratio = g / comp;
            const double sigma = std::min(opt.centering, ratio * ratio * ratio);
            const double mu = sigma * comp / (2.0 * static_cast<double>(N));

            for (Eigen::Index k = 0; k < N; ++k) {
                dxdz[k] = dx[k] * dz[k] * xinv[k];
                dsdw[k] = -dx[k] * dw[k] * sinv[k];
                const double xi = mu * (xinv[k] - sinv[k]);
                rhs[k] = q[k] * (r[k] - xi + dxdz[k] - dsdw[k]);
                dx[k] = xi - dxdz[k] + dsdw[k];  // holds xi - second-order term until A'dy is known
            }
            A.apply(rhs, rb, ra);
            A.solve(rb, ra, dyb, dya);
            A.apply_transpose(dyb, dya, Aty);
            wx = ws = wz = ww = 0.0;
            for (Eigen::Index k = 0; k < N; ++k) {
                const double d = q[k] * (Aty[k] + dx[k] - r[k]);
                dx[k] = d;
                dz[k] = mu * xinv[k] - z[k] - dxdz[k] - z[k] * d * xinv[k];
                dw[k] = mu * sinv[k] - w[k] - dsdw[k] + w[k] * d * sinv[k];
                wx = std::max(wx, -d * xinv[k]);
                ws = std::max(ws, d * sinv[k]);
                wz = std::max(wz, -dz[k] * zinv[k]);
                ww = std::max(ww, -dw[k] * winv[k]);
            }
            fp = std::min(opt.step_scale * std::min(step_from(wx), step_from(ws)), 1.0);
            fd = std::min(opt.step_scale * std::min(step_from(wz), step_from(ww)), 1.0);
        }

        for (Eigen::Index k = 0; k < N; ++k) {
            x[k] += fp * dx[k];
            s[k] -= fp * dx[k];
            z[k] += fd * dz[k];
            w[k] += fd * dw[k];
        }
        yb += fd * dyb;
        ya += fd * dya;
    }
    out.iterations = it;
    out.beta = -yb;
    out.alpha = -ya;
    return out;
}

struct VertexSolution {
    Eigen::VectorXd alpha, beta;
    double relative_gap = 0.0;
};

/// Round an approximate solution to the basic solution through the n + p
/// observations it nearly interpolates (one anchor per unit plus p more), and
/// certify it by solving for the duals of the basic observations.
inline bool purify(const PanelDataset& data, double tau, const WeightVector& weights, const Eigen::MatrixXd& approx,
                   VertexSolution& out) {
    const std::size_t n = data.n(), T = data.T(), p = data.p();
    const auto P = static_cast<Eigen::Index>(p);

    std::vector<std::size_t> anchor(n);
    std::vector<char> basic(n * T, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t t = 1; t < T; ++t)
            if (std::abs(approx(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t))) <
                std::abs(approx(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(best))))
                best = t;
        anchor[i] = best;
        basic[data.index(i, best)] = 1;
    }

    // Extra basic observations: smallest |residual| first, kept if they raise the rank.
    std::vector<std::size_t> extra;
    Eigen::MatrixXd D(P, P);
    if (p > 0) {
        std::vector<std::size_t> candidates;
        candidates.reserve(n * T - n);
        for (std::size_t k = 0; k < n * T; ++k)
            if (!basic[k]) candidates.push_back(k);
        const std::size_t keep = std::min(candidates.size(), 4 * p + 16);
        auto abs_res = [&](std::size_t k) { return std::abs(approx(static_cast<Eigen::Index>(k / T), static_cast<Eigen::Index>(k % T))); };
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                          [&](std::size_t a, std::size_t b) { return abs_res(a) < abs_res(b); });
        Eigen::MatrixXd rows(0, P);
        for (std::size_t c = 0; c < keep && extra.size() < p; ++c) {
            const std::size_t k = candidates[c], i = k / T;
            Eigen::RowVectorXd d(P);
            for (std::size_t j = 0; j < p; ++j)
                d[static_cast<Eigen::Index>(j)] = data.x(i, k % T, j) - data.x(i, anchor[i], j);
            Eigen::MatrixXd trial(rows.rows() + 1, P);
            trial << rows, d;
            Eigen::FullPivLU<Eigen::MatrixXd> lu(trial);
            lu.setThreshold(1e-10);
            if (lu.rank() == trial.rows()) {
                rows = std::move(trial);
                extra.push_back(k);
            }
        }
        if (extra.size() < p) return false;
        D = rows;
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(P);
    if (p > 0) {
        Eigen::VectorXd rhs(P);
        for (std::size_t h = 0; h < p; ++h) {
            const std::size_t k = extra[h], i = k / T;
            rhs[static_cast<Eigen::Index>(h)] = data.y(i, k % T) - data.y(i, anchor[i]);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(D);
        if (!lu.isInvertible()) return false;
        beta = lu.solve(rhs);
        for (std::size_t h = 0; h < p; ++h) basic[extra[h]] = 1;
    }
    Eigen::VectorXd alpha(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        double fitted = 0.0;
        for (std::size_t j = 0; j < p; ++j) fitted += data.x(i, anchor[i], j) * beta[static_cast<Eigen::Index>(j)];
        alpha[static_cast<Eigen::Index>(i)] = data.y(i, anchor[i]) - fitted;
    }
    if (!alpha.allFinite() || !beta.allFinite()) return false;

    // Dual certificate: sum_nonbasic w_k psi_k + sum_basic w_k a_k = 0 with a_k in [tau - 1, tau].
    const Eigen::MatrixXd e = compute_residuals(data, alpha, beta);
    Eigen::VectorXd unit_score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd g = Eigen::VectorXd::Zero(P);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < T; ++t) {
            if (basic[data.index(i, t)]) continue;
            const double psi = score(tau, e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
            unit_score[static_cast<Eigen::Index>(i)] += psi;
            for (std::size_t j = 0; j < p; ++j)
                g[static_cast<Eigen::Index>(j)] += weights[i] * psi * (data.x(i, t, j) - data.x(i, anchor[i], j));
        }
    Eigen::VectorXd a_extra = Eigen::VectorXd::Zero(P);
    if (p > 0) {
        Eigen::VectorXd scaled = D.transpose().fullPivLu().solve(-g);
        for (std::size_t h = 0; h < p; ++h) a_extra[static_cast<Eigen::Index>(h)] = scaled[static_cast<Eigen::Index>(h)] / weights[extra[h] / T];
    }
    Eigen::VectorXd a_anchor = -unit_score;
    for (std::size_t h = 0; h < p; ++h) a_anchor[static_cast<Eigen::Index>(extra[h] / T)] -= a_extra[static_cast<Eigen::Index>(h)];

    constexpr double slack = 1e-9;
    auto in_range = [&](double a) { return std::isfinite(a) && a >= tau - 1.0 - slack && a <= tau + slack; };
    for (Eigen::Index h = 0; h < a_extra.size(); ++h)
        if (!in_range(a_extra[h])) return false;
    for (Eigen::Index i = 0; i < a_anchor.size(); ++i)
        if (!in_range(a_anchor[i])) return false;

    // Exact gap between primal value and the certified dual value sum_k omega_k y_k d_k.
    double primal = 0.0, dual = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < T; ++t) {
            const std::size_t k = data.index(i, t);
            const double ek = e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
            double d = score(tau, ek);
            if (basic[k]) {
                d = t == anchor[i] ? a_anchor[static_cast<Eigen::Index>(i)] : 0.0;
                for (std::size_t h = 0; h < p; ++h)
                    if (extra[h] == k) d = a_extra[static_cast<Eigen::Index>(h)];
            }
            primal += weights[i] * check_loss(tau, ek);
            dual += weights[i] * data.y(i, t) * d;
        }
    out.alpha = std::move(alpha);
    out.beta = std::move(beta);
    out.relative_gap = std::abs(primal - dual) / std::max(primal, 1e-300);
    if (primal == 0.0) out.relative_gap = 0.0;
    return true;
}

} // namespace detail

/// Process-wide counts of solver calls, kept so that test harnesses can
/// confirm that no converged fit ever failed its subgradient check.
struct SolverTally {
    std::uint64_t fits = 0;
    std::uint64_t converged = 0;
    std::uint64_t subgradient_violations = 0;
};

namespace detail {
inline std::atomic<std::uint64_t> tally_fits{0};
inline std::atomic<std::uint64_t> tally_converged{0};
inline std::atomic<std::uint64_t> tally_violations{0};
} // namespace detail

inline SolverTally solver_tally() noexcept {
    return {detail::tally_fits.load(), detail::tally_converged.load(), detail::tally_violations.load()};
}

/// Minimise (1/nT) sum_i omega_i sum_t rho_tau(y_it - alpha_i - x_it' beta).
///
/// Throws DegenerateDesign when the problem is rank deficient. Hitting the
/// iteration cap is not fatal: the fit is returned with converged = false.
inline QuantileFit fit_weighted_feqr(const PanelDataset& data, QuantileLevel tau, const WeightVector& weights,
                                     const SolverOptions& options = {}) {
    if (weights.size() != data.n()) throw Error(ErrorKind::DimensionMismatch, "weight vector length differs from n");
    detail::check_design(data);
    const double tau_v = tau.value();

    detail::VertexSolution vertex;
    bool certified = false;
    auto try_vertex = [&](const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta) {
        if (!options.purify || !alpha.allFinite() || !beta.allFinite()) return false;
        certified = detail::purify(data, tau_v, weights, compute_residuals(data, alpha, beta), vertex) &&
                    vertex.relative_gap <= options.gap_tolerance;
        return certified;
    };
    detail::InteriorPointResult ipm =
        detail::interior_point(data, tau_v, weights, options, detail::kVertexHandoffGap, try_vertex);
    if (!ipm.alpha.allFinite() || !ipm.beta.allFinite())
        throw Error(ErrorKind::DegenerateDesign, "interior-point iteration diverged; the program looks unbounded");

    QuantileFit fit;
    fit.tau = tau;
    fit.diagnostics.iterations = ipm.iterations;
    if (!certified && ipm.converged) try_vertex(ipm.alpha, ipm.beta);
    if (certified) {
        fit.alpha = std::move(vertex.alpha);
        fit.beta = std::move(vertex.beta);
        fit.diagnostics.duality_gap = vertex.relative_gap;
        fit.diagnostics.vertex_certified = true;
        fit.diagnostics.converged = true;
    } else {
        fit.alpha = std::move(ipm.alpha);
        fit.beta = std::move(ipm.beta);
        fit.diagnostics.duality_gap = ipm.relative_gap;
        fit.diagnostics.converged = ipm.converged;
    }
    fit.residuals = compute_residuals(data, fit.alpha, fit.beta);
    fit.objective = objective_from_residuals(fit.residuals, tau_v, weights);
    fit.diagnostics.subgradient_report = verify_subgradient(fit, data, tau, weights);
    detail::tally_fits.fetch_add(1, std::memory_order_relaxed);
    if (fit.diagnostics.converged) {
        detail::tally_converged.fetch_add(1, std::memory_order_relaxed);
        if (!fit.diagnostics.subgradient_report.satisfied)
            detail::tally_violations.fetch_add(1, std::memory_order_relaxed);
    }
    return fit;
}

/// Unweighted fixed-effects quantile regression.
inline QuantileFit fit_feqr(const PanelDataset& data, QuantileLevel tau, const SolverOptions& options = {}) {
    return fit_weighted_feqr(data, tau, WeightVector::ones(data.n()), options);
}

} // namespace panelqr
