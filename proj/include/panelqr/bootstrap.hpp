#pragma once

// Random-weighted bootstrap for fixed-effects quantile regression: every
// replicate re-fits the panel with one i.i.d. positive weight per unit
// (mean = variance = 1), which keeps each unit's time series intact.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "panelqr/error.hpp"
#include "panelqr/panel.hpp"
#include "panelqr/parallel.hpp"
#include "panelqr/rng.hpp"
#include "panelqr/solver.hpp"
#include "panelqr/stats.hpp"

namespace panelqr {

enum class WeightKind { ExponentialUnit, LognormalUnit, AllOnes };

struct WeightScheme {
    WeightKind kind = WeightKind::ExponentialUnit;

    /// Accepts the CLI spellings exp / exponential, lognormal, all-ones / ones.
    static WeightScheme parse(std::string_view name) {
        if (name == "exp" || name == "exponential") return {WeightKind::ExponentialUnit};
        if (name == "lognormal") return {WeightKind::LognormalUnit};
        if (name == "all-ones" || name == "ones") return {WeightKind::AllOnes};
        throw Error(ErrorKind::InvalidArgument, "unknown weight scheme '" + std::string(name) + "'");
    }

    std::string name() const {
        switch (kind) {
        case WeightKind::ExponentialUnit: return "exp";
        case WeightKind::LognormalUnit: return "lognormal";
        case WeightKind::AllOnes: return "all-ones";
        }
        return "unknown";
    }

    std::string descriptor() const {
        switch (kind) {
        case WeightKind::ExponentialUnit: return "Exponential(1)";
        case WeightKind::LognormalUnit: return "LogNormal(mu=-ln2/2, sigma^2=ln2)";
        case WeightKind::AllOnes: return "AllOnes";
        }
        return "unknown";
    }

    friend bool operator==(const WeightScheme&, const WeightScheme&) = default;
};

/// n i.i.d. weights. Exponential(1) and LogNormal(-ln2/2, ln2) both have
/// mean 1 and variance 1.
inline WeightVector draw_weights(std::size_t n, const WeightScheme& scheme, RandomStream& rng) {
    if (n == 0) throw Error(ErrorKind::InvalidArgument, "need at least one weight");
    std::vector<double> omega(n, 1.0);
    switch (scheme.kind) {
    case WeightKind::ExponentialUnit:
        for (double& w : omega) w = rng.exponential();
        break;
    case WeightKind::LognormalUnit: {
        const double sigma = std::sqrt(std::numbers::ln2);
        const double mu = -0.5 * std::numbers::ln2;
        for (double& w : omega) w = std::exp(mu + sigma * rng.normal());
        break;
    }
    case WeightKind::AllOnes: break;
    }
    return WeightVector(std::move(omega));
}

enum class CiMethod { Percentile, BootSE, TRef, Asymptotic };

/// Short labels used in reports: RWB.p, RWB.se, RWB.t, AT.
inline const char* label(CiMethod method) noexcept {
    switch (method) {
    case CiMethod::Percentile: return "RWB.p";
    case CiMethod::BootSE: return "RWB.se";
    case CiMethod::TRef: return "RWB.t";
    case CiMethod::Asymptotic: return "AT";
    }
    return "?";
}

struct ConfidenceInterval {
    CiMethod method = CiMethod::Percentile;
    double level = 0.9;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    bool contains(Eigen::Index j, double value) const { return lower[j] <= value && value <= upper[j]; }
    double width(Eigen::Index j) const { return upper[j] - lower[j]; }
};

enum class CovarianceSource { Bootstrap, KernelSandwich };

struct CovarianceEstimate {
    Eigen::MatrixXd sigma;
    CovarianceSource source = CovarianceSource::Bootstrap;
    std::string metadata;
};

/// Per-replicate standard errors, evaluated on the replicate fit.
using ReplicateStatistic = std::function<Eigen::VectorXd(const PanelDataset&, const QuantileFit&)>;

struct BootstrapOptions {
    std::size_t B = 999;
    WeightScheme scheme{};
    std::uint64_t seed = 0;
    unsigned threads = 1;
    SolverOptions solver{};
    bool store_alphas = false;
    /// The run aborts when more than this fraction of replicates fail.
    double max_failure_fraction = 0.01;
    /// Optional; fills BootstrapResult::replicate_ses when set.
    ReplicateStatistic replicate_se{};
};

struct BootstrapResult {
    QuantileFit point_fit;
    /// B x p, row b is the slope estimate of replicate b.
    Eigen::MatrixXd replicates;
    bool replicate_alphas_stored = false;
    /// B x n when replicate_alphas_stored.
    Eigen::MatrixXd replicate_alphas;
    /// B x p when a replicate statistic was requested (NaN where it failed).
    Eigen::MatrixXd replicate_ses;
    std::vector<char> replicate_converged;
    std::size_t failed_count = 0;
    std::size_t B = 0;
    WeightScheme scheme{};
    std::uint64_t seed = 0;

    std::vector<Eigen::Index> usable_rows() const {
        std::vector<Eigen::Index> rows;
        for (std::size_t b = 0; b < B; ++b)
            if (replicate_converged[b]) rows.push_back(static_cast<Eigen::Index>(b));
        return rows;
    }
    std::size_t usable_count() const { return B - failed_count; }
};

/// Weighted re-fits on the original data. Replicate b draws its weights from
/// substream derive_seed(seed, BootstrapWeights, b), so the result does not
/// depend on the number of threads.
inline BootstrapResult run_bootstrap(const PanelDataset& data, QuantileLevel tau, const BootstrapOptions& options) {
    if (options.B < 2) throw Error(ErrorKind::InvalidArgument, "bootstrap needs B >= 2");
    const std::size_t n = data.n(), p = data.p(), B = options.B;

    BootstrapResult result;
    result.point_fit = fit_weighted_feqr(data, tau, WeightVector::ones(n), options.solver);
    result.B = B;
    result.scheme = options.scheme;
    result.seed = options.seed;
    result.replicates.setZero(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(p));
    result.replicate_alphas_stored = options.store_alphas;
    if (options.store_alphas) result.replicate_alphas.setZero(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(n));
    if (options.replicate_se)
        result.replicate_ses.setConstant(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(p),
                                         std::numeric_limits<double>::quiet_NaN());
    result.replicate_converged.assign(B, 0);

    parallel_for(B, options.threads, [&](std::size_t b) {
        RandomStream rng(derive_seed(options.seed, StreamPurpose::BootstrapWeights, b));
        const WeightVector weights = draw_weights(n, options.scheme, rng);
        const QuantileFit fit = fit_weighted_feqr(data, tau, weights, options.solver);
        const auto row = static_cast<Eigen::Index>(b);
        result.replicates.row(row) = fit.beta.transpose();
        if (options.store_alphas) result.replicate_alphas.row(row) = fit.alpha.transpose();
        result.replicate_converged[b] = fit.diagnostics.converged ? 1 : 0;
        if (options.replicate_se && fit.diagnostics.converged) {
            try {
                result.replicate_ses.row(row) = options.replicate_se(data, fit).transpose();
            } catch (const Error&) {
                // Left as NaN; consumers that need it report NonpositiveSE.
            }
        }
    });

    result.failed_count = static_cast<std::size_t>(std::count(result.replicate_converged.begin(),
                                                              result.replicate_converged.end(), 0));
    if (static_cast<double>(result.failed_count) > options.max_failure_fraction * static_cast<double>(B))
        throw Error(ErrorKind::TooManyFailedReplicates,
                    std::to_string(result.failed_count) + " of " + std::to_string(B) + " replicates did not converge");
    if (result.usable_count() < 2)
        throw Error(ErrorKind::InsufficientReplicates, "fewer than two usable replicates");
    return result;
}

inline BootstrapResult run_bootstrap(const PanelDataset& data, QuantileLevel tau, std::size_t B,
                                     const WeightScheme& scheme, std::uint64_t seed) {
    BootstrapOptions options;
    options.B = B;
    options.scheme = scheme;
    options.seed = seed;
    return run_bootstrap(data, tau, options);
}

/// Order statistic number ceil(B q) (1-based) of sorted draws: the
/// left-continuous inverse of the empirical CDF. B q is snapped to the
/// nearest integer when within 1e-9 of it.
inline double empirical_quantile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw Error(ErrorKind::InsufficientReplicates, "no draws");
    const double B = static_cast<double>(sorted.size());
    auto idx = static_cast<std::ptrdiff_t>(std::ceil(B * q - 1e-9));
    idx = std::clamp<std::ptrdiff_t>(idx, 1, static_cast<std::ptrdiff_t>(sorted.size()));
    return sorted[static_cast<std::size_t>(idx - 1)];
}

namespace detail {

inline double tail_probability(double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidArgument, "confidence level must lie in (0,1)");
    return 1.0 - level;
}

inline void require_tail_replicates(std::size_t count, double lambda) {
    if (static_cast<double>(count) * lambda / 2.0 < 1.0 - 1e-9)
        throw Error(ErrorKind::InsufficientReplicates,
                    "B * lambda / 2 < 1: too few replicates for the requested level");
}

} // namespace detail

/// beta-hat plus the lambda/2 and 1 - lambda/2 empirical quantiles of the
/// centered draws beta*_b - beta-hat, per coordinate.
inline ConfidenceInterval percentile_ci(const BootstrapResult& result, double level) {
    const double lambda = detail::tail_probability(level);
    const auto rows = result.usable_rows();
    detail::require_tail_replicates(rows.size(), lambda);
    const Eigen::VectorXd& beta = result.point_fit.beta;
    const auto p = beta.size();

    ConfidenceInterval ci{CiMethod::Percentile, level, Eigen::VectorXd(p), Eigen::VectorXd(p)};
    std::vector<double> centered(rows.size());
    for (Eigen::Index j = 0; j < p; ++j) {
        for (std::size_t b = 0; b < rows.size(); ++b) centered[b] = result.replicates(rows[b], j) - beta[j];
        std::sort(centered.begin(), centered.end());
        ci.lower[j] = beta[j] + empirical_quantile(centered, lambda / 2.0);
        ci.upper[j] = beta[j] + empirical_quantile(centered, 1.0 - lambda / 2.0);
    }
    return ci;
}

/// (1/B) sum_b (beta*_b - beta-hat)(beta*_b - beta-hat)', centered at the
/// point estimate rather than the replicate mean.
inline CovarianceEstimate bootstrap_covariance(const BootstrapResult& result) {
    const auto rows = result.usable_rows();
    if (rows.size() < 2) throw Error(ErrorKind::InsufficientReplicates, "bootstrap covariance needs B >= 2");
    const Eigen::VectorXd& beta = result.point_fit.beta;
    const auto p = beta.size();
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd d(p);
    for (Eigen::Index b : rows) {
        d = result.replicates.row(b).transpose() - beta;
        for (Eigen::Index j = 0; j < p; ++j)
            for (Eigen::Index l = 0; l < p; ++l) sigma(j, l) += d[j] * d[l];
    }
    sigma /= static_cast<double>(rows.size());
    return {std::move(sigma), CovarianceSource::Bootstrap,
            "B=" + std::to_string(rows.size()) + ", weights=" + result.scheme.descriptor()};
}

/// beta-hat_j -/+ z_{1-lambda/2} sqrt(Sigma_jj).
inline ConfidenceInterval se_ci(const QuantileFit& fit, const CovarianceEstimate& cov, double level) {
    const auto p = fit.beta.size();
    if (cov.sigma.rows() != p || cov.sigma.cols() != p)
        throw Error(ErrorKind::DimensionMismatch, "covariance dimension differs from the slope vector");
    const double z = two_sided_z(level);
    ConfidenceInterval ci{CiMethod::BootSE, level, Eigen::VectorXd(p), Eigen::VectorXd(p)};
    for (Eigen::Index j = 0; j < p; ++j) {
        const double var = cov.sigma(j, j);
        if (var < 0.0 || !std::isfinite(var))
            throw Error(ErrorKind::NegativeDiagonal, "covariance diagonal entry " + std::to_string(j) + " is negative");
        const double half = z * std::sqrt(var);
        ci.lower[j] = fit.beta[j] - half;
        ci.upper[j] = fit.beta[j] + half;
    }
    return ci;
}

/// Percentile-t interval [beta - t*_{1-lambda/2} se, beta - t*_{lambda/2} se]
/// from the studentised draws t*_b = (beta*_b - beta-hat) / se*_b.
inline ConfidenceInterval t_ref_ci(const QuantileFit& fit, const BootstrapResult& result,
                                   const Eigen::MatrixXd& replicate_ses, const Eigen::VectorXd& se_hat, double level) {
    const double lambda = detail::tail_probability(level);
    const auto p = fit.beta.size();
    if (replicate_ses.rows() != static_cast<Eigen::Index>(result.B) || replicate_ses.cols() != p || se_hat.size() != p)
        throw Error(ErrorKind::DimensionMismatch, "standard-error inputs do not match the bootstrap result");
    const auto rows = result.usable_rows();
    detail::require_tail_replicates(rows.size(), lambda);

    ConfidenceInterval ci{CiMethod::TRef, level, Eigen::VectorXd(p), Eigen::VectorXd(p)};
    std::vector<double> t(rows.size());
    for (Eigen::Index j = 0; j < p; ++j) {
        if (!(se_hat[j] > 0.0) || !std::isfinite(se_hat[j]))
            throw Error(ErrorKind::NonpositiveSE, "original-sample standard error must be positive");
        for (std::size_t b = 0; b < rows.size(); ++b) {
            const double se = replicate_ses(rows[b], j);
            if (!(se > 0.0) || !std::isfinite(se))
                throw Error(ErrorKind::NonpositiveSE, "replicate " + std::to_string(rows[b]) + " has no positive standard error");
            t[b] = (result.replicates(rows[b], j) - fit.beta[j]) / se;
        }
        std::sort(t.begin(), t.end());
        ci.lower[j] = fit.beta[j] - empirical_quantile(t, 1.0 - lambda / 2.0) * se_hat[j];
        ci.upper[j] = fit.beta[j] - empirical_quantile(t, lambda / 2.0) * se_hat[j];
    }
    return ci;
}

struct WaldResult {
    double statistic = 0.0;
    double p_value = 1.0;
    Eigen::Index dof = 0;
};

/// W = (R beta - r)' (R Sigma R' / nT_scale)^{-1} (R beta - r), referred to chi-squared(q).
inline WaldResult wald_test(const Eigen::MatrixXd& R, const Eigen::VectorXd& r, const QuantileFit& fit,
                            const CovarianceEstimate& cov, double nT_scale = 1.0) {
    const auto p = fit.beta.size();
    const auto q = R.rows();
    if (R.cols() != p || r.size() != q || cov.sigma.rows() != p || cov.sigma.cols() != p)
        throw Error(ErrorKind::DimensionMismatch, "restriction or covariance dimensions do not match");
    if (q == 0 || q > p) throw Error(ErrorKind::SingularRestriction, "need 1 <= q <= p restrictions");
    if (!(nT_scale > 0.0)) throw Error(ErrorKind::InvalidArgument, "nT_scale must be positive");
    Eigen::FullPivLU<Eigen::MatrixXd> r_lu(R);
    if (r_lu.rank() < q) throw Error(ErrorKind::SingularRestriction, "R does not have full row rank");

    const Eigen::MatrixXd middle = R * cov.sigma * R.transpose() / nT_scale;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(middle);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible() || !middle.allFinite())
        throw Error(ErrorKind::SingularRestriction, "R Sigma R' is singular");
    const Eigen::VectorXd diff = R * fit.beta - r;
    WaldResult out;
    out.statistic = std::max(0.0, diff.dot(lu.solve(diff)));
    out.dof = q;
    out.p_value = chi_squared_upper_tail(static_cast<double>(q), out.statistic);
    return out;
}

} // namespace panelqr
