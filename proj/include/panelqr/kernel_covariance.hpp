#pragma once

// Kernel (Powell-type) sandwich covariance for the fixed-effects quantile
// slope: Sigma = Gamma^{-1} V Gamma^{-1}, with density weights estimated by a
// Gaussian kernel on the fitted residuals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panelqr/bootstrap.hpp"
#include "panelqr/check_loss.hpp"
#include "panelqr/error.hpp"
#include "panelqr/panel.hpp"
#include "panelqr/solver.hpp"
#include "panelqr/stats.hpp"

namespace panelqr {

enum class VarianceMode { Independent, WithinUnitLongRun };

inline const char* to_string(VarianceMode mode) noexcept {
    return mode == VarianceMode::Independent ? "indep" : "longrun";
}

struct SandwichComponents {
    Eigen::MatrixXd g;      // n x p
    Eigen::MatrixXd gamma;  // p x p
    Eigen::MatrixXd v;      // p x p
    double bandwidth = 0.0;
    std::string kernel = "gaussian";
    VarianceMode mode = VarianceMode::Independent;
    /// Bartlett truncation lag (long-run mode only).
    std::size_t lag = 0;
};

/// Hall-Sheather rate on the probability scale:
/// m^{-1/3} z_{1-a/2}^{2/3} [1.5 phi(z_tau)^2 / (2 z_tau^2 + 1)]^{1/3}.
inline double hall_sheather_bandwidth(QuantileLevel tau, std::size_t m, double alpha_level = 0.05) {
    if (m < 2) throw Error(ErrorKind::InvalidArgument, "bandwidth rule needs m >= 2");
    if (!(alpha_level > 0.0 && alpha_level < 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha_level must lie in (0,1)");
    const double zt = normal_quantile(tau.value());
    const double za = normal_quantile(1.0 - alpha_level / 2.0);
    const double phi = normal_pdf(zt);
    return std::pow(static_cast<double>(m), -1.0 / 3.0) * std::pow(za, 2.0 / 3.0) *
           std::cbrt(1.5 * phi * phi / (2.0 * zt * zt + 1.0));
}

namespace detail {

/// Sample quantile with linear interpolation between order statistics.
inline double interpolated_quantile(std::vector<double>& values, double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double a = values[lo];
    if (lo + 1 >= values.size()) return a;
    const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
    return a + (pos - static_cast<double>(lo)) * (b - a);
}

} // namespace detail

/// Maps a probability-scale bandwidth to the residual scale:
/// (Phi^{-1}(tau + h) - Phi^{-1}(tau - h)) * min(sd, IQR / 1.34).
/// h is shrunk so that tau +/- h stays inside (0, 1).
inline double residual_scale_bandwidth(QuantileLevel tau, double h, const Eigen::MatrixXd& residuals) {
    if (!(h > 0.0)) throw Error(ErrorKind::InvalidArgument, "bandwidth must be positive");
    const double t = tau.value();
    h = std::min(h, 0.999 * std::min(t, 1.0 - t));
    const auto m = static_cast<std::size_t>(residuals.size());
    if (m < 2) throw Error(ErrorKind::InvalidArgument, "need at least two residuals");

    std::vector<double> e(residuals.data(), residuals.data() + residuals.size());
    double mean = 0.0;
    for (double v : e) mean += v;
    mean /= static_cast<double>(m);
    double ss = 0.0;
    for (double v : e) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(m - 1));
    const double q75 = detail::interpolated_quantile(e, 0.75);
    const double q25 = detail::interpolated_quantile(e, 0.25);
    double spread = std::min(sd, (q75 - q25) / 1.34);
    if (!(spread > 0.0)) spread = sd;
    const double width = normal_quantile(t + h) - normal_quantile(t - h);
    const double out = width * spread;
    if (!(out > 0.0) || !std::isfinite(out))
        throw Error(ErrorKind::ZeroKernelMass, "residuals have no spread; kernel bandwidth is zero");
    return out;
}

/// Kernel estimates of g_i, Gamma and V at residual-scale bandwidth h.
inline SandwichComponents estimate_components(const PanelDataset& data, const QuantileFit& fit, QuantileLevel tau,
                                              double bandwidth, VarianceMode mode = VarianceMode::Independent) {
    const std::size_t n = data.n(), T = data.T(), p = data.p();
    if (fit.residuals.rows() != static_cast<Eigen::Index>(n) || fit.residuals.cols() != static_cast<Eigen::Index>(T) ||
        fit.beta.size() != static_cast<Eigen::Index>(p))
        throw Error(ErrorKind::DimensionMismatch, "fit does not belong to this panel");
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
        throw Error(ErrorKind::InvalidArgument, "bandwidth must be positive");
    const auto P = static_cast<Eigen::Index>(p);
    const double t_level = tau.value();
    const double nT = static_cast<double>(n * T);

    SandwichComponents out;
    out.bandwidth = bandwidth;
    out.mode = mode;
    out.g = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), P);
    out.gamma = Eigen::MatrixXd::Zero(P, P);
    out.v = Eigen::MatrixXd::Zero(P, P);

    std::vector<double> k(T);
    Eigen::MatrixXd centered(static_cast<Eigen::Index>(T), P);
    for (std::size_t i = 0; i < n; ++i) {
        const auto I = static_cast<Eigen::Index>(i);
        double mass = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            k[t] = normal_pdf(fit.residuals(I, static_cast<Eigen::Index>(t)) / bandwidth) / bandwidth;
            mass += k[t];
        }
        if (!(mass > std::numeric_limits<double>::min()))
            throw Error(ErrorKind::ZeroKernelMass,
                        "unit " + data.unit_labels()[i] + " has no kernel mass; bandwidth too small");
        for (std::size_t j = 0; j < p; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < T; ++t) s += k[t] * data.x(i, t, j);
            out.g(I, static_cast<Eigen::Index>(j)) = s / mass;
        }
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < p; ++j)
                centered(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) =
                    data.x(i, t, j) - out.g(I, static_cast<Eigen::Index>(j));
        for (std::size_t t = 0; t < T; ++t)
            for (Eigen::Index a = 0; a < P; ++a)
                for (Eigen::Index b = 0; b < P; ++b)
                    out.gamma(a, b) += k[t] * data.x(i, t, static_cast<std::size_t>(a)) * centered(static_cast<Eigen::Index>(t), b);

        if (mode == VarianceMode::Independent) {
            for (std::size_t t = 0; t < T; ++t)
                for (Eigen::Index a = 0; a < P; ++a)
                    for (Eigen::Index b = 0; b < P; ++b)
                        out.v(a, b) += centered(static_cast<Eigen::Index>(t), a) * centered(static_cast<Eigen::Index>(t), b);
        } else {
            const auto L = static_cast<std::size_t>(std::floor(std::cbrt(static_cast<double>(T)) + 1e-12));
            out.lag = L;
            Eigen::MatrixXd u(static_cast<Eigen::Index>(T), P);
            for (std::size_t t = 0; t < T; ++t)
                u.row(static_cast<Eigen::Index>(t)) =
                    centered.row(static_cast<Eigen::Index>(t)) * score(t_level, fit.residuals(I, static_cast<Eigen::Index>(t)));
            Eigen::MatrixXd unit_v = Eigen::MatrixXd::Zero(P, P);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t s = 0; s < T; ++s) {
                    const std::size_t lag = t > s ? t - s : s - t;
                    if (lag > L) continue;
                    const double w = 1.0 - static_cast<double>(lag) / static_cast<double>(L + 1);
                    unit_v.noalias() += w * u.row(static_cast<Eigen::Index>(t)).transpose() * u.row(static_cast<Eigen::Index>(s));
                }
            out.v += unit_v;
        }
    }
    out.gamma /= nT;
    if (mode == VarianceMode::Independent)
        out.v *= t_level * (1.0 - t_level) / nT;
    else
        out.v /= nT;
    return out;
}

/// Sigma = Gamma^{-1} V Gamma^{-1}, symmetrised. Gamma must have condition
/// number at most condition_cap.
inline CovarianceEstimate sandwich(const SandwichComponents& components, double condition_cap = 1e12) {
    const auto p = components.gamma.rows();
    if (components.gamma.cols() != p || components.v.rows() != p || components.v.cols() != p)
        throw Error(ErrorKind::DimensionMismatch, "sandwich components are not square of equal size");
    if (!components.gamma.allFinite() || !components.v.allFinite())
        throw Error(ErrorKind::SingularGamma, "non-finite sandwich components");
    Eigen::MatrixXd sigma(p, p);
    if (p > 0) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(components.gamma, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const auto& sv = svd.singularValues();
        const double smax = sv[0], smin = sv[p - 1];
        if (!(smin > 0.0) || smax / smin > condition_cap)
            throw Error(ErrorKind::SingularGamma, "Gamma is singular or ill-conditioned");
        const Eigen::MatrixXd inv = svd.solve(Eigen::MatrixXd::Identity(p, p));
        sigma = inv * components.v * inv.transpose();
        sigma = 0.5 * (sigma + sigma.transpose()).eval();
    }
    std::ostringstream meta;
    meta.precision(17);
    meta << "kernel=" << components.kernel << ", bandwidth=" << components.bandwidth
         << ", vmode=" << to_string(components.mode);
    if (components.mode == VarianceMode::WithinUnitLongRun) meta << ", lag=" << components.lag;
    return {std::move(sigma), CovarianceSource::KernelSandwich, meta.str()};
}

/// beta-hat_j -/+ z_{1-lambda/2} sqrt(Sigma_jj / nT).
inline ConfidenceInterval at_ci(const QuantileFit& fit, const CovarianceEstimate& sigma, std::size_t nT, double level) {
    const auto p = fit.beta.size();
    if (sigma.sigma.rows() != p || sigma.sigma.cols() != p)
        throw Error(ErrorKind::DimensionMismatch, "covariance dimension differs from the slope vector");
    if (nT == 0) throw Error(ErrorKind::InvalidArgument, "nT must be positive");
    const double z = two_sided_z(level);
    ConfidenceInterval ci{CiMethod::Asymptotic, level, Eigen::VectorXd(p), Eigen::VectorXd(p)};
    for (Eigen::Index j = 0; j < p; ++j) {
        const double var = sigma.sigma(j, j);
        if (var < 0.0 || !std::isfinite(var))
            throw Error(ErrorKind::NegativeDiagonal, "covariance diagonal entry " + std::to_string(j) + " is negative");
        const double half = z * std::sqrt(var / static_cast<double>(nT));
        ci.lower[j] = fit.beta[j] - half;
        ci.upper[j] = fit.beta[j] + half;
    }
    return ci;
}

struct KernelOptions {
    /// Level of the critical value inside the bandwidth rule.
    double alpha_level = 0.05;
    VarianceMode mode = VarianceMode::Independent;
    double condition_cap = 1e12;
};

/// Bandwidth rule with m = nT, converted to the residual scale of `fit`.
inline double default_bandwidth(const PanelDataset& data, const QuantileFit& fit, QuantileLevel tau,
                                 const KernelOptions& options = {}) {
    const double h = hall_sheather_bandwidth(tau, data.observations(), options.alpha_level);
    return residual_scale_bandwidth(tau, h, fit.residuals);
}

inline CovarianceEstimate kernel_sandwich_covariance(const PanelDataset& data, const QuantileFit& fit, QuantileLevel tau,
                                                     const KernelOptions& options = {}) {
    const double h = default_bandwidth(data, fit, tau, options);
    return sandwich(estimate_components(data, fit, tau, h, options.mode), options.condition_cap);
}

/// sqrt(diag(Sigma) / nT) from the kernel sandwich at the fit's residuals.
inline Eigen::VectorXd powell_standard_errors(const PanelDataset& data, const QuantileFit& fit, QuantileLevel tau,
                                              const KernelOptions& options = {}) {
    const CovarianceEstimate cov = kernel_sandwich_covariance(data, fit, tau, options);
    const double nT = static_cast<double>(data.observations());
    Eigen::VectorXd se(cov.sigma.rows());
    for (Eigen::Index j = 0; j < se.size(); ++j) {
        if (cov.sigma(j, j) < 0.0) throw Error(ErrorKind::NegativeDiagonal, "negative sandwich variance");
        se[j] = std::sqrt(cov.sigma(j, j) / nT);
    }
    return se;
}

/// Replicate statistic for the percentile-t interval: the kernel standard
/// error recomputed on every bootstrap fit.
inline ReplicateStatistic powell_replicate_se(QuantileLevel tau, KernelOptions options = {}) {
    return [tau, options](const PanelDataset& data, const QuantileFit& fit) {
        return powell_standard_errors(data, fit, tau, options);
    };
}

} // namespace panelqr
