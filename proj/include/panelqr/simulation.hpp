#pragma once

// Monte Carlo designs for panel quantile regression and the coverage study
// that compares the bootstrap intervals with the kernel-sandwich interval.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "panelqr/bootstrap.hpp"
#include "panelqr/error.hpp"
#include "panelqr/kernel_covariance.hpp"
#include "panelqr/panel.hpp"
#include "panelqr/parallel.hpp"
#include "panelqr/rng.hpp"
#include "panelqr/solver.hpp"
#include "panelqr/stats.hpp"

namespace panelqr {

enum class DesignFamily { StaticLocation, StaticLocationScale, Dynamic };
enum class InnovationKind { IIDChiSq4, ARMAChiSq };

struct SimulationDesign {
    DesignFamily family = DesignFamily::StaticLocation;
    InnovationKind error_kind = InnovationKind::IIDChiSq4;
    std::size_t n = 100;
    std::size_t T = 100;
    double gamma = 0.0;
    double rho = 0.4;
    double theta = 0.5;
    std::vector<double> taus{0.25, 0.5, 0.75};
    std::size_t reps = 200;
    std::size_t B = 299;
    double level = 0.9;
    std::uint64_t seed = 1;
    std::size_t arma_burn_in = 100;
    std::size_t dynamic_burn_in = 50;

    /// loc, locscale, locdep, locscaledep or dynamic, with desk-scale defaults.
    static SimulationDesign named(std::string_view name) {
        SimulationDesign d;
        if (name == "loc") {
        } else if (name == "locscale") {
            d.family = DesignFamily::StaticLocationScale;
            d.gamma = 0.2;
        } else if (name == "locdep") {
            d.error_kind = InnovationKind::ARMAChiSq;
        } else if (name == "locscaledep") {
            d.family = DesignFamily::StaticLocationScale;
            d.error_kind = InnovationKind::ARMAChiSq;
            d.gamma = 0.2;
        } else if (name == "dynamic") {
            d.family = DesignFamily::Dynamic;
        } else {
            throw Error(ErrorKind::InvalidArgument, "unknown design '" + std::string(name) +
                                                        "' (expected loc, locscale, locdep, locscaledep, dynamic)");
        }
        return d;
    }

    std::string name() const {
        switch (family) {
        case DesignFamily::StaticLocation: return error_kind == InnovationKind::ARMAChiSq ? "locdep" : "loc";
        case DesignFamily::StaticLocationScale:
            return error_kind == InnovationKind::ARMAChiSq ? "locscaledep" : "locscale";
        case DesignFamily::Dynamic: return "dynamic";
        }
        return "unknown";
    }

    void validate() const {
        if (n == 0 || T < 2) throw Error(ErrorKind::InvalidArgument, "design needs n >= 1 and T >= 2");
        if (family == DesignFamily::StaticLocation && gamma != 0.0)
            throw Error(ErrorKind::InvalidArgument, "location design requires gamma = 0");
        if (family == DesignFamily::StaticLocationScale && !(gamma >= 0.0))
            throw Error(ErrorKind::InvalidArgument, "location-scale design requires gamma >= 0");
        if (family == DesignFamily::Dynamic && error_kind != InnovationKind::IIDChiSq4)
            throw Error(ErrorKind::InvalidArgument, "dynamic design uses i.i.d. innovations");
        if (family == DesignFamily::Dynamic && !(std::abs(rho) < 1.0))
            throw Error(ErrorKind::InvalidArgument, "dynamic design needs |rho| < 1");
        if (taus.empty()) throw Error(ErrorKind::InvalidArgument, "design needs at least one tau");
        for (double t : taus) (void)QuantileLevel{t};
        if (reps == 0) throw Error(ErrorKind::InvalidArgument, "design needs reps >= 1");
        if (B < 2) throw Error(ErrorKind::InvalidArgument, "design needs B >= 2");
        if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidArgument, "level must lie in (0,1)");
    }
};

struct GeneratedPanel {
    PanelDataset data;
    Eigen::VectorXd alpha_true;
    std::map<double, Eigen::VectorXd> beta_true_at;
};

/// ARMA(1,1) recursion e_t = rho e_{t-1} + eta_t + theta eta_{t-1} started
/// from zero; returns `keep` values after discarding `burn_in`.
template <class Innovation>
std::vector<double> arma_path(double rho, double theta, std::size_t burn_in, std::size_t keep, Innovation&& innovation) {
    std::vector<double> out;
    out.reserve(keep);
    double e = 0.0, eta_prev = 0.0;
    for (std::size_t t = 0; t < burn_in + keep; ++t) {
        const double eta = innovation();
        e = rho * e + eta + theta * eta_prev;
        eta_prev = eta;
        if (t >= burn_in) out.push_back(e);
    }
    return out;
}

/// y_t = alpha + rho y_{t-1} + e_t from y = 0, `burn_in` steps discarded;
/// returns the T + 1 values that follow (the first is the initial lag).
template <class Innovation>
std::vector<double> autoregressive_path(double alpha, double rho, std::size_t burn_in, std::size_t T,
                                        Innovation&& innovation) {
    std::vector<double> out;
    out.reserve(T + 1);
    double y = 0.0;
    for (std::size_t t = 0; t < burn_in + T + 1; ++t) {
        y = alpha + rho * y + innovation();
        if (t + 1 > burn_in) out.push_back(y);
    }
    return out;
}

namespace detail {

struct ArmaOracleKey {
    double rho, theta;
    std::size_t draws;
    auto operator<=>(const ArmaOracleKey&) const = default;
};

inline constexpr std::uint64_t kOracleSeed = 0x51a7e5eedULL;

} // namespace detail

/// Sorted sample from one long stationary ARMA(1,1) chi-squared(4) chain,
/// computed once per (rho, theta, draws) and shared afterwards.
inline std::shared_ptr<const std::vector<double>> arma_stationary_sample(double rho, double theta,
                                                                         std::size_t draws = 10'000'000) {
    static std::mutex mutex;
    static std::map<detail::ArmaOracleKey, std::shared_ptr<const std::vector<double>>> cache;
    const detail::ArmaOracleKey key{rho, theta, draws};
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    RandomStream rng(derive_seed(detail::kOracleSeed, StreamPurpose::Oracle, 0));
    auto sample = std::make_shared<std::vector<double>>(
        arma_path(rho, theta, 1000, draws, [&] { return rng.chi_squared(4); }));
    std::sort(sample->begin(), sample->end());
    cache.emplace(key, sample);
    return sample;
}

/// tau-quantile of the marginal (stationary) error distribution.
inline double error_quantile(const SimulationDesign& design, double tau) {
    (void)QuantileLevel{tau};
    if (design.error_kind == InnovationKind::IIDChiSq4) return chi_squared_quantile(4.0, tau);
    return empirical_quantile(*arma_stationary_sample(design.rho, design.theta), tau);
}

/// True slope of the conditional tau-quantile.
inline Eigen::VectorXd true_beta(const SimulationDesign& design, double tau) {
    Eigen::VectorXd beta(1);
    switch (design.family) {
    case DesignFamily::StaticLocation: beta[0] = 1.0; break;
    case DesignFamily::StaticLocationScale: beta[0] = 1.0 + design.gamma * error_quantile(design, tau); break;
    case DesignFamily::Dynamic: beta[0] = design.rho; break;
    }
    return beta;
}

/// y_it = alpha_i + x_it + (1 + gamma x_it) e_it with alpha_i ~ U[0,1] and
/// x_it = 0.3 alpha_i + chi-squared(3).
inline GeneratedPanel generate_static(const SimulationDesign& design, RandomStream& rng) {
    design.validate();
    if (design.family == DesignFamily::Dynamic)
        throw Error(ErrorKind::InvalidArgument, "generate_static needs a static design");
    const std::size_t n = design.n, T = design.T;
    const auto N = static_cast<Eigen::Index>(n * T);
    Eigen::VectorXd y(N), alpha(static_cast<Eigen::Index>(n));
    Eigen::MatrixXd X(N, 1);
    auto eta = [&] { return rng.chi_squared(4); };
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.uniform();
        alpha[static_cast<Eigen::Index>(i)] = a;
        std::vector<double> x(T);
        for (double& v : x) v = 0.3 * a + rng.chi_squared(3);
        std::vector<double> e;
        if (design.error_kind == InnovationKind::IIDChiSq4) {
            e.resize(T);
            for (double& v : e) v = eta();
        } else {
            e = arma_path(design.rho, design.theta, design.arma_burn_in, T, eta);
        }
        for (std::size_t t = 0; t < T; ++t) {
            const auto k = static_cast<Eigen::Index>(i * T + t);
            X(k, 0) = x[t];
            y[k] = a + x[t] + (1.0 + design.gamma * x[t]) * e[t];
        }
    }
    GeneratedPanel out{PanelDataset(n, T, std::move(y), std::move(X), {}, {}, {"x"}), std::move(alpha), {}};
    for (double tau : design.taus) out.beta_true_at.emplace(tau, true_beta(design, tau));
    return out;
}

/// y_it = alpha_i + rho y_{i,t-1} + e_it with e ~ chi-squared(4); the
/// regressor is the lagged response.
inline GeneratedPanel generate_dynamic(const SimulationDesign& design, RandomStream& rng) {
    design.validate();
    if (design.family != DesignFamily::Dynamic)
        throw Error(ErrorKind::InvalidArgument, "generate_dynamic needs the dynamic design");
    const std::size_t n = design.n, T = design.T;
    const auto N = static_cast<Eigen::Index>(n * T);
    Eigen::VectorXd y(N), alpha(static_cast<Eigen::Index>(n));
    Eigen::MatrixXd X(N, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.uniform();
        alpha[static_cast<Eigen::Index>(i)] = a;
        const auto path = autoregressive_path(a, design.rho, design.dynamic_burn_in, T, [&] { return rng.chi_squared(4); });
        for (std::size_t t = 0; t < T; ++t) {
            const auto k = static_cast<Eigen::Index>(i * T + t);
            X(k, 0) = path[t];
            y[k] = path[t + 1];
        }
    }
    GeneratedPanel out{PanelDataset(n, T, std::move(y), std::move(X), {}, {}, {"y_lag"}), std::move(alpha), {}};
    for (double tau : design.taus) out.beta_true_at.emplace(tau, true_beta(design, tau));
    return out;
}

inline GeneratedPanel generate_panel(const SimulationDesign& design, RandomStream& rng) {
    return design.family == DesignFamily::Dynamic ? generate_dynamic(design, rng) : generate_static(design, rng);
}

/// Panel number `rep` of a study, from its own substream.
inline GeneratedPanel generate_replication(const SimulationDesign& design, std::size_t rep) {
    RandomStream rng(derive_seed(design.seed, StreamPurpose::DataGeneration, rep));
    return generate_panel(design, rng);
}

inline constexpr CiMethod kCoverageMethods[] = {CiMethod::Percentile, CiMethod::BootSE, CiMethod::TRef,
                                                CiMethod::Asymptotic};

struct CoverageEntry {
    double tau = 0.5;
    CiMethod method = CiMethod::Percentile;
    std::size_t covered = 0;
    std::size_t reps_used = 0;
    double coverage = 0.0;
    double avg_width = 0.0;
    double mc_stderr = 0.0;
};

/// One (rep, tau) cell. Intervals that could not be formed are flagged.
struct ReplicationRecord {
    std::size_t rep = 0;
    double tau = 0.5;
    double truth = 0.0;
    double beta_hat = 0.0;
    double bootstrap_se = 0.0;
    std::size_t failed_replicates = 0;
    std::array<bool, 4> available{};
    std::array<double, 4> lower{};
    std::array<double, 4> upper{};
};

struct CoverageReport {
    SimulationDesign design;
    /// truths[k] is the true slope at design.taus[k].
    std::vector<double> truths;
    std::vector<CoverageEntry> entries;
    std::vector<ReplicationRecord> records;

    const CoverageEntry& entry(double tau, CiMethod method) const {
        for (const auto& e : entries)
            if (e.tau == tau && e.method == method) return e;
        throw Error(ErrorKind::InvalidArgument, "no coverage entry for this tau and method");
    }
};

struct CoverageOptions {
    unsigned threads = 1;
    WeightScheme scheme{WeightKind::ExponentialUnit};
    KernelOptions kernel{};
    SolverOptions solver{};
};

/// For every rep: generate a panel, fit, bootstrap and record whether each
/// interval contains the true slope. Deterministic in design.seed; reps run
/// concurrently on `threads` workers.
inline CoverageReport run_coverage_study(const SimulationDesign& design, const CoverageOptions& options = {}) {
    design.validate();
    const std::size_t K = design.taus.size();
    CoverageReport report;
    report.design = design;
    for (double tau : design.taus) report.truths.push_back(true_beta(design, tau)[0]);
    report.records.resize(design.reps * K);

    parallel_for(design.reps, options.threads, [&](std::size_t rep) {
        try {
            const GeneratedPanel panel = generate_replication(design, rep);
            const PanelDataset& data = panel.data;
            for (std::size_t k = 0; k < K; ++k) {
                const QuantileLevel tau(design.taus[k]);
                BootstrapOptions bo;
                bo.B = design.B;
                bo.scheme = options.scheme;
                bo.seed = derive_seed(design.seed, StreamPurpose::ReplicationBootstrap, rep * K + k);
                bo.threads = 1;
                bo.solver = options.solver;
                bo.replicate_se = powell_replicate_se(tau, options.kernel);
                const BootstrapResult boot = run_bootstrap(data, tau, bo);
                const QuantileFit& fit = boot.point_fit;

                ReplicationRecord& rec = report.records[rep * K + k];
                rec.rep = rep;
                rec.tau = design.taus[k];
                rec.truth = report.truths[k];
                rec.beta_hat = fit.beta[0];
                rec.failed_replicates = boot.failed_count;
                const CovarianceEstimate boot_cov = bootstrap_covariance(boot);
                rec.bootstrap_se = std::sqrt(boot_cov.sigma(0, 0));

                auto store = [&](std::size_t m, const ConfidenceInterval& ci) {
                    rec.available[m] = true;
                    rec.lower[m] = ci.lower[0];
                    rec.upper[m] = ci.upper[0];
                };
                store(0, percentile_ci(boot, design.level));
                store(1, se_ci(fit, boot_cov, design.level));
                try {
                    const Eigen::VectorXd se_hat = powell_standard_errors(data, fit, tau, options.kernel);
                    store(2, t_ref_ci(fit, boot, boot.replicate_ses, se_hat, design.level));
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::NonpositiveSE && e.kind() != ErrorKind::ZeroKernelMass &&
                        e.kind() != ErrorKind::SingularGamma && e.kind() != ErrorKind::NegativeDiagonal)
                        throw;
                }
                try {
                    const CovarianceEstimate sigma = kernel_sandwich_covariance(data, fit, tau, options.kernel);
                    store(3, at_ci(fit, sigma, data.observations(), design.level));
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::ZeroKernelMass && e.kind() != ErrorKind::SingularGamma &&
                        e.kind() != ErrorKind::NegativeDiagonal)
                        throw;
                }
            }
        } catch (const Error& e) {
            const std::string what = e.what();
            const std::string prefix = std::string(e.name()) + ": ";
            throw Error(e.kind(), "replication " + std::to_string(rep) + ": " +
                                      (what.starts_with(prefix) ? what.substr(prefix.size()) : what));
        }
    });

    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t m = 0; m < 4; ++m) {
            CoverageEntry entry;
            entry.tau = design.taus[k];
            entry.method = kCoverageMethods[m];
            double width = 0.0;
            for (std::size_t rep = 0; rep < design.reps; ++rep) {
                const ReplicationRecord& rec = report.records[rep * K + k];
                if (!rec.available[m]) continue;
                ++entry.reps_used;
                width += rec.upper[m] - rec.lower[m];
                if (rec.lower[m] <= rec.truth && rec.truth <= rec.upper[m]) ++entry.covered;
            }
            if (entry.reps_used > 0) {
                const double used = static_cast<double>(entry.reps_used);
                entry.coverage = static_cast<double>(entry.covered) / used;
                entry.avg_width = width / used;
                entry.mc_stderr = std::sqrt(entry.coverage * (1.0 - entry.coverage) / used);
            }
            report.entries.push_back(entry);
        }
    return report;
}

} // namespace panelqr
