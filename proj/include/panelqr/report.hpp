#pragma once

// Machine-readable (JSON, full precision) and tabular (CSV, 6 significant
// digits) renderings of fits, bootstrap inference and coverage studies.
// Requires nlohmann/json (json.hpp) on the include path.

#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "panelqr/bootstrap.hpp"
#include "panelqr/io.hpp"
#include "panelqr/kernel_covariance.hpp"
#include "panelqr/simulation.hpp"
#include "panelqr/solver.hpp"

namespace panelqr {

using Json = nlohmann::ordered_json;

inline constexpr const char* kToolName = "panelqr";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kSchemaVersion = "1.0";

namespace detail {

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json matrix_json(const Eigen::MatrixXd& m) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(number_or_null(m(r, c)));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline double sorted_quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    return empirical_quantile(v, q);
}

} // namespace detail

inline Json interval_json(const ConfidenceInterval& ci, const std::vector<std::string>& names) {
    Json coefs = Json::array();
    for (Eigen::Index j = 0; j < ci.lower.size(); ++j)
        coefs.push_back({{"name", names[static_cast<std::size_t>(j)]},
                         {"lower", detail::number_or_null(ci.lower[j])},
                         {"upper", detail::number_or_null(ci.upper[j])}});
    return {{"method", label(ci.method)}, {"level", ci.level}, {"coefficients", std::move(coefs)}};
}

/// Point estimates, a five-number summary of the intercepts and solver status.
inline Json fit_json(const QuantileFit& fit, const PanelDataset& data) {
    Json coefs = Json::array();
    for (std::size_t j = 0; j < data.p(); ++j)
        coefs.push_back({{"name", data.covariate_names()[j]}, {"estimate", fit.beta[static_cast<Eigen::Index>(j)]}});
    std::vector<double> a(fit.alpha.data(), fit.alpha.data() + fit.alpha.size());
    const auto& d = fit.diagnostics;
    return {{"tau", fit.tau.value()},
            {"coefficients", std::move(coefs)},
            {"intercepts",
             {{"min", detail::sorted_quantile(a, 0.0)},
              {"q25", detail::sorted_quantile(a, 0.25)},
              {"median", detail::sorted_quantile(a, 0.5)},
              {"q75", detail::sorted_quantile(a, 0.75)},
              {"max", detail::sorted_quantile(a, 1.0)}}},
            {"objective", fit.objective},
            {"diagnostics",
             {{"iterations", d.iterations},
              {"duality_gap", d.duality_gap},
              {"converged", d.converged},
              {"vertex_certified", d.vertex_certified},
              {"subgradient_satisfied", d.subgradient_report.satisfied}}}};
}

inline Json turning_point_json(const QuantileFit& fit, const PanelDataset& data, std::size_t linear, std::size_t quadratic) {
    const TurningPoint tp = turning_point(fit.beta[static_cast<Eigen::Index>(linear)], fit.beta[static_cast<Eigen::Index>(quadratic)]);
    return {{"linear", data.covariate_names()[linear]},
            {"quadratic", data.covariate_names()[quadratic]},
            {"value", tp.value},
            {"inverted_u", tp.inverted_u}};
}

/// Everything inference-related for one tau; the kernel-sandwich interval is
/// kept apart from the bootstrap intervals.
struct InferenceBundle {
    BootstrapResult boot;
    CovarianceEstimate boot_cov;
    std::vector<ConfidenceInterval> bootstrap_intervals;
    std::optional<CovarianceEstimate> kernel_cov;
    std::optional<ConfidenceInterval> asymptotic_interval;
    std::optional<WaldResult> wald_all_zero;
    std::vector<std::string> notes;
};

inline Json inference_json(const InferenceBundle& b, const PanelDataset& data) {
    const auto& names = data.covariate_names();
    Json intervals = Json::array();
    for (const auto& ci : b.bootstrap_intervals) intervals.push_back(interval_json(ci, names));
    Json se = Json::array();
    for (Eigen::Index j = 0; j < b.boot_cov.sigma.rows(); ++j)
        se.push_back(detail::number_or_null(std::sqrt(std::max(0.0, b.boot_cov.sigma(j, j)))));
    Json boot = {{"B", b.boot.B},
                 {"weights", b.boot.scheme.name()},
                 {"weights_descriptor", b.boot.scheme.descriptor()},
                 {"seed", b.boot.seed},
                 {"failed_replicates", b.boot.failed_count},
                 {"standard_errors", std::move(se)},
                 {"covariance", detail::matrix_json(b.boot_cov.sigma)},
                 {"intervals", std::move(intervals)}};
    if (b.wald_all_zero)
        boot["wald_all_slopes_zero"] = {{"statistic", b.wald_all_zero->statistic},
                                        {"dof", b.wald_all_zero->dof},
                                        {"p_value", b.wald_all_zero->p_value}};
    Json out = {{"bootstrap", std::move(boot)}};
    if (b.kernel_cov && b.asymptotic_interval)
        out["asymptotic"] = {{"covariance", detail::matrix_json(b.kernel_cov->sigma)},
                             {"tuning", b.kernel_cov->metadata},
                             {"interval", interval_json(*b.asymptotic_interval, names)}};
    else
        out["asymptotic"] = nullptr;
    if (!b.notes.empty()) out["notes"] = b.notes;
    return out;
}

/// tau,coefficient,method,level,estimate,lower,upper
inline void write_interval_table(std::ostream& out, const std::vector<QuantileFit>& fits,
                                 const std::vector<std::vector<ConfidenceInterval>>& intervals,
                                 const std::vector<std::string>& names) {
    out << "tau,coefficient,method,level,estimate,lower,upper\n";
    for (std::size_t k = 0; k < fits.size(); ++k)
        for (const auto& ci : intervals[k])
            for (Eigen::Index j = 0; j < ci.lower.size(); ++j)
                out << format_table(fits[k].tau.value()) << ',' << csv_escape(names[static_cast<std::size_t>(j)]) << ','
                    << label(ci.method) << ',' << format_table(ci.level) << ',' << format_table(fits[k].beta[j]) << ','
                    << format_table(ci.lower[j]) << ',' << format_table(ci.upper[j]) << '\n';
}

inline Json design_json(const SimulationDesign& d) {
    return {{"design", d.name()}, {"n", d.n},         {"T", d.T},        {"gamma", d.gamma},
            {"rho", d.rho},       {"theta", d.theta}, {"taus", d.taus},  {"reps", d.reps},
            {"B", d.B},           {"level", d.level}, {"seed", d.seed},  {"arma_burn_in", d.arma_burn_in},
            {"dynamic_burn_in", d.dynamic_burn_in}};
}

inline Json coverage_json(const CoverageReport& report, const CoverageOptions& options) {
    Json truths = Json::array();
    for (std::size_t k = 0; k < report.truths.size(); ++k)
        truths.push_back({{"tau", report.design.taus[k]}, {"beta", report.truths[k]}});
    Json entries = Json::array();
    for (const auto& e : report.entries)
        entries.push_back({{"tau", e.tau},
                           {"method", label(e.method)},
                           {"coverage", e.coverage},
                           {"avg_width", e.avg_width},
                           {"reps_used", e.reps_used},
                           {"covered", e.covered},
                           {"mc_stderr", e.mc_stderr}});
    return {{"schema_version", kSchemaVersion},
            {"command", "coverage"},
            {"provenance",
             {{"tool", kToolName},
              {"version", kToolVersion},
              {"weights", options.scheme.name()},
              {"vmode", to_string(options.kernel.mode)},
              {"bandwidth_alpha", options.kernel.alpha_level}}},
            {"design", design_json(report.design)},
            {"truths", std::move(truths)},
            {"coverage", std::move(entries)}};
}

/// tau,method,coverage,avg_width,reps_used,mc_stderr
inline void write_coverage_csv(std::ostream& out, const CoverageReport& report) {
    out << "tau,method,coverage,avg_width,reps_used,mc_stderr\n";
    for (const auto& e : report.entries)
        out << format_table(e.tau) << ',' << label(e.method) << ',' << format_table(e.coverage) << ','
            << format_table(e.avg_width) << ',' << e.reps_used << ',' << format_table(e.mc_stderr) << '\n';
}

} // namespace panelqr
