#pragma once

// Command line front end: fit, bootstrap, simulate, coverage.

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "panelqr/panelqr.hpp"
#include "panelqr/report.hpp"

namespace panelqr::cli {

struct DataArgs {
    std::string data;
    std::string unit = "unit";
    std::string time = "time";
    std::string y = "y";
    std::vector<std::string> x;
    std::vector<double> taus{0.5};
    std::string transforms;
    std::vector<std::string> turning;
    std::string out;
    std::string csv;
};

struct InferenceArgs {
    std::size_t B = 999;
    std::string weights = "exp";
    double level = 0.9;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string vmode = "indep";
};

struct SimulateArgs {
    std::string design = "loc";
    std::size_t n = 100;
    std::size_t T = 100;
    std::uint64_t seed = 1;
    std::string out;
};

struct CoverageArgs {
    std::string design = "loc";
    std::size_t n = 100;
    std::size_t T = 100;
    std::vector<double> taus{0.25, 0.5, 0.75};
    std::size_t reps = 200;
    std::size_t B = 299;
    double level = 0.9;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string weights = "exp";
    std::string vmode = "indep";
    bool full_scale = false;
    std::string out;
    std::string csv;
};

inline VarianceMode parse_vmode(const std::string& s) {
    if (s == "indep") return VarianceMode::Independent;
    if (s == "longrun") return VarianceMode::WithinUnitLongRun;
    throw Error(ErrorKind::InvalidArgument, "unknown --vmode '" + s + "' (expected indep or longrun)");
}

/// Writes to `path`, or to `fallback` when the path is empty.
inline void emit(const std::string& path, std::ostream& fallback, const std::string& text) {
    if (path.empty()) {
        fallback << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::InvalidArgument, "cannot write '" + path + "'");
    f << text;
}

inline void add_data_options(CLI::App& cmd, DataArgs& a) {
    cmd.add_option("--data", a.data, "Long-format CSV file")->required();
    cmd.add_option("--unit", a.unit, "Unit identifier column")->capture_default_str();
    cmd.add_option("--time", a.time, "Time column")->capture_default_str();
    cmd.add_option("--y", a.y, "Response column")->capture_default_str();
    cmd.add_option("--x", a.x, "Covariate columns, comma separated")->delimiter(',');
    cmd.add_option("--tau", a.taus, "Quantile levels, comma separated")->delimiter(',')->capture_default_str();
    cmd.add_option("--transforms", a.transforms, "Derived columns: col:op:new,... with op in {log,square,none}");
    cmd.add_option("--turning-point", a.turning, "Linear and quadratic covariate for the turning point")
        ->delimiter(',')
        ->expected(2);
    cmd.add_option("--out", a.out, "JSON output file (default: standard output)");
    cmd.add_option("--csv", a.csv, "CSV summary table file");
}

inline void add_inference_options(CLI::App& cmd, InferenceArgs& a) {
    cmd.add_option("--B", a.B, "Bootstrap replicates")->capture_default_str()->check(CLI::Range(2ul, 100000000ul));
    cmd.add_option("--weights", a.weights, "Weight scheme")->check(CLI::IsMember({"exp", "lognormal", "all-ones"}))->capture_default_str();
    cmd.add_option("--level", a.level, "Confidence level")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    cmd.add_option("--seed", a.seed, "Master seed")->capture_default_str();
    cmd.add_option("--threads", a.threads, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 1024u));
    cmd.add_option("--vmode", a.vmode, "Score variance for the kernel sandwich")
        ->check(CLI::IsMember({"indep", "longrun"}))
        ->capture_default_str();
}

struct LoadedData {
    PanelCsvSpec spec;
    PanelDataset data;
    std::vector<QuantileLevel> taus;
    std::optional<std::pair<std::size_t, std::size_t>> turning;
};

inline LoadedData load(const DataArgs& a) {
    PanelCsvSpec spec{a.data, a.unit, a.time, a.y, a.x, parse_transforms(a.transforms)};
    std::vector<QuantileLevel> taus;
    for (double t : a.taus) taus.emplace_back(t);
    if (taus.empty()) throw Error(ErrorKind::InvalidArgument, "--tau needs at least one level");
    std::optional<std::pair<std::size_t, std::size_t>> turning;
    if (!a.turning.empty()) {
        auto find = [&](const std::string& name) {
            for (std::size_t j = 0; j < a.x.size(); ++j)
                if (a.x[j] == name) return j;
            throw Error(ErrorKind::InvalidArgument, "--turning-point column '" + name + "' is not among --x");
        };
        turning = std::make_pair(find(a.turning[0]), find(a.turning[1]));
    }
    PanelDataset data = load_panel(spec);
    return {std::move(spec), std::move(data), std::move(taus), turning};
}

inline Json provenance(const DataArgs& a, const PanelCsvSpec& spec) {
    Json transforms = Json::array();
    for (const auto& t : spec.transforms)
        transforms.push_back({{"column", t.column},
                              {"op", t.op == TransformOp::Log ? "log" : t.op == TransformOp::Square ? "square" : "none"},
                              {"new_name", t.new_name}});
    return {{"tool", kToolName}, {"version", kToolVersion}, {"data", a.data},       {"unit", a.unit},
            {"time", a.time},    {"y", a.y},                {"x", a.x},             {"transforms", std::move(transforms)}};
}

inline Json panel_json(const PanelDataset& d) {
    return {{"n", d.n()}, {"T", d.T()}, {"p", d.p()}, {"covariates", d.covariate_names()}};
}

inline int cmd_fit(const DataArgs& a, std::ostream& out) {
    const LoadedData in = load(a);
    Json results = Json::array();
    std::vector<QuantileFit> fits;
    for (const auto& tau : in.taus) {
        QuantileFit fit = fit_feqr(in.data, tau);
        Json r = fit_json(fit, in.data);
        if (in.turning) r["turning_point"] = turning_point_json(fit, in.data, in.turning->first, in.turning->second);
        results.push_back(std::move(r));
        fits.push_back(std::move(fit));
    }
    Json report = {{"schema_version", kSchemaVersion},
                   {"command", "fit"},
                   {"provenance", provenance(a, in.spec)},
                   {"panel", panel_json(in.data)},
                   {"results", std::move(results)}};
    emit(a.out, out, report.dump(2) + "\n");
    if (!a.csv.empty()) {
        std::ostringstream table;
        table << "tau,coefficient,estimate,objective,converged\n";
        for (const auto& f : fits)
            for (std::size_t j = 0; j < in.data.p(); ++j)
                table << format_table(f.tau.value()) << ',' << csv_escape(in.data.covariate_names()[j]) << ','
                      << format_table(f.beta[static_cast<Eigen::Index>(j)]) << ',' << format_table(f.objective) << ','
                      << (f.diagnostics.converged ? "true" : "false") << '\n';
        emit(a.csv, out, table.str());
    }
    return 0;
}

/// Bootstrap intervals, bootstrap covariance, the kernel-sandwich interval
/// and a joint test that every slope is zero, for one quantile level.
inline InferenceBundle infer(const PanelDataset& data, QuantileLevel tau, const InferenceArgs& a, std::uint64_t seed) {
    KernelOptions kernel;
    kernel.mode = parse_vmode(a.vmode);
    BootstrapOptions bo;
    bo.B = a.B;
    bo.scheme = WeightScheme::parse(a.weights);
    bo.seed = seed;
    bo.threads = a.threads;
    bo.replicate_se = powell_replicate_se(tau, kernel);

    InferenceBundle b{run_bootstrap(data, tau, bo), {}, {}, {}, {}, {}, {}};
    const QuantileFit& fit = b.boot.point_fit;
    b.boot_cov = bootstrap_covariance(b.boot);
    b.bootstrap_intervals.push_back(percentile_ci(b.boot, a.level));
    b.bootstrap_intervals.push_back(se_ci(fit, b.boot_cov, a.level));
    try {
        const Eigen::VectorXd se_hat = powell_standard_errors(data, fit, tau, kernel);
        b.bootstrap_intervals.push_back(t_ref_ci(fit, b.boot, b.boot.replicate_ses, se_hat, a.level));
    } catch (const Error& e) {
        b.notes.push_back(std::string("RWB.t unavailable: ") + e.what());
    }
    try {
        b.kernel_cov = kernel_sandwich_covariance(data, fit, tau, kernel);
        b.asymptotic_interval = at_ci(fit, *b.kernel_cov, data.observations(), a.level);
    } catch (const Error& e) {
        b.kernel_cov.reset();
        b.notes.push_back(std::string("AT unavailable: ") + e.what());
    }
    if (data.p() > 0) {
        const auto p = static_cast<Eigen::Index>(data.p());
        try {
            b.wald_all_zero = wald_test(Eigen::MatrixXd::Identity(p, p), Eigen::VectorXd::Zero(p), fit, b.boot_cov);
        } catch (const Error& e) {
            b.notes.push_back(std::string("Wald test unavailable: ") + e.what());
        }
    }
    return b;
}

inline int cmd_bootstrap(const DataArgs& a, const InferenceArgs& ia, std::ostream& out) {
    const LoadedData in = load(a);
    Json results = Json::array();
    std::vector<QuantileFit> fits;
    std::vector<std::vector<ConfidenceInterval>> tables;
    for (std::size_t k = 0; k < in.taus.size(); ++k) {
        const std::uint64_t seed = in.taus.size() == 1 ? ia.seed : derive_seed(ia.seed, k);
        InferenceBundle b = infer(in.data, in.taus[k], ia, seed);
        Json r = fit_json(b.boot.point_fit, in.data);
        if (in.turning)
            r["turning_point"] = turning_point_json(b.boot.point_fit, in.data, in.turning->first, in.turning->second);
        r.update(inference_json(b, in.data));
        results.push_back(std::move(r));
        std::vector<ConfidenceInterval> rows = b.bootstrap_intervals;
        if (b.asymptotic_interval) rows.push_back(*b.asymptotic_interval);
        tables.push_back(std::move(rows));
        fits.push_back(b.boot.point_fit);
    }
    Json prov = provenance(a, in.spec);
    prov["seed"] = ia.seed;
    prov["B"] = ia.B;
    prov["weights"] = ia.weights;
    prov["level"] = ia.level;
    prov["vmode"] = ia.vmode;
    Json report = {{"schema_version", kSchemaVersion},
                   {"command", "bootstrap"},
                   {"provenance", std::move(prov)},
                   {"panel", panel_json(in.data)},
                   {"results", std::move(results)}};
    emit(a.out, out, report.dump(2) + "\n");
    if (!a.csv.empty()) {
        std::ostringstream table;
        write_interval_table(table, fits, tables, in.data.covariate_names());
        emit(a.csv, out, table.str());
    }
    return 0;
}

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
    SimulationDesign d = SimulationDesign::named(a.design);
    d.n = a.n;
    d.T = a.T;
    d.seed = a.seed;
    RandomStream rng(derive_seed(a.seed, StreamPurpose::DataGeneration, 0));
    const GeneratedPanel panel = generate_panel(d, rng);
    std::ostringstream csv;
    write_panel_csv(panel.data, csv);
    emit(a.out, out, csv.str());
    return 0;
}

inline int cmd_coverage(const CoverageArgs& a, std::ostream& out) {
    SimulationDesign d = SimulationDesign::named(a.design);
    d.n = a.n;
    d.T = a.T;
    d.taus = a.taus;
    d.reps = a.full_scale ? 1000 : a.reps;
    d.B = a.full_scale ? 999 : a.B;
    d.level = a.level;
    d.seed = a.seed;
    CoverageOptions options;
    options.threads = a.threads;
    options.scheme = WeightScheme::parse(a.weights);
    options.kernel.mode = parse_vmode(a.vmode);
    const CoverageReport report = run_coverage_study(d, options);
    emit(a.out, out, coverage_json(report, options).dump(2) + "\n");
    if (!a.csv.empty()) {
        std::ostringstream table;
        write_coverage_csv(table, report);
        emit(a.csv, out, table.str());
    }
    return 0;
}

/// Entry point; args excludes the program name. Results go to `out`,
/// diagnostics to `err`. Returns the process exit status.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Fixed-effects panel quantile regression with random-weighted bootstrap inference", "panelqr"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    DataArgs fit_args, boot_args;
    InferenceArgs inference;
    SimulateArgs sim;
    CoverageArgs cov;

    auto* fit = app.add_subcommand("fit", "Point estimates for each quantile level");
    add_data_options(*fit, fit_args);

    auto* boot = app.add_subcommand("bootstrap", "Point estimates with random-weighted bootstrap inference");
    add_data_options(*boot, boot_args);
    add_inference_options(*boot, inference);

    auto* simulate = app.add_subcommand("simulate", "Write one simulated panel as long-format CSV");
    simulate->add_option("--design", sim.design, "loc, locscale, locdep, locscaledep or dynamic")
        ->check(CLI::IsMember({"loc", "locscale", "locdep", "locscaledep", "dynamic"}))
        ->capture_default_str();
    simulate->add_option("--n", sim.n, "Units")->capture_default_str()->check(CLI::PositiveNumber);
    simulate->add_option("--T", sim.T, "Periods")->capture_default_str()->check(CLI::Range(2ul, 100000000ul));
    simulate->add_option("--seed", sim.seed, "Seed")->capture_default_str();
    simulate->add_option("--out", sim.out, "Output file (default: standard output)");

    auto* coverage = app.add_subcommand("coverage", "Monte Carlo coverage study");
    coverage->add_option("--design", cov.design, "loc, locscale, locdep, locscaledep or dynamic")
        ->check(CLI::IsMember({"loc", "locscale", "locdep", "locscaledep", "dynamic"}))
        ->capture_default_str();
    coverage->add_option("--n", cov.n, "Units")->capture_default_str()->check(CLI::PositiveNumber);
    coverage->add_option("--T", cov.T, "Periods")->capture_default_str()->check(CLI::Range(2ul, 100000000ul));
    coverage->add_option("--tau", cov.taus, "Quantile levels, comma separated")->delimiter(',')->capture_default_str();
    coverage->add_option("--reps", cov.reps, "Monte Carlo replications")->capture_default_str()->check(CLI::PositiveNumber);
    coverage->add_option("--B", cov.B, "Bootstrap replicates")->capture_default_str()->check(CLI::Range(2ul, 100000000ul));
    coverage->add_option("--level", cov.level, "Confidence level")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    coverage->add_option("--seed", cov.seed, "Master seed")->capture_default_str();
    coverage->add_option("--threads", cov.threads, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 1024u));
    coverage->add_option("--weights", cov.weights, "Weight scheme")
        ->check(CLI::IsMember({"exp", "lognormal", "all-ones"}))
        ->capture_default_str();
    coverage->add_option("--vmode", cov.vmode, "Score variance for the kernel sandwich")
        ->check(CLI::IsMember({"indep", "longrun"}))
        ->capture_default_str();
    coverage->add_flag("--full-scale", cov.full_scale, "1000 replications with B = 999");
    coverage->add_option("--out", cov.out, "JSON output file (default: standard output)");
    coverage->add_option("--csv", cov.csv, "Coverage table CSV file");

    try {
        app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (fit->parsed()) return cmd_fit(fit_args, out);
        if (boot->parsed()) return cmd_bootstrap(boot_args, inference, out);
        if (simulate->parsed()) return cmd_simulate(sim, out);
        if (coverage->parsed()) return cmd_coverage(cov, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

} // namespace panelqr::cli
