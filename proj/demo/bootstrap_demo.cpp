// Simulate a location-scale panel, fit three quartiles and print bootstrap
// intervals next to the kernel-sandwich interval.

#include <cstdio>

#include "panelqr/panelqr.hpp"

int main() {
    using namespace panelqr;
    SimulationDesign design = SimulationDesign::named("locscale");
    design.n = 50;
    design.T = 50;
    RandomStream rng(derive_seed(7, StreamPurpose::DataGeneration, 0));
    const GeneratedPanel panel = generate_panel(design, rng);

    std::printf("%-6s %-8s %-8s %-22s %-22s %-22s\n", "tau", "truth", "beta", "RWB.p", "RWB.se", "AT");
    for (double t : design.taus) {
        const QuantileLevel tau(t);
        BootstrapOptions options;
        options.B = 199;
        options.seed = 11;
        const BootstrapResult boot = run_bootstrap(panel.data, tau, options);
        const QuantileFit& fit = boot.point_fit;
        const auto p = percentile_ci(boot, 0.9);
        const auto se = se_ci(fit, bootstrap_covariance(boot), 0.9);
        const auto at = at_ci(fit, kernel_sandwich_covariance(panel.data, fit, tau), panel.data.observations(), 0.9);
        std::printf("%-6.2f %-8.4f %-8.4f [%7.4f, %7.4f]     [%7.4f, %7.4f]     [%7.4f, %7.4f]\n", t,
                    panel.beta_true_at.at(t)[0], fit.beta[0], p.lower[0], p.upper[0], se.lower[0], se.upper[0],
                    at.lower[0], at.upper[0]);
    }
}
